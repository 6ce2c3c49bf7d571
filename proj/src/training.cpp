#include "nafssr/training.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <malloc.h>
#include <ostream>
#include <sstream>

namespace nafssr {

void TrainConfig::validate() const {
    if (!(lr_final < lr_init)) throw std::invalid_argument("lr_final must be below lr_init");
    if (!(drop_prob >= 0 && drop_prob < 1)) throw std::invalid_argument("drop_prob must lie in [0, 1)");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas must lie in [0, 1)");
    if (iters < 0 || batch < 1) throw std::invalid_argument("iters must be >= 0 and batch >= 1");
    if (patch_h < 1 || patch_w < 1 || stride < 1) throw std::invalid_argument("patch and stride must be positive");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& sr_l, const Tensor<T>& sr_r, const Tensor<T>& hr_l, const Tensor<T>& hr_r) {
    if (sr_l.shape() != hr_l.shape() || sr_r.shape() != hr_r.shape())
        throw ShapeError("l1_loss: prediction " + sr_l.shape().str() + "/" + sr_r.shape().str() +
                         " vs target " + hr_l.shape().str() + "/" + hr_r.shape().str());
    return add(mean(abs(sub(sr_l, hr_l))), mean(abs(sub(sr_r, hr_r))));
}

double cosine_lr(int t, const TrainConfig& cfg) {
    if (t <= 0 || cfg.iters <= 0) return cfg.lr_init;
    if (t >= cfg.iters) return cfg.lr_final;
    return cfg.lr_final + (cfg.lr_init - cfg.lr_final) * (1 + std::cos(M_PI * t / cfg.iters)) / 2;
}

template <typename T>
bool adamw_step(ParamStore<T>& store, double lr, const TrainConfig& cfg, std::int64_t step) {
    for (const auto& e : store.entries())
        for (T g : e.value.grad())
            if (!std::isfinite(g)) return false;

    const double bc1 = 1 - std::pow(cfg.beta1, double(step));
    const double bc2 = 1 - std::pow(cfg.beta2, double(step));
    const double decay = 1 - lr * cfg.weight_decay;
    for (auto& e : store.entries()) {
        const auto g = e.value.grad();
        if (g.empty()) continue;
        auto p = e.value.mutable_values();
        if (e.exp_avg.empty()) {
            e.exp_avg.assign(p.size(), T(0));
            e.exp_avg_sq.assign(p.size(), T(0));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double m = cfg.beta1 * e.exp_avg[i] + (1 - cfg.beta1) * gi;
            const double v = cfg.beta2 * e.exp_avg_sq[i] + (1 - cfg.beta2) * gi * gi;
            e.exp_avg[i] = static_cast<T>(m);
            e.exp_avg_sq[i] = static_cast<T>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            p[i] = static_cast<T>(p[i] * decay - lr * update);
        }
    }
    return true;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'A', 'F', 'S', 'S', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
  public:
    template <typename V>
    void put(V v) {
        static_assert(std::is_trivially_copyable_v<V>);
        char b[sizeof(V)];
        std::memcpy(b, &v, sizeof(V));
        out_.append(b, sizeof(V));
    }
    void str(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void floats(const std::vector<float>& v) {
        put<std::uint64_t>(v.size());
        out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    void floats(std::span<const float> v) {
        put<std::uint64_t>(v.size());
        out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    std::string take() { return std::move(out_); }

  private:
    std::string out_;
};

class Reader {
  public:
    Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}

    template <typename V>
    V get() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, b_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    std::string str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<float> floats() {
        const auto n = get<std::uint64_t>();
        need(n * sizeof(float));
        std::vector<float> v(n);
        std::memcpy(v.data(), b_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
        return v;
    }
    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, b_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == b_.size(); }
    [[noreturn]] void fail(const std::string& what) const { throw DataError(origin_ + ": " + what); }

  private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) fail("truncated checkpoint");
    }
    const std::string& b_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const TrainState& st) {
    Writer w;
    for (char c : kMagic) w.put(c);
    w.put(kVersion);
    const ModelConfig& m = st.model;
    w.put<std::int32_t>(m.width);
    w.put<std::int32_t>(m.blocks);
    w.put<std::int32_t>(m.scale);
    w.put<std::int32_t>(m.scam_count);
    w.put<double>(m.drop_prob);
    w.put<std::uint8_t>(m.tlsc_window ? 1 : 0);
    w.put<std::int32_t>(m.tlsc_window ? m.tlsc_window->h : 0);
    w.put<std::int32_t>(m.tlsc_window ? m.tlsc_window->w : 0);
    w.put<std::int64_t>(st.iteration);
    w.put<std::int64_t>(st.optimizer_step);
    w.put<std::int32_t>(st.patch_h);
    w.put<std::int32_t>(st.patch_w);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(st.params.size()));
    for (const auto& e : st.params.entries()) {
        w.str(e.name);
        w.put(kFloat32);
        const Shape s = e.value.shape();
        for (int d : {s.n, s.c, s.h, s.w}) w.put<std::int32_t>(d);
        w.floats(e.value.values());
        w.floats(e.exp_avg);
        w.floats(e.exp_avg_sq);
    }
    w.str(st.rng_state);
    return w.take();
}

TrainState deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
    Reader r(bytes, origin);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint (bad magic)");
    if (const auto v = r.get<std::uint32_t>(); v != kVersion) r.fail("unsupported checkpoint version " + std::to_string(v));
    TrainState st;
    ModelConfig& m = st.model;
    m.width = r.get<std::int32_t>();
    m.blocks = r.get<std::int32_t>();
    m.scale = r.get<std::int32_t>();
    m.scam_count = r.get<std::int32_t>();
    m.drop_prob = r.get<double>();
    const bool has_window = r.get<std::uint8_t>() != 0;
    const int wh = r.get<std::int32_t>(), ww = r.get<std::int32_t>();
    if (has_window) m.tlsc_window = PoolWindow{wh, ww};
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        r.fail(std::string("invalid model config: ") + e.what());
    }
    st.iteration = r.get<std::int64_t>();
    st.optimizer_step = r.get<std::int64_t>();
    st.patch_h = r.get<std::int32_t>();
    st.patch_w = r.get<std::int32_t>();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        if (r.get<std::uint8_t>() != kFloat32) r.fail(name + ": unsupported dtype");
        Shape s;
        s.n = r.get<std::int32_t>();
        s.c = r.get<std::int32_t>();
        s.h = r.get<std::int32_t>();
        s.w = r.get<std::int32_t>();
        auto values = r.floats();
        if (values.size() != s.numel()) r.fail(name + ": payload does not match dims " + s.str());
        auto m1 = r.floats();
        auto m2 = r.floats();
        if ((!m1.empty() && m1.size() != s.numel()) || m2.size() != m1.size()) r.fail(name + ": bad optimizer slots");
        st.params.add(name, Tensor<float>(s, std::move(values)));
        auto& e = st.params.entry(name);
        e.exp_avg = std::move(m1);
        e.exp_avg_sq = std::move(m2);
    }
    st.rng_state = r.str();
    if (!r.done()) r.fail("trailing bytes after checkpoint");
    if (st.params.count() != expected_param_count(m)) r.fail("parameter count does not match the stored model config");
    return st;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const std::string bytes = serialize_checkpoint(state);
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": cannot write checkpoint");
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open checkpoint");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str(), path.string());
}

// --- trainer ----------------------------------------------------------------

std::vector<StereoSample> build_patch_pool(const Manifest& manifest, int patch_h, int patch_w, int stride) {
    std::vector<StereoSample> pool;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const StereoSample s = manifest.load(i);
        PatchSet set = extract_patches(s, patch_h, patch_w, stride);
        if (set.undersized)
            throw DataError(manifest.records[i].lr_l.string() + ": smaller than the " + std::to_string(patch_h) + "x" +
                            std::to_string(patch_w) + " training patch");
        for (auto& p : set.patches) pool.push_back(std::move(p));
    }
    if (pool.empty()) throw DataError((manifest.dir / "manifest").string() + ": no training samples");
    return pool;
}

Trainer::Trainer(TrainConfig cfg, ModelConfig model, std::vector<StereoSample> pool)
    : cfg_(std::move(cfg)), model_(std::move(model)), pool_(std::move(pool)), drop_rng_(cfg_.seed, "drop") {
    cfg_.validate();
    model_.drop_prob = cfg_.drop_prob;
    model_.validate();
    if (pool_.empty()) throw DataError("training pool is empty");
    params_ = build_model<float>(model_, cfg_.seed);
}

Trainer::Trainer(TrainConfig cfg, TrainState state, std::vector<StereoSample> pool)
    : cfg_(std::move(cfg)), model_(state.model), params_(std::move(state.params)), pool_(std::move(pool)),
      drop_rng_(cfg_.seed, "drop") {
    cfg_.validate();
    if (pool_.empty()) throw DataError("training pool is empty");
    iteration_ = state.iteration;
    optimizer_step_ = state.optimizer_step;
    drop_rng_.set_state(state.rng_state);
}

StereoSample Trainer::sample_at(std::int64_t k) {
    const std::int64_t n = static_cast<std::int64_t>(pool_.size());
    const std::int64_t epoch = k / n;
    if (epoch != cached_epoch_) {
        order_.resize(pool_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        Rng rng(cfg_.seed, "order", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
        cached_epoch_ = epoch;
    }
    Rng aug(cfg_.seed, "augment", static_cast<std::uint64_t>(k));
    return augment(pool_[order_[static_cast<std::size_t>(k % n)]], cfg_.augment, aug);
}

double Trainer::step() {
    const int t = static_cast<int>(iteration_);
    std::vector<Tensor<float>> lr_l, lr_r, hr_l, hr_r;
    for (int b = 0; b < cfg_.batch; ++b) {
        StereoSample s = sample_at(iteration_ * cfg_.batch + b);
        lr_l.push_back(std::move(s.lr_l));
        lr_r.push_back(std::move(s.lr_r));
        hr_l.push_back(std::move(s.hr_l));
        hr_r.push_back(std::move(s.hr_r));
    }
    auto cat = [](const std::vector<Tensor<float>>& v) { return concat_batch<float>(v); };

    params_.zero_grad();
    const auto [sr_l, sr_r] = model_forward(model_, params_, cat(lr_l), cat(lr_r),
                                            ForwardOptions::training(cfg_.drop_prob, drop_rng_));
    const Tensor<float> loss = l1_loss(sr_l, sr_r, cat(hr_l), cat(hr_r));
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericalError("non-finite loss at iteration " + std::to_string(t));
    loss.backward();
    if (adamw_step(params_, cosine_lr(t, cfg_), cfg_, optimizer_step_ + 1))
        ++optimizer_step_;
    else
        ++rejected_;
    ++iteration_;
    return value;
}

void Trainer::run(std::ostream* log, const std::filesystem::path& out_dir,
                  const std::function<void(std::int64_t, double)>& on_step) {
    char line[96];
    while (iteration_ < cfg_.iters) {
        const std::int64_t t = iteration_;
        const std::size_t rejected_before = rejected_;
        const double loss = step();
        if (log) {
            std::snprintf(line, sizeof line, "%lld %.9g %.9g\n", static_cast<long long>(t),
                          cosine_lr(static_cast<int>(t), cfg_), loss);
            *log << line;
            if (rejected_ != rejected_before) *log << "# step " << t << " rejected: non-finite gradient\n";
            log->flush();
        }
        if (on_step) on_step(t, loss);
        if (!out_dir.empty() && cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0) {
            std::snprintf(line, sizeof line, "ckpt_%06lld.bin", static_cast<long long>(iteration_));
            save_checkpoint(out_dir / line, state());
        }
    }
    if (!out_dir.empty()) save_checkpoint(out_dir / "final.bin", state());
}

TrainState Trainer::state() const {
    TrainState st;
    st.model = model_;
    st.params = params_.clone();
    st.iteration = iteration_;
    st.optimizer_step = optimizer_step_;
    st.patch_h = cfg_.patch_h;
    st.patch_w = cfg_.patch_w;
    st.rng_state = drop_rng_.state();
    return st;
}

template Tensor<float> l1_loss<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&);
template Tensor<double> l1_loss<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&);
template bool adamw_step<float>(ParamStore<float>&, double, const TrainConfig&, std::int64_t);
template bool adamw_step<double>(ParamStore<double>&, double, const TrainConfig&, std::int64_t);

void retain_heap_memory() {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
}

}  // namespace nafssr
