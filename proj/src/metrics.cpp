#include "nafssr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"

namespace nafssr {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shapes differ: " + a.shape().str() + " vs " + b.shape().str());
}

std::array<double, 11> gaussian_window() {
    std::array<double, 11> g{};
    double total = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

// Valid-region separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::array<double, 11>& g) {
    const int oh = h - 10, ow = w - 10;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < 11; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < 11; ++k) acc += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same(a, b, "psnr");
    const auto va = a.values(), vb = b.values();
    double se = 0;
    for (std::size_t i = 0; i < va.size(); ++i) {
        const double d = double(va[i]) - double(vb[i]);
        se += d * d;
    }
    const double mse = se / double(va.size());
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10 * std::log10(1 / mse));
}

double ssim(const Image& a, const Image& b) {
    require_same(a, b, "ssim");
    const Shape s = a.shape();
    if (s.h < 11 || s.w < 11) throw ShapeError("ssim: images must be at least 11x11, got " + s.str());
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto g = gaussian_window();
    const std::size_t plane = s.plane();
    double total = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
            const float* pa = a.data() + a.index(n, c, 0, 0);
            const float* pb = b.data() + b.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                x[i] = pa[i];
                y[i] = pb[i];
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
            const auto mx = filter_valid(x, s.h, s.w, g), my = filter_valid(y, s.h, s.w, g);
            const auto sxx = filter_valid(xx, s.h, s.w, g), syy = filter_valid(yy, s.h, s.w, g);
            const auto sxy = filter_valid(xy, s.h, s.w, g);
            double acc = 0;
            for (std::size_t i = 0; i < mx.size(); ++i) {
                const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
                const double cov = sxy[i] - mx[i] * my[i];
                acc += ((2 * mx[i] * my[i] + C1) * (2 * cov + C2)) /
                       ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
            }
            total += acc / double(mx.size());
        }
    return total / double(s.n * s.c);
}

Image crop_left(const Image& img, int columns) {
    const Shape s = img.shape();
    if (columns < 0 || columns >= s.w)
        throw ShapeError("crop_left: cannot drop " + std::to_string(columns) + " columns from " + s.str());
    Image out(Shape{s.n, s.c, s.h, s.w - columns});
    auto v = out.mutable_values();
    std::size_t k = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = columns; x < s.w; ++x) v[k++] = img.at(n, c, y, x);
    return out;
}

std::pair<double, double> MetricReport::mean(const std::string& mode) const {
    double p = 0, q = 0;
    int count = 0;
    for (const auto& s : scores)
        if (s.mode == mode) {
            p += s.psnr;
            q += s.ssim;
            ++count;
        }
    if (count == 0) return {0, 0};
    return {p / count, q / count};
}

void MetricReport::write_table(std::ostream& os) const {
    os << "# dataset " << dataset << "  scale x" << scale << "  policy " << policy;
    if (!label.empty()) os << "  label " << label;
    os << '\n';
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %-14s %10s %8s\n", "id", "mode", "psnr", "ssim");
    os << line;
    for (const auto& s : scores) {
        std::snprintf(line, sizeof line, "%-28s %-14s %10.4f %8.5f\n", s.id.c_str(), s.mode.c_str(), s.psnr, s.ssim);
        os << line;
    }
    for (const char* mode : {"left_crop64", "pair_average"}) {
        bool any = false;
        for (const auto& s : scores) any = any || s.mode == mode;
        if (!any) continue;
        const auto [p, q] = mean(mode);
        std::snprintf(line, sizeof line, "%-28s %-14s %10.4f %8.5f\n", "MEAN", mode, p, q);
        os << line;
    }
}

void MetricReport::write_jsonl(std::ostream& os) const {
    for (const auto& s : scores) {
        nlohmann::json j;
        j["id"] = s.id;
        j["mode"] = s.mode;
        j["psnr"] = s.psnr;
        j["ssim"] = s.ssim;
        j["policy"] = policy;
        j["scale"] = scale;
        if (!label.empty()) j["label"] = label;
        os << j.dump() << '\n';
    }
}

MetricReport evaluate_with(const Manifest& manifest, const Predictor& predict, const EvalProtocol& protocol,
                           const std::string& policy) {
    MetricReport report;
    report.dataset = manifest.dir.string();
    report.policy = policy;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const StereoSample sample = manifest.load(i);
        if (report.scale == 0) report.scale = manifest.records[i].scale;
        if (protocol.left_crop64 && sample.hr_l.shape().w <= 64)
            throw ShapeError(sample.id + ": left_crop64 needs images wider than 64 pixels, got " +
                             sample.hr_l.shape().str());
        const auto [sr_l, sr_r] = predict(sample);
        if (protocol.left_crop64) {
            const Image a = crop_left(sr_l, 64), b = crop_left(sample.hr_l, 64);
            report.scores.push_back({sample.id, "left_crop64", psnr(a, b), ssim(a, b)});
        }
        if (protocol.pair_average) {
            ImageScore s{sample.id, "pair_average", 0, 0};
            if (protocol.pair_mode == PairMode::mean_of_views) {
                s.psnr = (psnr(sr_l, sample.hr_l) + psnr(sr_r, sample.hr_r)) / 2;
                s.ssim = (ssim(sr_l, sample.hr_l) + ssim(sr_r, sample.hr_r)) / 2;
            } else {
                NoGradGuard guard;
                const Image sr = scale(add(sr_l, sr_r), 0.5f), hr = scale(add(sample.hr_l, sample.hr_r), 0.5f);
                s.psnr = psnr(sr, hr);
                s.ssim = ssim(sr, hr);
            }
            report.scores.push_back(s);
        }
    }
    return report;
}

StereoPair<float> infer(const ModelConfig& cfg, const ParamStore<float>& params, const Image& lr_l,
                        const Image& lr_r, const PoolingPolicy& pool) {
    NoGradGuard guard;
    return model_forward(cfg, params, lr_l, lr_r, ForwardOptions::eval(pool));
}

StereoPair<float> self_ensemble_infer(const ModelConfig& cfg, const ParamStore<float>& params, const Image& lr_l,
                                      const Image& lr_r, const PoolingPolicy& pool,
                                      const std::vector<Transform>& transforms, std::vector<std::string>* members) {
    if (transforms.empty()) throw std::invalid_argument("self_ensemble_infer: empty transform set");
    NoGradGuard guard;
    std::vector<double> acc_l, acc_r;
    Shape out_shape;
    for (const Transform& t : transforms) {
        const auto [in_l, in_r] = apply_transform(lr_l, lr_r, t);
        const auto [o_l, o_r] = infer(cfg, params, in_l, in_r, pool);
        const auto [b_l, b_r] = apply_transform(o_l, o_r, t.inverse());
        if (acc_l.empty()) {
            out_shape = b_l.shape();
            acc_l.assign(b_l.numel(), 0.0);
            acc_r.assign(b_r.numel(), 0.0);
        }
        for (std::size_t i = 0; i < acc_l.size(); ++i) acc_l[i] += b_l.values()[i];
        for (std::size_t i = 0; i < acc_r.size(); ++i) acc_r[i] += b_r.values()[i];
        if (members) members->push_back(t.str());
    }
    auto finish = [&](const std::vector<double>& acc) {
        std::vector<float> v(acc.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(acc[i] / double(transforms.size()));
        return Image(out_shape, std::move(v));
    };
    return {finish(acc_l), finish(acc_r)};
}

StereoPair<float> average_outputs(const std::vector<EnsembleMember>& members, const Image& lr_l, const Image& lr_r,
                                  const PoolingPolicy& pool) {
    if (members.empty()) throw std::invalid_argument("average_outputs: no checkpoints");
    for (const auto& m : members)
        if (m.cfg.scale != members[0].cfg.scale)
            throw std::invalid_argument("average_outputs: members disagree on scale (x" + std::to_string(m.cfg.scale) +
                                        " vs x" + std::to_string(members[0].cfg.scale) + ")");
    if (members.size() == 1) return infer(members[0].cfg, *members[0].params, lr_l, lr_r, pool);
    std::vector<double> acc_l, acc_r;
    Shape out_shape;
    for (const auto& m : members) {
        const auto [o_l, o_r] = infer(m.cfg, *m.params, lr_l, lr_r, pool);
        if (acc_l.empty()) {
            out_shape = o_l.shape();
            acc_l.assign(o_l.numel(), 0.0);
            acc_r.assign(o_r.numel(), 0.0);
        }
        for (std::size_t i = 0; i < acc_l.size(); ++i) acc_l[i] += o_l.values()[i];
        for (std::size_t i = 0; i < acc_r.size(); ++i) acc_r[i] += o_r.values()[i];
    }
    auto finish = [&](const std::vector<double>& acc) {
        std::vector<float> v(acc.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(acc[i] / double(members.size()));
        return Image(out_shape, std::move(v));
    };
    return {finish(acc_l), finish(acc_r)};
}

MetricReport evaluate(const ModelConfig& cfg, const ParamStore<float>& params, const Manifest& manifest,
                      const EvalProtocol& protocol, const PoolingPolicy& pool, bool self_ensemble) {
    for (const auto& r : manifest.records)
        if (r.scale != cfg.scale)
            throw std::invalid_argument(r.id + ": dataset scale x" + std::to_string(r.scale) +
                                        " does not match checkpoint scale x" + std::to_string(cfg.scale));
    Predictor predict = [&](const StereoSample& s) {
        return self_ensemble ? self_ensemble_infer(cfg, params, s.lr_l, s.lr_r, pool)
                             : infer(cfg, params, s.lr_l, s.lr_r, pool);
    };
    MetricReport report = evaluate_with(manifest, predict, protocol, pool.str());
    report.scale = cfg.scale;
    return report;
}

}  // namespace nafssr
