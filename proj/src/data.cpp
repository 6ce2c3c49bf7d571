#include "nafssr/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nafssr {

namespace fs = std::filesystem;

void StereoSample::validate(int s) const {
    const Shape l = lr_l.shape();
    if (l.n != 1 || l.c != 3) throw DataError(id + ": LR left view must be (1,3,h,w), got " + l.str());
    if (lr_r.shape() != l) throw DataError(id + ": LR views differ: " + l.str() + " vs " + lr_r.shape().str());
    const Shape want{1, 3, l.h * s, l.w * s};
    if (hr_l.shape() != want || hr_r.shape() != want)
        throw DataError(id + ": HR views " + hr_l.shape().str() + ", " + hr_r.shape().str() + " do not match " +
                        want.str() + " at scale " + std::to_string(s));
}

Image load_png(const fs::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw DataError(path.string() + ": cannot read PNG: " + img.message);
    const auto fmt = img.format;
    if (!(fmt & PNG_FORMAT_FLAG_COLOR) || (fmt & PNG_FORMAT_FLAG_ALPHA) || (fmt & PNG_FORMAT_FLAG_LINEAR)) {
        png_image_free(&img);
        throw DataError(path.string() + ": expected an 8-bit RGB PNG");
    }
    img.format = PNG_FORMAT_RGB;
    const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
        throw DataError(path.string() + ": corrupt PNG: " + img.message);

    Image out(Shape{1, 3, h, w});
    auto v = out.mutable_values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) v[c * plane + p] = buf[p * 3 + c] / 255.0f;
    return out;
}

void save_png(const fs::path& path, const Image& img) {
    const Shape s = img.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("save_png: expected (1,3,h,w), got " + s.str());
    const std::size_t plane = s.plane();
    std::vector<png_byte> buf(plane * 3);
    const auto v = img.values();
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) {
            const double q = std::floor(double(v[c * plane + p]) * 255.0 + 0.5);
            buf[p * 3 + c] = static_cast<png_byte>(std::clamp(q, 0.0, 255.0));
        }
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(s.w);
    pi.height = static_cast<png_uint_32>(s.h);
    pi.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw DataError(path.string() + ": cannot write PNG: " + pi.message);
}

namespace {

double keys_cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
    if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
    return 0;
}

// Dense (out x in) resampling matrix for one axis, rows normalized.
std::vector<double> downsample_weights(int in, int s) {
    const int out = in / s;
    std::vector<double> m(static_cast<std::size_t>(out) * in, 0.0);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) * s - 0.5;
        const int lo = static_cast<int>(std::ceil(center - 2.0 * s));
        const int hi = static_cast<int>(std::floor(center + 2.0 * s));
        double total = 0;
        std::vector<double> row(in, 0.0);
        for (int j = lo; j <= hi; ++j) {
            const double wgt = keys_cubic((j - center) / s);
            if (wgt == 0) continue;
            row[std::clamp(j, 0, in - 1)] += wgt;
            total += wgt;
        }
        for (int j = 0; j < in; ++j) m[static_cast<std::size_t>(o) * in + j] = row[j] / total;
    }
    return m;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
    const Shape s = img.shape();
    Image out(Shape{s.n, s.c, h, w});
    auto v = out.mutable_values();
    const auto src = img.values();
    std::size_t k = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < h; ++y) {
                const std::size_t off = img.index(n, c, y0 + y, x0);
                std::copy_n(src.begin() + off, w, v.begin() + k);
                k += w;
            }
    return out;
}

}  // namespace

Image bicubic_downsample(const Image& hr, int s) {
    const Shape hs = hr.shape();
    if (s < 1) throw std::invalid_argument("bicubic_downsample: scale must be positive");
    if (hs.h % s || hs.w % s)
        throw ShapeError("bicubic_downsample: " + hs.str() + " not divisible by " + std::to_string(s));
    const int oh = hs.h / s, ow = hs.w / s;
    const auto wy = downsample_weights(hs.h, s);
    const auto wx = downsample_weights(hs.w, s);

    Image out(Shape{hs.n, hs.c, oh, ow});
    auto ov = out.mutable_values();
    const auto src = hr.values();
    std::vector<double> rows(static_cast<std::size_t>(hs.h) * ow);
    for (int n = 0; n < hs.n; ++n)
        for (int c = 0; c < hs.c; ++c) {
            const float* p = src.data() + hr.index(n, c, 0, 0);
            for (int y = 0; y < hs.h; ++y)
                for (int o = 0; o < ow; ++o) {
                    const double* wr = wx.data() + static_cast<std::size_t>(o) * hs.w;
                    double acc = 0;
                    for (int x = 0; x < hs.w; ++x)
                        if (wr[x] != 0) acc += wr[x] * p[y * hs.w + x];
                    rows[static_cast<std::size_t>(y) * ow + o] = acc;
                }
            for (int o = 0; o < oh; ++o) {
                const double* wc = wy.data() + static_cast<std::size_t>(o) * hs.h;
                for (int x = 0; x < ow; ++x) {
                    double acc = 0;
                    for (int y = 0; y < hs.h; ++y)
                        if (wc[y] != 0) acc += wc[y] * rows[static_cast<std::size_t>(y) * ow + x];
                    ov[out.index(n, c, o, x)] = static_cast<float>(acc);
                }
            }
        }
    return out;
}

PatchSet extract_patches(const StereoSample& sample, int patch_h, int patch_w, int stride) {
    if (patch_h <= 0 || patch_w <= 0 || stride <= 0)
        throw std::invalid_argument("extract_patches: patch and stride must be positive");
    const int s = sample.scale();
    sample.validate(s);
    const Shape ls = sample.lr_l.shape();
    PatchSet set;
    if (ls.h < patch_h || ls.w < patch_w) {
        set.undersized = true;
        return set;
    }
    const int ny = (ls.h - patch_h) / stride + 1;
    const int nx = (ls.w - patch_w) / stride + 1;
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
            const int y0 = iy * stride, x0 = ix * stride;
            StereoSample p;
            p.lr_l = crop(sample.lr_l, y0, x0, patch_h, patch_w);
            p.lr_r = crop(sample.lr_r, y0, x0, patch_h, patch_w);
            p.hr_l = crop(sample.hr_l, y0 * s, x0 * s, patch_h * s, patch_w * s);
            p.hr_r = crop(sample.hr_r, y0 * s, x0 * s, patch_h * s, patch_w * s);
            p.id = sample.id + "@" + std::to_string(y0) + "," + std::to_string(x0);
            set.patches.push_back(std::move(p));
        }
    return set;
}

Image flip_horizontal(const Image& img) {
    const Shape s = img.shape();
    Image out(s);
    auto v = out.mutable_values();
    const auto src = img.values();
    for (std::size_t row = 0; row < static_cast<std::size_t>(s.n) * s.c * s.h; ++row)
        std::reverse_copy(src.begin() + row * s.w, src.begin() + (row + 1) * s.w, v.begin() + row * s.w);
    return out;
}

Image flip_vertical(const Image& img) {
    const Shape s = img.shape();
    Image out(s);
    auto v = out.mutable_values();
    const auto src = img.values();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                std::copy_n(src.begin() + img.index(n, c, s.h - 1 - y, 0), s.w, v.begin() + img.index(n, c, y, 0));
    return out;
}

Image permute_channels(const Image& img, const std::array<int, 3>& perm) {
    const Shape s = img.shape();
    if (s.c != 3) throw ShapeError("permute_channels: expected 3 channels, got " + s.str());
    Image out(s);
    auto v = out.mutable_values();
    const auto src = img.values();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < 3; ++c)
            std::copy_n(src.begin() + img.index(n, perm[c], 0, 0), s.plane(), v.begin() + img.index(n, c, 0, 0));
    return out;
}

Transform Transform::inverse() const {
    Transform t = *this;
    for (int k = 0; k < 3; ++k) t.perm[perm[k]] = k;
    return t;
}

std::vector<Transform> Transform::all() {
    std::vector<Transform> out;
    std::array<int, 3> perm{0, 1, 2};
    std::vector<std::array<int, 3>> perms;
    do perms.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));
    for (bool v : {false, true})
        for (bool h : {false, true})
            for (const auto& p : perms) out.push_back(Transform{v, h, p});
    return out;
}

std::string Transform::str() const {
    std::ostringstream os;
    os << (vflip ? 'V' : '-') << (hflip ? 'H' : '-') << perm[0] << perm[1] << perm[2];
    return os.str();
}

std::pair<Image, Image> apply_transform(const Image& l, const Image& r, const Transform& t) {
    Image a = l, b = r;
    if (t.vflip) {
        a = flip_vertical(a);
        b = flip_vertical(b);
    }
    if (t.hflip) {
        Image na = flip_horizontal(b);
        b = flip_horizontal(a);
        a = std::move(na);
    }
    if (t.perm != std::array<int, 3>{0, 1, 2}) {
        a = permute_channels(a, t.perm);
        b = permute_channels(b, t.perm);
    }
    return {a, b};
}

StereoSample apply_transform(const StereoSample& s, const Transform& t) {
    StereoSample out;
    std::tie(out.lr_l, out.lr_r) = apply_transform(s.lr_l, s.lr_r, t);
    std::tie(out.hr_l, out.hr_r) = apply_transform(s.hr_l, s.hr_r, t);
    out.id = s.id;
    return out;
}

Transform draw_transform(const AugmentationConfig& cfg, Rng& rng) {
    // Every draw is consumed whether or not its switch is on, so toggling one
    // augmentation leaves the others' decisions unchanged.
    const bool v = rng.coin();
    const bool h = rng.coin();
    const bool shuffle = rng.coin();
    const auto pick = rng.below(6);
    Transform t;
    t.vflip = cfg.vflip && v;
    t.hflip = cfg.hflip && h;
    if (cfg.channel_shuffle && shuffle) {
        std::array<int, 3> perm{0, 1, 2};
        for (std::uint64_t i = 0; i < pick; ++i) std::next_permutation(perm.begin(), perm.end());
        t.perm = perm;
    }
    return t;
}

StereoSample augment(const StereoSample& s, const AugmentationConfig& cfg, Rng& rng) {
    const Transform t = draw_transform(cfg, rng);
    return t.is_identity() ? s : apply_transform(s, t);
}

// --- synthetic scenes -------------------------------------------------------

namespace {

struct Wave {
    double fx, fy, phase;
    std::array<double, 3> amp;
};

struct Shape2d {
    bool disc;
    double cx, cy, rx, ry;
    std::array<double, 3> color;

    bool contains(double x, double y) const {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return disc ? dx * dx + dy * dy <= 1 : std::abs(dx) <= 1 && std::abs(dy) <= 1;
    }
};

struct Layer {
    std::array<double, 3> base;
    std::vector<Wave> waves;
    std::vector<Shape2d> paint;  // flat-colored primitives on the texture
    std::vector<Shape2d> mask;   // layer occupancy; empty means opaque everywhere
    int disparity = 0;

    bool covers(double x, double y) const {
        if (mask.empty()) return true;
        for (const auto& m : mask)
            if (m.contains(x, y)) return true;
        return false;
    }

    std::array<double, 3> color(double x, double y) const {
        for (auto it = paint.rbegin(); it != paint.rend(); ++it)
            if (it->contains(x, y)) return it->color;
        std::array<double, 3> c = base;
        for (const auto& w : waves) {
            const double v = std::sin(2 * M_PI * (w.fx * x + w.fy * y) + w.phase);
            for (int k = 0; k < 3; ++k) c[k] += w.amp[k] * v;
        }
        return c;
    }
};

Shape2d random_shape(Rng& rng, double width, double height, double min_r, double max_r) {
    Shape2d s;
    s.disc = rng.coin();
    s.cx = rng.uniform(0, width);
    s.cy = rng.uniform(0, height);
    s.rx = rng.uniform(min_r, max_r);
    s.ry = rng.uniform(min_r, max_r);
    for (auto& c : s.color) c = rng.uniform(0.05, 0.95);
    return s;
}

Image gaussian_blur(const Image& img, double sigma) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    const int C = img.shape().c, H = img.shape().h, W = img.shape().w;
    std::vector<double> tmp(static_cast<std::size_t>(C) * H * W);
    const auto in = img.values();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double a = 0;
                for (int i = -r; i <= r; ++i)
                    a += k[i + r] * in[(static_cast<std::size_t>(c) * H + y) * W + std::clamp(x + i, 0, W - 1)];
                tmp[(static_cast<std::size_t>(c) * H + y) * W + x] = a;
            }
    Image out(img.shape());
    auto o = out.mutable_values();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double a = 0;
                for (int i = -r; i <= r; ++i)
                    a += k[i + r] * tmp[(static_cast<std::size_t>(c) * H + std::clamp(y + i, 0, H - 1)) * W + x];
                o[(static_cast<std::size_t>(c) * H + y) * W + x] = static_cast<float>(a);
            }
    return out;
}

}  // namespace

SynthScene synth_scene(const SynthConfig& cfg, int index) {
    if (cfg.hr_h <= 0 || cfg.hr_w <= 0 || cfg.layers < 1) throw std::invalid_argument("synth: bad scene size");
    if (cfg.max_disparity < 0 || 4 * cfg.max_disparity >= cfg.hr_w)
        throw std::invalid_argument("synth: max_disparity must lie in [0, width/4)");
    Rng rng(cfg.seed, "synth", static_cast<std::uint64_t>(index));
    const int H = cfg.hr_h, W = cfg.hr_w;
    const double span = W + cfg.max_disparity;

    std::vector<int> disp(cfg.layers);
    for (auto& d : disp) d = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_disparity) + 1));
    std::sort(disp.begin(), disp.end());

    std::vector<Layer> layers(cfg.layers);
    for (int k = 0; k < cfg.layers; ++k) {
        Layer& L = layers[k];
        L.disparity = disp[k];
        for (auto& b : L.base) b = rng.uniform(0.25, 0.75);
        const int nw = 6;
        for (int i = 0; i < nw; ++i) {
            Wave w;
            const double f = cfg.max_frequency * std::sqrt(rng.uniform(0.02, 1.0));
            const double theta = rng.uniform(0, M_PI);
            w.fx = f * std::cos(theta);
            w.fy = f * std::sin(theta);
            w.phase = rng.uniform(0, 2 * M_PI);
            for (auto& a : w.amp) a = rng.uniform(-0.12, 0.12);
            L.waves.push_back(w);
        }
        const int np = 2 + static_cast<int>(rng.below(4));
        for (int i = 0; i < np; ++i) L.paint.push_back(random_shape(rng, span, H, 2.0, H / 6.0));
        if (k > 0) {
            const int nm = 1 + static_cast<int>(rng.below(2));
            for (int i = 0; i < nm; ++i) L.mask.push_back(random_shape(rng, span, H, H / 8.0, H / 2.5));
        }
    }

    // Render a view: a pixel at view column x shows layer k's content at
    // scene column x + shift(k).
    auto render = [&](bool right) {
        Image img(Shape{1, 3, H, W});
        auto v = img.mutable_values();
        const std::size_t plane = img.shape().plane();
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                std::array<double, 3> c{0, 0, 0};
                for (int k = cfg.layers - 1; k >= 0; --k) {
                    const double sx = x + (right ? layers[k].disparity : 0);
                    if (!layers[k].covers(sx, y)) continue;
                    c = layers[k].color(sx, y);
                    break;
                }
                for (int ch = 0; ch < 3; ++ch)
                    v[ch * plane + static_cast<std::size_t>(y) * W + x] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
            }
        return img;
    };

    SynthScene scene;
    scene.hr_l = render(false);
    scene.hr_r = render(true);
    if (cfg.blur_sigma > 0) {
        scene.hr_l = gaussian_blur(scene.hr_l, cfg.blur_sigma);
        scene.hr_r = gaussian_blur(scene.hr_r, cfg.blur_sigma);
    }
    scene.disparities = disp;
    return scene;
}

// --- manifest ---------------------------------------------------------------

Manifest Manifest::read(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError(file.string() + ": cannot open manifest");
    Manifest m;
    m.dir = file.parent_path();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestRecord r;
        std::string lrl, lrr, hrl, hrr, disp;
        if (!(ls >> r.id >> r.scale >> lrl >> lrr >> hrl >> hrr))
            throw DataError(file.string() + ":" + std::to_string(lineno) + ": malformed record");
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : m.dir / p; };
        r.lr_l = resolve(lrl);
        r.lr_r = resolve(lrr);
        r.hr_l = resolve(hrl);
        r.hr_r = resolve(hrr);
        if (ls >> disp && disp != "-") {
            std::istringstream ds(disp);
            std::string tok;
            while (std::getline(ds, tok, ',')) r.disparities.push_back(std::stoi(tok));
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

void Manifest::write(const fs::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError(file.string() + ": cannot write manifest");
    const fs::path base = file.parent_path();
    auto rel = [&](const fs::path& p) {
        const std::string s = p.is_absolute() ? fs::relative(p, fs::absolute(base)).generic_string()
                                              : p.lexically_relative(base).generic_string();
        if (s.find_first_of(" \t") != std::string::npos) throw DataError("manifest paths may not contain whitespace: " + s);
        return s;
    };
    out << "# id scale lr_left lr_right hr_left hr_right disparities\n";
    for (const auto& r : records) {
        out << r.id << ' ' << r.scale << ' ' << rel(r.lr_l) << ' ' << rel(r.lr_r) << ' ' << rel(r.hr_l) << ' '
            << rel(r.hr_r) << ' ';
        if (r.disparities.empty()) out << '-';
        for (std::size_t i = 0; i < r.disparities.size(); ++i) out << (i ? "," : "") << r.disparities[i];
        out << '\n';
    }
    if (!out) throw DataError(file.string() + ": write failed");
}

StereoSample Manifest::load(std::size_t i) const {
    const ManifestRecord& r = records.at(i);
    StereoSample s;
    s.id = r.id;
    s.lr_l = load_png(r.lr_l);
    s.lr_r = load_png(r.lr_r);
    s.hr_l = load_png(r.hr_l);
    s.hr_r = load_png(r.hr_r);
    try {
        s.validate(r.scale);
    } catch (const DataError& e) {
        throw DataError(r.hr_l.parent_path().string() + ": " + e.what());
    }
    return s;
}

Manifest synth_stereo(const SynthConfig& cfg, const fs::path& dir) {
    if (cfg.scale < 1 || cfg.hr_h % cfg.scale || cfg.hr_w % cfg.scale)
        throw std::invalid_argument("synth: size must be divisible by the scale");
    fs::create_directories(dir);
    Manifest m;
    m.dir = dir;
    for (int i = 0; i < cfg.count; ++i) {
        const SynthScene scene = synth_scene(cfg, i);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04d", i);
        ManifestRecord r;
        r.id = name;
        r.scale = cfg.scale;
        r.hr_l = dir / (r.id + "_hr_l.png");
        r.hr_r = dir / (r.id + "_hr_r.png");
        r.lr_l = dir / (r.id + "_lr_l.png");
        r.lr_r = dir / (r.id + "_lr_r.png");
        r.disparities = scene.disparities;
        save_png(r.hr_l, scene.hr_l);
        save_png(r.hr_r, scene.hr_r);
        // LR is degraded from the quantized HR so the pair on disk is self-consistent.
        save_png(r.lr_l, bicubic_downsample(load_png(r.hr_l), cfg.scale));
        save_png(r.lr_r, bicubic_downsample(load_png(r.hr_r), cfg.scale));
        m.records.push_back(std::move(r));
    }
    m.write(dir / "manifest.txt");
    return m;
}

}  // namespace nafssr
