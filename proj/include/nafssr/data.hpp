#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "nafssr/tensor.hpp"

namespace nafssr {

using Image = Tensor<float>;  // (1, 3, h, w), values in [0, 1]

/// Thrown for unreadable or malformed data files; messages carry the path.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct StereoSample {
    Image lr_l, lr_r;
    Image hr_l, hr_r;
    std::string id;

    int scale() const { return lr_l.empty() ? 0 : hr_l.shape().h / lr_l.shape().h; }
    void validate(int scale) const;
};

/// 8-bit RGB PNG to (1, 3, h, w) in [0, 1].
Image load_png(const std::filesystem::path& path);
/// Round-half-up to 8 bits with clamping.
void save_png(const std::filesystem::path& path, const Image& img);

/// Keys cubic (a = -0.5) with the kernel widened by s for antialiasing,
/// edge-clamped, sampling source position (dst + 0.5) * s - 0.5.
Image bicubic_downsample(const Image& hr, int s);

struct PatchSet {
    std::vector<StereoSample> patches;
    bool undersized = false;
};

/// Aligned LR patches (patch_h x patch_w, given stride) with the matching
/// scale-s HR crops; both views share the crop coordinates.
PatchSet extract_patches(const StereoSample& sample, int patch_h, int patch_w, int stride);

/// One concrete augmentation: optional vertical flip, optional horizontal
/// flip with view swap, then output channel k takes input channel perm[k].
struct Transform {
    bool vflip = false;
    bool hflip = false;
    std::array<int, 3> perm{0, 1, 2};

    bool is_identity() const { return !vflip && !hflip && perm == std::array<int, 3>{0, 1, 2}; }
    Transform inverse() const;
    /// The 24 members of {vflip} x {hflip-with-swap} x {RGB permutations}.
    static std::vector<Transform> all();
    std::string str() const;
};

struct AugmentationConfig {
    bool hflip = true;
    bool vflip = true;
    bool channel_shuffle = true;
};

/// Applies a transform to a view pair (swapping views on hflip).
std::pair<Image, Image> apply_transform(const Image& l, const Image& r, const Transform& t);
StereoSample apply_transform(const StereoSample& s, const Transform& t);

/// Each enabled augmentation fires with probability 1/2; a firing channel
/// shuffle draws one of the six RGB permutations uniformly.
Transform draw_transform(const AugmentationConfig& cfg, Rng& rng);
StereoSample augment(const StereoSample& s, const AugmentationConfig& cfg, Rng& rng);

/// Channel-permuted, flipped copies of single images.
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image permute_channels(const Image& img, const std::array<int, 3>& perm);

// --- synthetic stereo scenes ----------------------------------------------

struct SynthConfig {
    std::uint64_t seed = 0;
    int count = 8;
    int hr_h = 64;
    int hr_w = 192;
    int scale = 4;
    int max_disparity = 16;  // HR pixels
    int layers = 4;
    double max_frequency = 0.3;  // cycles per HR pixel of the texture bands
    double blur_sigma = 0;       // Gaussian blur of the rendered HR views, in HR pixels
};

struct SynthScene {
    Image hr_l, hr_r;
    std::vector<int> disparities;  // per layer, back to front
};

/// Fronto-parallel textured layers composited back to front. Layer k is seen
/// in the right view shifted left by its disparity, so a point at left column
/// x appears at right column x - d.
SynthScene synth_scene(const SynthConfig& cfg, int index);

// --- manifest ---------------------------------------------------------------

struct ManifestRecord {
    std::string id;
    int scale = 0;
    std::filesystem::path lr_l, lr_r, hr_l, hr_r;  // resolved against the manifest directory
    std::vector<int> disparities;
};

struct Manifest {
    std::filesystem::path dir;
    std::vector<ManifestRecord> records;

    static Manifest read(const std::filesystem::path& file);
    /// Paths are written relative to the manifest directory.
    void write(const std::filesystem::path& file) const;
    StereoSample load(std::size_t i) const;
};

/// Renders cfg.count scenes to `dir` as PNGs plus `manifest.txt`.
Manifest synth_stereo(const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace nafssr
