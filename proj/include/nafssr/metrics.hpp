#pragma once

#include <functional>
#include <iosfwd>

#include "nafssr/data.hpp"
#include "nafssr/model.hpp"

namespace nafssr {

/// 10 log10(1 / MSE) over every element; identical inputs give 100 dB.
double psnr(const Image& a, const Image& b);
constexpr double kPsnrCap = 100.0;

/// Mean over channels of the mean SSIM map: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, valid region only.
double ssim(const Image& a, const Image& b);

/// Drops the first `columns` columns.
Image crop_left(const Image& img, int columns);

enum class PairMode {
    mean_of_views,  // (metric(left) + metric(right)) / 2
    averaged_image  // metric((sr_l + sr_r) / 2, (hr_l + hr_r) / 2)
};

struct EvalProtocol {
    bool left_crop64 = true;
    bool pair_average = true;
    PairMode pair_mode = PairMode::mean_of_views;
};

struct ImageScore {
    std::string id;
    std::string mode;  // "left_crop64" or "pair_average"
    double psnr = 0;
    double ssim = 0;
};

struct MetricReport {
    std::string dataset;
    int scale = 0;
    std::string policy;  // pooling policy used at inference
    std::string label;
    std::vector<ImageScore> scores;  // manifest order, modes interleaved per image

    /// Mean of one mode's scores; {psnr, ssim}.
    std::pair<double, double> mean(const std::string& mode) const;
    void write_table(std::ostream& os) const;
    void write_jsonl(std::ostream& os) const;
};

using Predictor = std::function<StereoPair<float>(const StereoSample&)>;

/// Scores every manifest sample. Pure given a deterministic predictor.
MetricReport evaluate_with(const Manifest& manifest, const Predictor& predict, const EvalProtocol& protocol,
                           const std::string& policy);

/// Plain inference with gradients off.
StereoPair<float> infer(const ModelConfig& cfg, const ParamStore<float>& params, const Image& lr_l,
                        const Image& lr_r, const PoolingPolicy& pool = PoolingPolicy::global());

/// Runs the model on every transformed input, inverts each output and
/// averages. Member names are appended to `members` when given.
StereoPair<float> self_ensemble_infer(const ModelConfig& cfg, const ParamStore<float>& params, const Image& lr_l,
                                      const Image& lr_r, const PoolingPolicy& pool,
                                      const std::vector<Transform>& transforms = Transform::all(),
                                      std::vector<std::string>* members = nullptr);

struct EnsembleMember {
    ModelConfig cfg;
    const ParamStore<float>* params;
};

/// Arithmetic mean of the members' outputs. Members must share a scale.
StereoPair<float> average_outputs(const std::vector<EnsembleMember>& members, const Image& lr_l, const Image& lr_r,
                                  const PoolingPolicy& pool = PoolingPolicy::global());

/// Checkpoint-level evaluation; rejects a checkpoint whose scale differs from
/// the dataset's.
MetricReport evaluate(const ModelConfig& cfg, const ParamStore<float>& params, const Manifest& manifest,
                      const EvalProtocol& protocol, const PoolingPolicy& pool, bool self_ensemble = false);

}  // namespace nafssr
