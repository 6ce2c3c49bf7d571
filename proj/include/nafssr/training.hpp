#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>

#include "nafssr/data.hpp"
#include "nafssr/model.hpp"

namespace nafssr {

struct TrainConfig {
    double lr_init = 3e-3;
    double lr_final = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.9;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int iters = 1000;
    int batch = 32;
    double drop_prob = 0.0;
    std::uint64_t seed = 0;
    int patch_h = 30;  // LR pixels
    int patch_w = 90;
    int stride = 20;
    AugmentationConfig augment;
    int checkpoint_every = 500;  // 0 disables intermediate checkpoints

    void validate() const;
};

/// Sum of the per-view mean absolute errors.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& sr_l, const Tensor<T>& sr_r, const Tensor<T>& hr_l, const Tensor<T>& hr_r);

/// Cosine annealing from lr_init at t = 0 to lr_final at t = iters.
double cosine_lr(int t, const TrainConfig& cfg);

/// One AdamW update from the gradients left on the parameters by the last
/// backward pass; `step` is the 1-based update count. Parameters without a
/// gradient are left alone. A non-finite gradient rejects the whole step and
/// returns false with nothing modified.
template <typename T>
bool adamw_step(ParamStore<T>& store, double lr, const TrainConfig& cfg, std::int64_t step);

/// Everything needed to resume training.
struct TrainState {
    ModelConfig model;
    ParamStore<float> params;
    std::int64_t iteration = 0;
    std::int64_t optimizer_step = 0;  // accepted updates; trails iteration after rejected steps
    int patch_h = 0;
    int patch_w = 0;
    std::string rng_state;  // stochastic-depth stream
};

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Serialized bytes, as written by save_checkpoint.
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

/// Deterministic trainer. Sample order and augmentation are pure functions of
/// (seed, sample counter); only the stochastic-depth stream carries state.
class Trainer {
  public:
    Trainer(TrainConfig cfg, ModelConfig model, std::vector<StereoSample> pool);
    Trainer(TrainConfig cfg, TrainState state, std::vector<StereoSample> pool);

    /// One iteration; returns its loss.
    double step();
    /// Runs until cfg.iters, logging "iteration lr loss" lines and writing
    /// checkpoints into `out_dir` when it is non-empty.
    void run(std::ostream* log, const std::filesystem::path& out_dir = {},
             const std::function<void(std::int64_t, double)>& on_step = {});

    TrainState state() const;
    std::int64_t iteration() const { return iteration_; }
    const ParamStore<float>& params() const { return params_; }
    const ModelConfig& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    std::size_t rejected_steps() const { return rejected_; }

  private:
    StereoSample sample_at(std::int64_t k);

    TrainConfig cfg_;
    ModelConfig model_;
    ParamStore<float> params_;
    std::vector<StereoSample> pool_;
    Rng drop_rng_;
    std::int64_t iteration_ = 0;
    std::int64_t optimizer_step_ = 0;
    std::int64_t cached_epoch_ = -1;
    std::vector<std::size_t> order_;
    std::size_t rejected_ = 0;
};

/// All training patches of a manifest, in manifest order.
std::vector<StereoSample> build_patch_pool(const Manifest& manifest, int patch_h, int patch_w, int stride);

/// Keeps freed buffers in the heap instead of handing them back to the OS.
/// Training allocates and frees the same large blocks every iteration.
void retain_heap_memory();

}  // namespace nafssr
