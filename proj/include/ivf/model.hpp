#pragma once

#include "ivf/autodiff.hpp"
#include "ivf/losses.hpp"
#include "ivf/metrics.hpp"
#include "ivf/pairing.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ivf {

/// Three-layer fusion CNN: concat(ir, vis) -> conv 2->16 -> leaky relu ->
/// conv 16->16 -> leaky relu -> conv 16->1 -> sigmoid, all 3x3.
struct ModelParams {
  std::vector<Parameter> tensors;

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

inline constexpr std::size_t kHiddenChannels = 16;

/// Kernels uniform in (-s, s), s = sqrt(1 / fan_in); biases zero.
ModelParams init_model(std::uint64_t seed);
/// All parameters zero; the fused output is 0.5 everywhere.
ModelParams zero_model();

/// Builds the forward map in `g` with trainable parameter leaves.
NodeId fuse_forward(Graph& g, ModelParams& params, NodeId ir, NodeId vis);
/// Inference: fused image with the same shape as the inputs.
Image fuse(const ModelParams& params, const Image& ir, const Image& vis);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState for_model(const ModelParams& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update from the gradients held in `params`.
/// Throws NumericError naming the parameter on a non-finite gradient.
void adam_step(ModelParams& params, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::uint64_t iterations = 500;
  std::size_t batch_size = 1;
  std::size_t patch_size = 32;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::uint64_t eval_every = 50;
  unsigned threads = 1;

  void validate() const;
};

struct TrainState {
  ModelParams params;
  AdamState adam;
};

struct LossRow {
  std::uint64_t iteration;
  LossBreakdown loss;
};

struct EvalRow {
  std::uint64_t iteration;
  MetricRow metrics;
};

struct TrainRecord {
  std::vector<LossRow> losses;
  std::vector<EvalRow> evals;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::uint64_t iteration, LossBreakdown last, const std::string& why);
  std::uint64_t iteration() const { return iteration_; }
  const LossBreakdown& last_breakdown() const { return last_; }

 private:
  std::uint64_t iteration_;
  LossBreakdown last_;
};

/// Crop locations for one plan slot: co-located when the pair is aligned
/// (same base set, i == j) and independent otherwise.
struct PatchSelection {
  std::size_t ir_y, ir_x, vis_y, vis_x;
};
PatchSelection select_patches(const TrainConfig& cfg, const PairingPlan& plan, std::uint64_t slot, const Image& ir,
                              const Image& vis);

/// Optional per-iteration observer, called after each optimizer step.
using TrainCallback = std::function<void(const TrainState&, const LossRow&)>;

/// Runs iterations state.adam.step + 1 .. cfg.iterations over the plan in
/// order (wrapping around), one optimizer step per iteration.
TrainRecord train(const TrainConfig& cfg, const PairingPlan& plan, std::span<const Image> ir_store,
                  std::span<const Image> vis_store, std::span<const ImagePair> eval_set, TrainState& state,
                  const TrainCallback& on_step = {});

// Checkpoint: "IVCK", u8 version, u16 count, (u8 name length, name, IVTD)
// per model tensor, the same table for optimizer moments, then u64 step.
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

std::string format_loss_csv(const TrainRecord& rec);
std::string format_eval_csv(const TrainRecord& rec);

/// Mean of `field` over the last `window` loss rows.
double smoothed_tail(const TrainRecord& rec, std::size_t window, double LossBreakdown::*field = &LossBreakdown::total);

}  // namespace ivf
