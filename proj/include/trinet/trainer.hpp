#pragma once

// Interleaved two-phase training on binocular pairs.
//
// Phase 1 treats (L, R) as (left, centre): forward on R, phase-1 loss against
// L, update encoder + left decoder. Phase 2 treats (L, R) as (centre, right):
// forward on L, phase-2 loss against R, update encoder + right decoder.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "trinet/losses.hpp"
#include "trinet/metrics.hpp"
#include "trinet/model.hpp"

namespace trinet::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments and step counter of one parameter tensor.
struct AdamSlot {
  Tensor<float> m;
  Tensor<float> v;
  std::int64_t step = 0;
};

/// One slot per network parameter, shared by both phases.
struct AdamState {
  AdamConfig config;
  std::vector<AdamSlot> slots;

  static AdamState for_params(const model::NetworkParams& params, AdamConfig config = {});
  bool operator==(const AdamState& other) const;
};

/// Bias-corrected Adam step on one tensor; increments slot.step.
void adam_step(Tensor<float>& param, const Tensor<float>& grad, AdamSlot& slot, double lr,
               const AdamConfig& config);

/// Applies adam_step to the parameters listed in `indices` (grads aligned with
/// `indices`); every other parameter and slot is left untouched.
void adam_update(model::NetworkParams& params, const std::vector<std::size_t>& indices,
                 const std::vector<Tensor<float>>& grads, AdamState& state, double lr);

struct Augmentation {
  /// Mirror both images and swap them (L' = flip R, R' = flip L) with p = 0.5.
  bool flip = true;
  /// Colour jitter on each image independently, p = 0.5: gamma in
  /// [0.8, 1.2], brightness in [0.5, 2.0], per-channel gain in [0.8, 1.2].
  bool color_jitter = false;
};

struct TrainPlan {
  int epochs = 50;
  int batch_size = 4;
  double learning_rate = 1e-4;
  Augmentation augmentation;
  std::uint64_t seed = 1;
  /// Checkpoint every K epochs (0 = only at the end).
  int checkpoint_every = 0;
  /// Validate every K epochs (0 = only at the end); needs validation data.
  int validate_every = 1;

  void validate() const;
};

/// Piecewise-constant schedule: lr0 before 60% of the epochs, lr0/2 before
/// 80%, lr0/4 afterwards (epochs 30 and 40 for a 50-epoch plan).
double lr_schedule(const TrainPlan& plan, int epoch);

/// Binocular training input: two [B,3,H,W] images. No ground truth.
struct StereoPair {
  Tensor<float> left;
  Tensor<float> right;
};

enum class Phase { one, two };

/// Parameter indices updated by a phase (encoder + left or right decoder;
/// the single-decoder ablation updates its one decoder in both phases).
std::vector<std::size_t> routed_indices(const model::NetworkParams& params, Phase phase);

/// Raised when a loss or gradient is not finite; parameters are left as they
/// were before the failing call.
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepOptions {
  /// Check after each phase that the parameters outside its routed set are
  /// bit-identical; throws std::logic_error otherwise.
  bool verify_routing =
#ifdef NDEBUG
      false;
#else
      true;
#endif
};

/// One phase: forward, loss, backward, Adam update of the routed set.
loss::LossTerms train_phase(model::NetworkParams& params, AdamState& adam, const StereoPair& pair,
                            const loss::LossWeights& w, double lr, Phase phase,
                            const StepOptions& opt = {});

struct StepResult {
  loss::LossTerms phase1;
  loss::LossTerms phase2;
};

/// Phase 1 then phase 2 on the same pair. If either phase fails, parameters
/// and Adam state are restored to their values before the call.
StepResult train_step(model::NetworkParams& params, AdamState& adam, const StereoPair& pair,
                      const loss::LossWeights& w, double lr, const StepOptions& opt = {});

/// Held-out data for validation; ground truth never reaches train_step.
struct ValidationSample {
  Tensor<float> image;    // [1,3,H,W] centre image
  Tensor<float> gt_disp;  // [1,1,H,W] centre-aligned
};

struct TrainIO {
  /// Output directory for log.csv, val.csv and checkpoints; empty = no files.
  std::filesystem::path out_dir;
  metrics::CameraModel camera;
  double cap = 80.0;
  /// Called after every step (step index, epoch, result).
  std::function<void(std::int64_t, int, const StepResult&)> on_step;
};

struct TrainSummary {
  std::vector<StepResult> steps;
  std::vector<metrics::MetricsRecord> validation;  // one per validation pass
};

/// Seeded epoch loop over `data` ([1,3,H,W] pairs). Writes log.csv (one row
/// per step with both phase breakdowns), val.csv, checkpoint_eNNN/ every K
/// epochs and checkpoint/ at the end.
TrainSummary train(model::NetworkParams& params, const std::vector<StereoPair>& data,
                   const TrainPlan& plan, const loss::LossWeights& w,
                   const std::vector<ValidationSample>& validation = {}, const TrainIO& io = {});

/// Centre-map metrics of the current network over validation samples.
metrics::MetricsRecord validate(const model::NetworkParams& params,
                                const std::vector<ValidationSample>& samples,
                                const metrics::CameraModel& cam, double cap, bool post_process);

/// Column names of log.csv.
std::string log_header();

}  // namespace trinet::train
