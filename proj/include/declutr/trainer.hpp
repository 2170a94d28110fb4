#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "declutr/corpus.hpp"
#include "declutr/encoder.hpp"
#include "declutr/sampler.hpp"

namespace declutr {

enum class ObjectiveMode { contrastive_mlm, contrastive_only, mlm_only };

ObjectiveMode objective_mode_from_string(const std::string& s);
const char* objective_mode_name(ObjectiveMode m);

enum class LossReduction { sum, mean };

struct TrainConfig {
  int batch_size = 16;  // N documents per minibatch
  int epochs = 1;
  double temperature = 5e-2;
  double lr_max = 5e-5;
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double cut_frac = 0.1;
  double stlr_ratio = 32.0;
  double max_grad_norm = 1.0;
  bool strict_rescale = false;  // rescale to the target norm even when below it
  uint64_t seed = 0;
  ObjectiveMode objective = ObjectiveMode::contrastive_mlm;
  LossReduction loss_reduction = LossReduction::sum;
  int64_t total_steps_override = -1;  // > 0: run exactly this many steps
  bool deterministic = false;         // byte-stable metrics (no wall-clock fields)
  std::string resume_from;            // output dir of a previous run

  void validate() const;
};

/// Slanted triangular schedule: linear ramp to lr_max at step
/// cut = floor(T * cut_frac), then linear decay back to lr_max / ratio at T.
double stlr_learning_rate(int64_t t, int64_t total_steps, double cut_frac, double lr_max, double ratio);

/// Scales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm (or always, when strict). Returns the post-rescale norm. Throws
/// NumericError naming the offending tensor on non-finite gradients.
double rescale_gradients(std::vector<Param*>& params, double max_norm, bool strict = false);

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  int64_t t = 0;  // completed optimizer steps

  static AdamState for_params(const std::vector<Param*>& params);
  void quantize_to_f32();
};

/// One decoupled-weight-decay Adam step with bias correction. Decay applies
/// before the moment-update term and only to tensors with decay = true.
void adamw_step(std::vector<Param*>& params, AdamState& state, double lr, double weight_decay,
                double beta1, double beta2, double eps);

struct BatchLossResult {
  double contrastive = 0.0;
  double mlm = 0.0;
  double combined = 0.0;
  bool degenerate = false;  // 2AN == 2
};

/// Forward-only loss of a batch (the finite-difference oracle path).
/// dropout_rng activates encoder dropout when config.dropout > 0.
BatchLossResult batch_loss(const EncoderParams& params, const ContrastiveBatch& batch,
                           double temperature, ObjectiveMode mode,
                           LossReduction reduction = LossReduction::sum,
                           Rng* dropout_rng = nullptr);

/// Forward + backward; accumulates parameter gradients.
BatchLossResult batch_loss_and_grads(EncoderParams& params, const ContrastiveBatch& batch,
                                     double temperature, ObjectiveMode mode,
                                     LossReduction reduction = LossReduction::sum,
                                     Rng* dropout_rng = nullptr);

struct StepMetrics {
  int64_t step = 0;
  double lr = 0.0;
  double l_contrastive = 0.0;
  double l_mlm = 0.0;
  double l = 0.0;
  double grad_norm = 0.0;  // post-rescale global norm
  double spans_per_sec = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string optimizer_path;
  std::string metrics_path;
  int64_t steps = 0;
  std::vector<StepMetrics> metrics;
};

/// Full optimization loop: deterministic per-epoch shuffle, minibatches of N
/// documents (trailing partial batch kept), per-step assemble -> losses ->
/// backward -> rescale -> STLR -> AdamW, JSONL metrics, a checkpoint per
/// epoch and at the end. Aborts on non-finite loss with the last-good
/// checkpoint retained.
TrainResult train(const DocumentStore& store, const Vocab& vocab, const SamplerConfig& sampler_cfg,
                  const EncoderConfig& encoder_cfg, const TrainConfig& train_cfg,
                  const std::string& out_dir);

}  // namespace declutr
