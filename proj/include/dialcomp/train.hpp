#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dialcomp/augment.hpp"
#include "dialcomp/corpus.hpp"
#include "dialcomp/model.hpp"
#include "dialcomp/tokenizer.hpp"

namespace dialcomp {

enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
  double alpha = 0.001;  // weight of the discriminator loss in the convex combination
  double learning_rate = 1e-3;
  int batch_size = 8;
  int64_t max_steps = 1000;
  uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  int64_t eval_every = 0;   // 0 disables periodic evaluation
  int64_t warmup_steps = 0; // linear warmup into the constant rate
  // Label a context by the domains visible inside it (default) or by its
  // parent dialogue's task label.
  bool per_dialogue_labels = false;
  bool gradient_reversal = false;
  // When false the discriminator branch is never built; used to verify the
  // alpha = 0 endpoint is bit-identical to a detached head.
  bool include_discriminator = true;

  void validate() const;
};

// One assistant turn to predict: the serialized conversation history, the
// target token sequence (EOS-terminated), and the single/multi context label.
struct TrainingExample {
  std::vector<int> context_ids;
  std::vector<int> target_ids;
  int context_label = 0;  // 0 = single-task context, 1 = multi-task context
  std::string dialogue_id;
  int turn_index = 0;
};

struct LossBreakdown {
  double l_lm = 0.0;
  double l_disc = 0.0;
  double l_train = 0.0;
  double alpha = 0.0;
};

// Binary cross-entropy for one prediction; y_hat must lie strictly in (0,1).
double disc_loss(double y_hat, int y);
// L_train = alpha * L_disc + (1 - alpha) * L_LM, in exactly this arithmetic.
double combined_loss(double l_disc, double l_lm, double alpha);

// Contexts are serialized as BOS u1 SEP a1 SEP ... SEP ui and truncated from
// the left to the model's context window; targets are the assistant tokens
// plus EOS. The context label flips to multi-task once annotations from a
// second domain become visible inside the prefix (unless per-dialogue
// labeling is chosen).
std::vector<TrainingExample> build_training_examples(const std::vector<Dialogue>& dialogues,
                                                     const BpeVocab& vocab,
                                                     const ModelConfig& cfg,
                                                     bool per_dialogue_labels = false);

// Mean per-token NLL over the batch. With accumulate_gradients the exact
// analytic gradient of that mean is added into the parameter grads.
double lm_loss(const Model& model, std::span<const TrainingExample> batch,
               bool accumulate_gradients = false);

// Forward-only batch loss with dropout off; the same arithmetic the trainer
// reports, used by gradient checking.
LossBreakdown compute_batch_loss(const Model& model, std::span<const TrainingExample> batch,
                                 const TrainConfig& cfg);
// Adds d(L_train)/d(theta) into the parameter grads and returns the losses.
LossBreakdown compute_batch_gradients(const Model& model, std::span<const TrainingExample> batch,
                                      const TrainConfig& cfg, const DropoutCtx& drop);

using MetricsSink = std::function<void(int64_t step, const LossBreakdown&)>;

// Deterministic training loop: example order, batching, dropout streams and
// optimizer state are all derived from (seed, config, data). Run in chunks;
// optimizer state persists across calls.
class Trainer {
 public:
  Trainer(Model& model, std::vector<TrainingExample> examples, TrainConfig cfg);

  LossBreakdown step();
  // Runs up to `steps` more steps (bounded by cfg.max_steps).
  std::vector<LossBreakdown> run(int64_t steps, const MetricsSink& sink = nullptr);
  int64_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::vector<const TrainingExample*> next_batch();
  void apply_update();

  Model& model_;
  std::vector<TrainingExample> examples_;
  TrainConfig cfg_;
  int64_t step_ = 0;
  int64_t epoch_ = 0;
  size_t cursor_ = 0;
  std::vector<size_t> order_;
};

struct GradCheckBlock {
  std::string name;
  int coords_checked = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central finite differences of L_train versus the analytic gradients, on a
// random subsample of at least min_coords coordinates per tensor.
std::vector<GradCheckBlock> grad_check(Model& model, const std::vector<TrainingExample>& batch,
                                       const TrainConfig& cfg, double tolerance, uint64_t seed,
                                       int min_coords = 32);

// Everything one mixture-row experiment needs.
struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  int vocab_size = 4000;
  bool lowercase = true;
  int eval_max_gen_len = 64;
  bool smooth_bleu = false;
  MixtureAllocation mixture_allocation = MixtureAllocation::GreedyProportional;
  uint64_t mixture_seed = 0;
};

struct AblationRow {
  MixtureSpec spec;
  std::optional<double> bleu_multiple_only;
  double bleu_overall = 0.0;
  double final_l_lm = 0.0;
};

struct AlphaSweepRow {
  double alpha = 0.0;
  std::optional<double> bleu_multiple_only;
  double bleu_overall = 0.0;
  double final_l_lm = 0.0;
  double final_l_disc = 0.0;
};

// Trains one model per mixture row from scratch (identical seeds) and
// reports multiple-only and overall BLEU on the validation split.
std::vector<AblationRow> run_ablation_schedule(const CorpusSplit& split, int total,
                                               const std::vector<MixtureSpec>& rows,
                                               const PipelineConfig& cfg);

// One run per alpha over identical data and seeds.
std::vector<AlphaSweepRow> alpha_sweep(const CorpusSplit& split,
                                       const std::vector<double>& alphas,
                                       const PipelineConfig& cfg);

std::vector<MixtureSpec> default_ablation_rows();
std::vector<double> default_alpha_grid();

}  // namespace dialcomp
