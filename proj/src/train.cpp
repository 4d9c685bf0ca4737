#include "dialcomp/train.hpp"

#include <algorithm>
#include <cmath>

#include "dialcomp/errors.hpp"
#include "dialcomp/eval.hpp"
#include "dialcomp/log.hpp"

namespace dialcomp {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  if (learning_rate < 0.0) throw UsageError("learning_rate must be non-negative");
  if (batch_size < 1) throw UsageError("batch_size must be positive");
  if (max_steps < 0) throw UsageError("max_steps must be non-negative");
}

double disc_loss(double y_hat, int y) {
  if (!(y_hat > 0.0 && y_hat < 1.0))
    throw NumericError("disc_loss requires y_hat strictly inside (0, 1)");
  if (y != 0 && y != 1) throw UsageError("disc_loss label must be 0 or 1");
  return -(y * std::log(y_hat) + (1 - y) * std::log1p(-y_hat));
}

double combined_loss(double l_disc, double l_lm, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  return alpha * l_disc + (1.0 - alpha) * l_lm;
}

std::vector<TrainingExample> build_training_examples(const std::vector<Dialogue>& dialogues,
                                                     const BpeVocab& vocab,
                                                     const ModelConfig& cfg,
                                                     bool per_dialogue_labels) {
  std::vector<TrainingExample> out;
  for (const auto& d : dialogues) {
    std::vector<int> context;
    context.push_back(BpeVocab::kBos);
    std::set<std::string> seen_domains;
    for (size_t i = 0; i < d.exchanges.size(); ++i) {
      const Exchange& ex = d.exchanges[i];
      if (i > 0) context.push_back(BpeVocab::kSep);
      const auto user_ids = encode(ex.user.text, vocab);
      context.insert(context.end(), user_ids.begin(), user_ids.end());
      for (const auto& s : ex.user.slots) seen_domains.insert(s.domain);

      TrainingExample e;
      e.dialogue_id = d.id;
      e.turn_index = static_cast<int>(i);
      e.context_ids = context;
      truncate_context(e.context_ids, cfg.max_context_len);
      e.target_ids = encode(ex.assistant.text, vocab);
      e.target_ids.push_back(BpeVocab::kEos);
      if (per_dialogue_labels) {
        e.context_label = d.is_multi_task() ? 1 : 0;
      } else {
        e.context_label = seen_domains.size() >= 2 ? 1 : 0;
      }
      out.push_back(std::move(e));

      context.push_back(BpeVocab::kSep);
      const auto asst_ids = encode(ex.assistant.text, vocab);
      context.insert(context.end(), asst_ids.begin(), asst_ids.end());
      for (const auto& s : ex.assistant.slots) seen_domains.insert(s.domain);
    }
  }
  return out;
}

namespace {

struct BatchTotals {
  double nll_sum = 0.0;
  double bce_sum = 0.0;
  long long token_count = 0;
};

// Builds the joint graph for one example. Both losses share the encoder, so
// one backward pass sends gradients down both paths.
struct ExampleGraph {
  Graph g;
  Graph::Ref nll = -1;
  Graph::Ref bce = -1;
  long long tokens = 0;
};

void build_example(const Model& model, const TrainingExample& e, bool with_disc,
                   bool grad_reversal, const DropoutCtx& drop, ExampleGraph& eg) {
  if (e.target_ids.empty()) throw DataError("training example with empty target");
  EncoderNodes enc = model.build_encoder(eg.g, e.context_ids, drop);
  std::vector<int> dec_input;
  dec_input.reserve(e.target_ids.size());
  dec_input.push_back(BpeVocab::kBos);
  dec_input.insert(dec_input.end(), e.target_ids.begin(), e.target_ids.end() - 1);
  Graph::Ref logits = model.build_decoder_logits(eg.g, enc.states, dec_input, drop);
  std::vector<int> targets;
  for (int t : e.target_ids) {
    if (t == BpeVocab::kPad) continue;  // padded positions never enter the mean
    targets.push_back(t);
  }
  if (targets.empty()) throw DataError("training example target is all padding");
  eg.nll = eg.g.cross_entropy_sum(logits, targets);
  eg.tokens = static_cast<long long>(targets.size());
  if (with_disc) {
    Graph::Ref z =
        model.build_discriminator_logit(eg.g, enc.pooled_summary, grad_reversal, drop);
    eg.bce = eg.g.bce_with_logit(z, static_cast<double>(e.context_label));
  }
}

LossBreakdown batch_pass(const Model& model, std::span<const TrainingExample> batch,
                         const TrainConfig& cfg, double dropout_rate, bool backward,
                         int64_t step) {
  if (batch.empty()) throw DataError("empty training batch");
  const bool with_disc = cfg.include_discriminator;

  // Pass 1 (cheap): total target tokens, needed for gradient seeds.
  long long total_tokens = 0;
  for (const auto& e : batch) {
    for (int t : e.target_ids)
      if (t != BpeVocab::kPad) ++total_tokens;
  }
  if (total_tokens == 0) throw DataError("batch contains no target tokens");

  BatchTotals totals;
  totals.token_count = total_tokens;
  for (size_t i = 0; i < batch.size(); ++i) {
    DropoutCtx ex_drop;
    Rng ex_rng(0);
    if (dropout_rate > 0.0) {
      // Independent stream per (step, example) so batch composition does not
      // couple masks across examples.
      ex_rng = Rng(derive_seed(cfg.seed, "dropout", static_cast<uint64_t>(step) * 1000003ULL +
                                                        static_cast<uint64_t>(i)));
      ex_drop.rate = dropout_rate;
      ex_drop.rng = &ex_rng;
    }
    ExampleGraph eg;
    build_example(model, batch[i], with_disc, cfg.gradient_reversal, ex_drop, eg);
    totals.nll_sum += eg.g.value(eg.nll).a[0];
    if (with_disc) totals.bce_sum += eg.g.value(eg.bce).a[0];
    if (backward) {
      eg.g.set_loss_grad(eg.nll, (1.0 - cfg.alpha) / static_cast<double>(total_tokens));
      if (with_disc)
        eg.g.set_loss_grad(eg.bce, cfg.alpha / static_cast<double>(batch.size()));
      eg.g.backward();
    }
  }

  LossBreakdown lb;
  lb.alpha = cfg.alpha;
  lb.l_lm = totals.nll_sum / static_cast<double>(totals.token_count);
  lb.l_disc = with_disc ? totals.bce_sum / static_cast<double>(batch.size()) : 0.0;
  lb.l_train = combined_loss(lb.l_disc, lb.l_lm, cfg.alpha);
  return lb;
}

}  // namespace

double lm_loss(const Model& model, std::span<const TrainingExample> batch,
               bool accumulate_gradients) {
  TrainConfig cfg;
  cfg.alpha = 0.0;
  cfg.include_discriminator = false;
  return batch_pass(model, batch, cfg, 0.0, accumulate_gradients, 0).l_lm;
}

LossBreakdown compute_batch_loss(const Model& model, std::span<const TrainingExample> batch,
                                 const TrainConfig& cfg) {
  return batch_pass(model, batch, cfg, 0.0, false, 0);
}

LossBreakdown compute_batch_gradients(const Model& model, std::span<const TrainingExample> batch,
                                      const TrainConfig& cfg, const DropoutCtx& drop) {
  return batch_pass(model, batch, cfg, drop.active() ? drop.rate : 0.0, true, 0);
}

Trainer::Trainer(Model& model, std::vector<TrainingExample> examples, TrainConfig cfg)
    : model_(model), examples_(std::move(examples)), cfg_(cfg) {
  cfg_.validate();
  if (examples_.empty()) throw DataError("no training examples");
}

std::vector<const TrainingExample*> Trainer::next_batch() {
  if (order_.empty() || cursor_ >= order_.size()) {
    order_.resize(examples_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(derive_seed(cfg_.seed, "order", static_cast<uint64_t>(epoch_)));
    rng.shuffle(order_);
    cursor_ = 0;
    ++epoch_;
  }
  std::vector<const TrainingExample*> batch;
  for (int i = 0; i < cfg_.batch_size && cursor_ < order_.size(); ++i, ++cursor_)
    batch.push_back(&examples_[order_[cursor_]]);
  return batch;
}

void Trainer::apply_update() {
  const double warm =
      cfg_.warmup_steps > 0
          ? std::min(1.0, static_cast<double>(step_) / static_cast<double>(cfg_.warmup_steps))
          : 1.0;
  const double lr = cfg_.learning_rate * warm;
  if (cfg_.optimizer == OptimizerKind::SGD) {
    for (auto& p : model_.params().all())
      for (size_t i = 0; i < p->value.size(); ++i) p->value.a[i] -= lr * p->grad.a[i];
    return;
  }
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2, eps = cfg_.adam_eps;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (auto& p : model_.params().all()) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.a[i];
      p->adam_m.a[i] = b1 * p->adam_m.a[i] + (1.0 - b1) * g;
      p->adam_v.a[i] = b2 * p->adam_v.a[i] + (1.0 - b2) * g * g;
      const double mhat = p->adam_m.a[i] / bc1;
      const double vhat = p->adam_v.a[i] / bc2;
      p->value.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

LossBreakdown Trainer::step() {
  auto batch_ptrs = next_batch();
  std::vector<TrainingExample> batch;
  batch.reserve(batch_ptrs.size());
  for (const auto* e : batch_ptrs) batch.push_back(*e);

  if (auto bad = model_.params().first_non_finite(false))
    throw NumericError("non-finite value in tensor '" + *bad + "' entering step " +
                       std::to_string(step_ + 1));
  model_.params().zero_grads();
  ++step_;
  LossBreakdown lb = batch_pass(model_, batch, cfg_, model_.config().dropout_rate, true, step_);
  if (auto bad = model_.params().first_non_finite(true))
    throw NumericError("non-finite gradient in tensor '" + *bad + "' at step " +
                       std::to_string(step_));
  if (!std::isfinite(lb.l_train))
    throw NumericError("non-finite loss at step " + std::to_string(step_));
  apply_update();
  if (auto bad = model_.params().first_non_finite(false))
    throw NumericError("non-finite value in tensor '" + *bad + "' after update at step " +
                       std::to_string(step_));
  return lb;
}

std::vector<LossBreakdown> Trainer::run(int64_t steps, const MetricsSink& sink) {
  std::vector<LossBreakdown> history;
  for (int64_t i = 0; i < steps && step_ < cfg_.max_steps; ++i) {
    LossBreakdown lb = step();
    if (sink) sink(step_, lb);
    history.push_back(lb);
  }
  return history;
}

std::vector<GradCheckBlock> grad_check(Model& model, const std::vector<TrainingExample>& batch,
                                       const TrainConfig& cfg, double tolerance, uint64_t seed,
                                       int min_coords) {
  // Analytic gradients of L_train, dropout off so the loss is a
  // deterministic function of the parameters.
  model.params().zero_grads();
  compute_batch_gradients(model, batch, cfg, DropoutCtx{});

  std::vector<std::pair<std::string, std::vector<double>>> analytic;
  for (const auto& p : model.params().all()) analytic.push_back({p->name, p->grad.a});

  std::vector<GradCheckBlock> report;
  for (size_t bi = 0; bi < model.params().all().size(); ++bi) {
    Param& p = *model.params().all()[bi];
    const auto& grads = analytic[bi].second;
    GradCheckBlock block;
    block.name = p.name;

    const size_t n = p.value.size();
    std::vector<size_t> coords;
    if (static_cast<int>(n) <= min_coords) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng(derive_seed(seed, p.name));
      std::vector<char> used(n, 0);
      while (static_cast<int>(coords.size()) < min_coords) {
        const size_t c = static_cast<size_t>(rng.below(n));
        if (!used[c]) {
          used[c] = 1;
          coords.push_back(c);
        }
      }
    }

    double max_rel = 0.0;
    for (size_t c : coords) {
      const double theta = p.value.a[c];
      const double h = 1e-5 * std::max(1.0, std::abs(theta));
      p.value.a[c] = theta + h;
      const double lp = compute_batch_loss(model, batch, cfg).l_train;
      p.value.a[c] = theta - h;
      const double lm = compute_batch_loss(model, batch, cfg).l_train;
      p.value.a[c] = theta;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = grads[c];
      const double rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-5});
      max_rel = std::max(max_rel, rel);
    }
    block.coords_checked = static_cast<int>(coords.size());
    block.max_rel_err = max_rel;
    block.pass = max_rel < tolerance;
    report.push_back(std::move(block));
  }
  return report;
}

namespace {

struct TrainedArtifacts {
  Model model;
  BpeVocab vocab;
  LossBreakdown final_losses;
};

// Shared by the ablation schedule and the alpha sweep: fresh vocabulary,
// fresh model, full training run on the given dialogues.
TrainedArtifacts train_pipeline(const std::vector<Dialogue>& train_dialogues,
                                const PipelineConfig& cfg) {
  BpeVocab vocab = train_bpe(collect_turn_texts(train_dialogues), cfg.vocab_size, cfg.lowercase);
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  Model model(mc, derive_seed(cfg.train.seed, "init"));
  auto examples =
      build_training_examples(train_dialogues, vocab, mc, cfg.train.per_dialogue_labels);
  Trainer trainer(model, std::move(examples), cfg.train);
  auto history = trainer.run(cfg.train.max_steps);
  LossBreakdown last = history.empty() ? LossBreakdown{} : history.back();
  return {std::move(model), std::move(vocab), last};
}

}  // namespace

std::vector<AblationRow> run_ablation_schedule(const CorpusSplit& split, int total,
                                               const std::vector<MixtureSpec>& rows,
                                               const PipelineConfig& cfg) {
  for (const auto& r : rows)
    if (r.total() != total)
      throw UsageError("mixture row " + std::to_string(r.n_single) + "+" +
                       std::to_string(r.n_multiple) + " does not sum to " +
                       std::to_string(total));
  std::vector<AblationRow> report;
  for (const auto& spec : rows) {
    auto mixture = build_mixture(split.train, spec, cfg.mixture_seed, cfg.mixture_allocation);
    auto trained = train_pipeline(mixture, cfg);
    EvalOptions eopts;
    eopts.max_gen_len = cfg.eval_max_gen_len;
    eopts.smooth_bleu = cfg.smooth_bleu;
    auto zs = zero_shot_eval(trained.model, trained.vocab, split.valid, eopts);
    AblationRow row;
    row.spec = spec;
    if (zs.multiple_only) row.bleu_multiple_only = zs.multiple_only->score;
    row.bleu_overall = zs.overall.score;
    row.final_l_lm = trained.final_losses.l_lm;
    report.push_back(row);
  }
  return report;
}

std::vector<AlphaSweepRow> alpha_sweep(const CorpusSplit& split,
                                       const std::vector<double>& alphas,
                                       const PipelineConfig& cfg) {
  std::vector<AlphaSweepRow> report;
  for (double alpha : alphas) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha grid values must lie in [0, 1]");
    PipelineConfig run_cfg = cfg;
    run_cfg.train.alpha = alpha;
    auto trained = train_pipeline(split.train, run_cfg);
    EvalOptions eopts;
    eopts.max_gen_len = cfg.eval_max_gen_len;
    eopts.smooth_bleu = cfg.smooth_bleu;
    auto zs = zero_shot_eval(trained.model, trained.vocab, split.valid, eopts);
    AlphaSweepRow row;
    row.alpha = alpha;
    if (zs.multiple_only) row.bleu_multiple_only = zs.multiple_only->score;
    row.bleu_overall = zs.overall.score;
    row.final_l_lm = trained.final_losses.l_lm;
    row.final_l_disc = trained.final_losses.l_disc;
    report.push_back(row);
  }
  return report;
}

std::vector<MixtureSpec> default_ablation_rows() {
  return {{2150, 0}, {1836, 314}, {1522, 628}, {1208, 942},
          {894, 1256}, {580, 1570}, {266, 1884}};
}

std::vector<double> default_alpha_grid() { return {0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}; }

}  // namespace dialcomp
