#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialcomp/augment.hpp"
#include "dialcomp/corpus.hpp"
#include "dialcomp/eval.hpp"
#include "dialcomp/train.hpp"

namespace dialcomp {

// Resolved run configuration: built-in defaults, overlaid by an optional
// JSON config file, overlaid by dotted-path flag overrides
// (e.g. "train.alpha=0.001"). The resolved document and the override list
// are both echoed into the run manifest.
class ExperimentConfig {
 public:
  static ExperimentConfig defaults();
  static ExperimentConfig load(const std::string& config_path,
                               const std::vector<std::string>& overrides);

  const nlohmann::ordered_json& json() const { return doc_; }
  nlohmann::ordered_json& json() { return doc_; }
  const std::vector<std::string>& overrides() const { return overrides_; }

  std::string corpus_path() const;
  std::string out_dir() const;
  uint64_t root_seed() const;

  SplitFractions split_fractions() const;
  uint64_t split_seed() const;
  MixtureAllocation mixture_allocation() const;
  int vocab_size() const;
  bool lowercase() const;
  AugmentConfig augment_config() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  EvalOptions eval_options() const;
  int ngram_n() const;
  bool cross_turn_ngrams() const;
  std::vector<MixtureSpec> ablation_rows() const;
  int ablation_total() const;
  std::vector<double> alpha_grid() const;
  std::string eval_split_name() const;
  double gradcheck_tolerance() const;

  void apply_override(const std::string& dotted);

 private:
  nlohmann::ordered_json doc_;
  std::vector<std::string> overrides_;
};

uint64_t fnv1a64(const std::string& bytes);
std::string fnv1a64_hex(const std::string& bytes);
std::string hash_file(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Subcommand entry points shared by the CLI binary and the test suites.
// Each writes its artifacts plus a manifest under the configured output
// directory and returns a process exit code.
int run_preprocess(const ExperimentConfig& cfg);
int run_augment(const ExperimentConfig& cfg);
int run_train(const ExperimentConfig& cfg);
int run_eval(const ExperimentConfig& cfg);
int run_ablation(const ExperimentConfig& cfg);
int run_alpha_sweep(const ExperimentConfig& cfg);
int run_overlap(const ExperimentConfig& cfg);
int run_gradcheck(const ExperimentConfig& cfg);

// Table-2 shaped comparison emitted by the zero-shot protocol: one row per
// training-data arm.
struct ZeroShotComparisonRow {
  std::string data_label;  // e.g. "sng", "sng+rs", "sng+ts"
  std::optional<double> bleu_multiple_only;
  double bleu_overall = 0.0;
};
void write_zero_shot_comparison(const std::vector<ZeroShotComparisonRow>& rows,
                                const std::string& json_path, const std::string& csv_path);

// Splits persisted as id arrays; reload them against a parsed corpus.
void write_split_files(const CorpusSplit& split, const std::string& splits_dir);
CorpusSplit load_split_files(const std::vector<Dialogue>& labeled_corpus,
                             const std::string& splits_dir);

}  // namespace dialcomp
