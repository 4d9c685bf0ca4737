#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dialcomp/corpus.hpp"
#include "dialcomp/model.hpp"
#include "dialcomp/tokenizer.hpp"

namespace dialcomp {

struct BleuReport {
  double score = 0.0;  // [0, 100]
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  long long candidate_tokens = 0;
  long long reference_tokens = 0;
  bool smoothed = false;
};

struct NGramOverlapReport {
  int n = 4;
  size_t train_distinct = 0;
  size_t valid_distinct = 0;
  size_t intersection = 0;
  double percent_unseen = 0.0;  // 100 * (1 - I / V)
};

struct ZeroShotResult {
  std::optional<BleuReport> multiple_only;  // absent when no multi-task dialogues
  BleuReport overall;
  int contexts_evaluated = 0;
  int multi_contexts_evaluated = 0;
};

struct EvalOptions {
  int max_gen_len = 64;
  bool smooth_bleu = false;
};

// Corpus-level BLEU-4: clipped n-gram counts aggregated over the corpus,
// geometric mean of p1..p4, brevity penalty exp(1 - r/c) when the candidate
// corpus is shorter than the reference corpus. Unsmoothed by default (any
// zero precision collapses the score); the add-one variant divides
// (matches + 1) by (total + 1) for every order, for tiny fixtures.
BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                       const std::vector<std::vector<std::string>>& references,
                       bool smooth = false);

// Whitespace tokenization after ASCII lowercasing, the convention all
// surface-level metrics share.
std::vector<std::string> surface_tokens(const std::string& text);

double percent_unseen(size_t valid_distinct, size_t intersection);

// Distinct n-grams are collected per text unit (n-grams never cross unit
// boundaries unless cross_boundaries is set).
NGramOverlapReport ngram_overlap_report(const std::vector<std::string>& train_texts,
                                        const std::vector<std::string>& valid_texts, int n,
                                        bool cross_boundaries = false);

// Greedy-generates every assistant turn from its gold context and scores
// corpus BLEU over multi-task-dialogue contexts and over all contexts.
ZeroShotResult zero_shot_eval(const Model& model, const BpeVocab& vocab,
                              const std::vector<Dialogue>& eval_dialogues,
                              const EvalOptions& opts = {});

// The six train/valid split pairings of the overlap diagnostic.
struct OverlapTableRow {
  std::string train_label;
  std::string valid_label;
  NGramOverlapReport report;
};
std::vector<OverlapTableRow> overlap_table(const CorpusSplit& split, int n,
                                           bool cross_boundaries = false);

}  // namespace dialcomp
