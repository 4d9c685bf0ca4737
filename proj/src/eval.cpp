#include "dialcomp/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <unordered_set>

#include "dialcomp/errors.hpp"

namespace dialcomp {

namespace {

// n-grams as separator-joined token strings; '\x1f' cannot appear in
// whitespace-split tokens.
void collect_ngrams(const std::vector<std::string>& tokens, int n,
                    std::map<std::string, long long>& counts) {
  if (static_cast<int>(tokens.size()) < n) return;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    counts[key] += 1;
  }
}

}  // namespace

std::vector<std::string> surface_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                       const std::vector<std::vector<std::string>>& references, bool smooth) {
  if (candidates.size() != references.size())
    throw DataError("corpus_bleu: candidate and reference lists differ in length");
  if (references.empty()) throw DataError("corpus_bleu: empty reference list");

  long long matches[4] = {0, 0, 0, 0};
  long long totals[4] = {0, 0, 0, 0};
  long long cand_len = 0, ref_len = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& cand = candidates[i];
    const auto& ref = references[i];
    cand_len += static_cast<long long>(cand.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      std::map<std::string, long long> cand_counts, ref_counts;
      collect_ngrams(cand, n, cand_counts);
      collect_ngrams(ref, n, ref_counts);
      for (const auto& [gram, count] : cand_counts) {
        totals[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }

  BleuReport report;
  report.smoothed = smooth;
  report.candidate_tokens = cand_len;
  report.reference_tokens = ref_len;

  bool zero_precision = false;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (smooth) {
      p = static_cast<double>(matches[n] + 1) / static_cast<double>(totals[n] + 1);
    } else {
      p = totals[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n]) : 0.0;
    }
    report.precisions[n] = p;
    if (p <= 0.0)
      zero_precision = true;
    else
      log_sum += std::log(p);
  }

  if (cand_len == 0) {
    report.brevity_penalty = 0.0;
    report.score = 0.0;
    return report;
  }
  report.brevity_penalty =
      cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / cand_len) : 1.0;
  report.score =
      zero_precision ? 0.0 : report.brevity_penalty * std::exp(log_sum / 4.0) * 100.0;
  return report;
}

double percent_unseen(size_t valid_distinct, size_t intersection) {
  if (valid_distinct == 0) throw DataError("percent_unseen: empty validation n-gram set");
  return 100.0 * (1.0 - static_cast<double>(intersection) / static_cast<double>(valid_distinct));
}

NGramOverlapReport ngram_overlap_report(const std::vector<std::string>& train_texts,
                                        const std::vector<std::string>& valid_texts, int n,
                                        bool cross_boundaries) {
  if (n < 1) throw UsageError("n-gram order must be at least 1");
  if (train_texts.empty() || valid_texts.empty())
    throw DataError("n-gram overlap needs non-empty corpora");

  auto distinct = [&](const std::vector<std::string>& texts) {
    std::unordered_set<std::string> grams;
    std::map<std::string, long long> counts;
    if (cross_boundaries) {
      std::vector<std::string> all;
      for (const auto& t : texts) {
        auto toks = surface_tokens(t);
        all.insert(all.end(), toks.begin(), toks.end());
      }
      collect_ngrams(all, n, counts);
    } else {
      for (const auto& t : texts) collect_ngrams(surface_tokens(t), n, counts);
    }
    for (const auto& [gram, c] : counts) grams.insert(gram);
    return grams;
  };

  const auto train_set = distinct(train_texts);
  const auto valid_set = distinct(valid_texts);

  NGramOverlapReport report;
  report.n = n;
  report.train_distinct = train_set.size();
  report.valid_distinct = valid_set.size();
  for (const auto& g : valid_set)
    if (train_set.count(g)) ++report.intersection;
  if (report.valid_distinct == 0)
    throw DataError("validation corpus has no n-grams of order " + std::to_string(n));
  report.percent_unseen = percent_unseen(report.valid_distinct, report.intersection);
  return report;
}

ZeroShotResult zero_shot_eval(const Model& model, const BpeVocab& vocab,
                              const std::vector<Dialogue>& eval_dialogues,
                              const EvalOptions& opts) {
  std::vector<std::vector<std::string>> cands, refs;
  std::vector<bool> from_multi;
  for (const auto& d : eval_dialogues) {
    if (!d.task_label) throw DataError("dialogue '" + d.id + "' is unlabeled; relabel first");
    std::vector<int> context;
    context.push_back(BpeVocab::kBos);
    for (size_t i = 0; i < d.exchanges.size(); ++i) {
      const Exchange& ex = d.exchanges[i];
      if (i > 0) context.push_back(BpeVocab::kSep);
      const auto user_ids = encode(ex.user.text, vocab);
      context.insert(context.end(), user_ids.begin(), user_ids.end());

      auto generated = model.generate(context, opts.max_gen_len, GenerateMode::Greedy());
      cands.push_back(surface_tokens(decode(generated, vocab)));
      refs.push_back(surface_tokens(ex.assistant.text));
      from_multi.push_back(d.is_multi_task());

      context.push_back(BpeVocab::kSep);
      const auto asst_ids = encode(ex.assistant.text, vocab);
      context.insert(context.end(), asst_ids.begin(), asst_ids.end());
    }
  }
  if (cands.empty()) throw DataError("no contexts to evaluate");

  ZeroShotResult result;
  result.contexts_evaluated = static_cast<int>(cands.size());
  result.overall = corpus_bleu(cands, refs, opts.smooth_bleu);

  std::vector<std::vector<std::string>> mc, mr;
  for (size_t i = 0; i < cands.size(); ++i) {
    if (from_multi[i]) {
      mc.push_back(cands[i]);
      mr.push_back(refs[i]);
    }
  }
  result.multi_contexts_evaluated = static_cast<int>(mc.size());
  if (!mc.empty()) result.multiple_only = corpus_bleu(mc, mr, opts.smooth_bleu);
  return result;
}

std::vector<OverlapTableRow> overlap_table(const CorpusSplit& split, int n,
                                           bool cross_boundaries) {
  auto filter = [](const std::vector<Dialogue>& pool, std::optional<TaskLabel> label) {
    std::vector<Dialogue> out;
    for (const auto& d : pool)
      if (!label || d.task_label == *label) out.push_back(d);
    return out;
  };
  const auto mul_train = collect_turn_texts(filter(split.train, TaskLabel::MultiTask));
  const auto sng_train = collect_turn_texts(filter(split.train, TaskLabel::SingleTask));
  const auto all_train = collect_turn_texts(split.train);
  const auto mul_valid = collect_turn_texts(filter(split.valid, TaskLabel::MultiTask));
  const auto sng_valid = collect_turn_texts(filter(split.valid, TaskLabel::SingleTask));

  struct Pair {
    const char* train_label;
    const std::vector<std::string>* train;
    const char* valid_label;
    const std::vector<std::string>* valid;
  };
  const Pair pairs[] = {
      {"mul_train", &mul_train, "sng_valid", &sng_valid},
      {"mul_train", &mul_train, "mul_valid", &mul_valid},
      {"sng_train", &sng_train, "mul_valid", &mul_valid},
      {"sng_train", &sng_train, "sng_valid", &sng_valid},
      {"all_train", &all_train, "mul_valid", &mul_valid},
      {"all_train", &all_train, "sng_valid", &sng_valid},
  };
  std::vector<OverlapTableRow> rows;
  for (const auto& p : pairs) {
    if (p.train->empty() || p.valid->empty()) continue;  // stratum missing at toy scale
    OverlapTableRow row;
    row.train_label = p.train_label;
    row.valid_label = p.valid_label;
    row.report = ngram_overlap_report(*p.train, *p.valid, n, cross_boundaries);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dialcomp
