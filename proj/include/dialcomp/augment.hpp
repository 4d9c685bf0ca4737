#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dialcomp/corpus.hpp"

namespace dialcomp {

enum class AugmentStrategy { RandomAugment, TargetedAugment };

struct AugmentConfig {
  AugmentStrategy strategy = AugmentStrategy::RandomAugment;
  double augment_fraction = 0.5;  // share of the donor dialogue copied as prefix
  int augment_fold = 1;           // synthetic dialogues per base dialogue
  bool inject_topic_change = false;
  uint64_t seed = 0;
};

// Exchanges harvested at the task-switch boundaries of human multi-task
// dialogues, keyed by (previous domain, new domain).
struct TopicChangeBank {
  std::map<std::pair<std::string, std::string>, std::vector<Exchange>> entries;

  bool has(const std::string& from, const std::string& to) const {
    return entries.count({from, to}) > 0;
  }
  size_t size() const { return entries.size(); }
};

// Empirical distribution of unordered domain combinations in multi-task
// dialogues.
struct TaskComboDistribution {
  std::map<std::set<std::string>, double> probability;

  double mass(const std::set<std::string>& combo) const {
    auto it = probability.find(combo);
    return it == probability.end() ? 0.0 : it->second;
  }
};

// First clamp(floor(fraction * n), 1, n) exchanges of the donor dialogue.
std::vector<Exchange> take_prefix(const Dialogue& donor, double fraction);

// For every base dialogue, fold synthetic dialogues whose prefix comes from
// a donor sampled uniformly from the rest of the pool. Every base dialogue
// uses its own RNG stream derived from (seed, dialogue id), so output is
// independent of processing order.
std::vector<Dialogue> random_augment(const std::vector<Dialogue>& pool,
                                     const AugmentConfig& cfg);

// Donors restricted so the combined domain pair exists in the development
// set; among feasible combinations sampling follows combo_dist renormalized
// over what is feasible (uniform if no feasible combination carries mass).
// Optionally injects a topic-change exchange between prefix and body.
std::vector<Dialogue> targeted_augment(const std::vector<Dialogue>& pool,
                                       const std::set<std::set<std::string>>& dev_combos,
                                       const TaskComboDistribution& combo_dist,
                                       const TopicChangeBank& bank, const AugmentConfig& cfg);

TaskComboDistribution estimate_task_combo_distribution(
    const std::vector<Dialogue>& multi_dialogues);

// Walks each multi-task dialogue's turns and records the exchange at every
// index where the user turn's annotated domain differs from the nearest
// preceding annotated turn's domain.
TopicChangeBank extract_topic_changes(const std::vector<Dialogue>& multi_dialogues);

// Domain combinations present in a dialogue list (multi-task entries only).
std::set<std::set<std::string>> observed_combos(const std::vector<Dialogue>& dialogues);

}  // namespace dialcomp
