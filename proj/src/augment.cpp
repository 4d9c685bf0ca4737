#include "dialcomp/augment.hpp"

#include <algorithm>
#include <cmath>

#include "dialcomp/errors.hpp"
#include "dialcomp/log.hpp"
#include "dialcomp/rng.hpp"

namespace dialcomp {

namespace {

void validate_config(const AugmentConfig& cfg) {
  if (!(cfg.augment_fraction > 0.0 && cfg.augment_fraction <= 1.0))
    throw UsageError("augment_fraction must lie in (0, 1]");
  if (cfg.augment_fold < 1) throw UsageError("augment_fold must be at least 1");
}

Dialogue assemble_synthetic(const Dialogue& donor, const Dialogue& base,
                            const std::vector<Exchange>& prefix, const Exchange* topic_change,
                            const std::string& id) {
  Dialogue s;
  s.id = id;
  s.exchanges = prefix;
  if (topic_change) s.exchanges.push_back(*topic_change);
  s.exchanges.insert(s.exchanges.end(), base.exchanges.begin(), base.exchanges.end());
  s.domains = donor.domains;
  s.domains.insert(base.domains.begin(), base.domains.end());
  s.task_label = TaskLabel::MultiTask;
  s.origin = Origin::Synthetic;
  s.provenance = Provenance{donor.id, base.id, static_cast<int>(prefix.size()),
                            topic_change != nullptr};
  return s;
}

// A turn's domain is the domain of its first slot annotation; turns without
// annotations carry none.
const std::string* turn_domain(const Turn& t) {
  return t.slots.empty() ? nullptr : &t.slots.front().domain;
}

const std::string& sole_domain(const Dialogue& d) {
  if (d.domains.size() != 1)
    throw DataError("dialogue '" + d.id + "' is not single-task");
  return *d.domains.begin();
}

}  // namespace

std::vector<Exchange> take_prefix(const Dialogue& donor, double fraction) {
  if (donor.exchanges.empty()) throw DataError("dialogue '" + donor.id + "' has no exchanges");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw UsageError("prefix fraction must lie in (0, 1]");
  const int n = donor.exchange_count();
  int take = static_cast<int>(std::floor(fraction * n));
  take = std::clamp(take, 1, n);
  return {donor.exchanges.begin(), donor.exchanges.begin() + take};
}

std::vector<Dialogue> random_augment(const std::vector<Dialogue>& pool,
                                     const AugmentConfig& cfg) {
  if (cfg.strategy != AugmentStrategy::RandomAugment)
    throw UsageError("random_augment called with a non-random strategy");
  validate_config(cfg);
  if (pool.size() < 2) throw DataError("random augmentation needs at least 2 dialogues");

  std::vector<Dialogue> out;
  out.reserve(pool.size() * static_cast<size_t>(cfg.augment_fold));
  for (size_t i = 0; i < pool.size(); ++i) {
    const Dialogue& base = pool[i];
    Rng rng(derive_seed(cfg.seed, base.id));
    for (int k = 0; k < cfg.augment_fold; ++k) {
      size_t j = static_cast<size_t>(rng.below(pool.size() - 1));
      if (j >= i) ++j;  // donor drawn from the pool minus the base itself
      const Dialogue& donor = pool[j];
      const auto prefix = take_prefix(donor, cfg.augment_fraction);
      out.push_back(assemble_synthetic(donor, base, prefix, nullptr,
                                       "rs:" + base.id + ":" + std::to_string(k)));
    }
  }
  return out;
}

std::vector<Dialogue> targeted_augment(const std::vector<Dialogue>& pool,
                                       const std::set<std::set<std::string>>& dev_combos,
                                       const TaskComboDistribution& combo_dist,
                                       const TopicChangeBank& bank, const AugmentConfig& cfg) {
  if (cfg.strategy != AugmentStrategy::TargetedAugment)
    throw UsageError("targeted_augment called with a non-targeted strategy");
  validate_config(cfg);
  if (dev_combos.empty()) throw DataError("targeted augmentation needs development-set combos");

  // Candidate donors grouped by their (single) domain, in pool order.
  std::map<std::string, std::vector<const Dialogue*>> by_domain;
  for (const auto& d : pool) by_domain[sole_domain(d)].push_back(&d);

  std::vector<Dialogue> out;
  size_t skipped = 0, missing_topic_change = 0;
  for (const auto& base : pool) {
    const std::string& base_dom = sole_domain(base);

    // Feasible partner domains: those forming a dev-set combination.
    std::vector<std::pair<std::string, double>> feasible;  // (partner domain, weight)
    for (const auto& [dom, donors] : by_domain) {
      if (dom == base_dom) continue;
      const std::set<std::string> combo{base_dom, dom};
      if (!dev_combos.count(combo)) continue;
      feasible.push_back({dom, combo_dist.mass(combo)});
    }
    if (feasible.empty()) {
      ++skipped;
      continue;
    }
    double total_mass = 0.0;
    for (const auto& [dom, w] : feasible) total_mass += w;
    if (total_mass <= 0.0)
      for (auto& [dom, w] : feasible) w = 1.0;  // uniform when the dist has no mass here

    Rng rng(derive_seed(cfg.seed, base.id));
    for (int k = 0; k < cfg.augment_fold; ++k) {
      // Weighted draw over feasible partner domains.
      double total = 0.0;
      for (const auto& [dom, w] : feasible) total += w;
      const double u = rng.uniform() * total;
      double acc = 0.0;
      const std::string* partner = &feasible.back().first;
      for (const auto& [dom, w] : feasible) {
        acc += w;
        if (u < acc) {
          partner = &dom;
          break;
        }
      }
      const auto& donors = by_domain.at(*partner);
      const Dialogue& donor = *donors[rng.below(donors.size())];
      const auto prefix = take_prefix(donor, cfg.augment_fraction);

      const Exchange* topic_change = nullptr;
      Exchange picked;
      if (cfg.inject_topic_change) {
        auto it = bank.entries.find({*partner, base_dom});
        if (it != bank.entries.end() && !it->second.empty()) {
          picked = it->second[rng.below(it->second.size())];
          topic_change = &picked;
        } else {
          ++missing_topic_change;
        }
      }
      out.push_back(assemble_synthetic(donor, base, prefix, topic_change,
                                       "ts:" + base.id + ":" + std::to_string(k)));
    }
  }
  if (skipped > 0)
    log_info("targeted augmentation skipped " + std::to_string(skipped) +
             " dialogue(s) with no compatible combination");
  if (missing_topic_change > 0)
    log_info(std::to_string(missing_topic_change) +
             " synthetic dialogue(s) had no topic-change exchange for their domain pair");
  if (out.empty()) throw DataError("no compatible combinations");
  return out;
}

TaskComboDistribution estimate_task_combo_distribution(
    const std::vector<Dialogue>& multi_dialogues) {
  std::map<std::set<std::string>, long long> counts;
  long long total = 0;
  for (const auto& d : multi_dialogues) {
    if (!d.is_multi_task()) continue;
    counts[d.domains] += 1;
    total += 1;
  }
  if (total == 0) throw DataError("no multi-task dialogues to estimate combinations from");
  TaskComboDistribution dist;
  for (const auto& [combo, c] : counts)
    dist.probability[combo] = static_cast<double>(c) / static_cast<double>(total);
  return dist;
}

TopicChangeBank extract_topic_changes(const std::vector<Dialogue>& multi_dialogues) {
  TopicChangeBank bank;
  for (const auto& d : multi_dialogues) {
    if (!d.is_multi_task()) continue;
    std::string prev;
    for (size_t e = 0; e < d.exchanges.size(); ++e) {
      const Exchange& ex = d.exchanges[e];
      if (const std::string* dom = turn_domain(ex.user)) {
        if (!prev.empty() && *dom != prev)
          bank.entries[{prev, *dom}].push_back(ex);
        prev = *dom;
      }
      if (const std::string* dom = turn_domain(ex.assistant)) prev = *dom;
    }
  }
  return bank;
}

std::set<std::set<std::string>> observed_combos(const std::vector<Dialogue>& dialogues) {
  std::set<std::set<std::string>> combos;
  for (const auto& d : dialogues)
    if (d.is_multi_task()) combos.insert(d.domains);
  return combos;
}

}  // namespace dialcomp
