#include "dialcomp/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "dialcomp/errors.hpp"
#include "dialcomp/log.hpp"
#include "dialcomp/rng.hpp"

namespace dialcomp {

namespace {

using json = nlohmann::ordered_json;

std::string normalize_whitespace(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // leading whitespace trimmed
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

std::string to_lower_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

Turn parse_turn(const json& jt, const std::string& dialogue_id, size_t index) {
  Turn t;
  const std::string speaker = jt.value("speaker", "");
  if (speaker == "user") {
    t.speaker = Speaker::User;
  } else if (speaker == "assistant") {
    t.speaker = Speaker::Assistant;
  } else {
    throw DataError("dialogue '" + dialogue_id + "' turn " + std::to_string(index) +
                    ": speaker must be 'user' or 'assistant'");
  }
  t.text = normalize_whitespace(jt.value("text", ""));
  if (t.text.empty())
    throw DataError("dialogue '" + dialogue_id + "' turn " + std::to_string(index) +
                    ": empty text");
  if (jt.contains("slots")) {
    for (const auto& js : jt.at("slots")) {
      SlotAnnotation a;
      a.domain = to_lower_ascii(js.value("domain", ""));
      a.slot = js.value("slot", "");
      a.value = js.value("value", "");
      if (a.domain.empty())
        throw DataError("dialogue '" + dialogue_id + "' turn " + std::to_string(index) +
                        ": slot annotation without domain");
      t.slots.push_back(std::move(a));
    }
  }
  return t;
}

}  // namespace

std::vector<Dialogue> parse_corpus(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("corpus JSON parse error at byte " + std::to_string(e.byte) + ": " +
                    e.what());
  }
  if (!root.is_array()) throw DataError("corpus JSON must be a top-level array of dialogues");

  std::vector<Dialogue> out;
  std::unordered_set<std::string> seen_ids;
  for (const auto& jd : root) {
    Dialogue d;
    d.id = jd.value("id", "");
    if (d.id.empty()) throw DataError("dialogue with missing or empty id");
    if (!seen_ids.insert(d.id).second) throw DataError("duplicate dialogue id '" + d.id + "'");
    if (!jd.contains("turns") || !jd.at("turns").is_array() || jd.at("turns").empty())
      throw DataError("dialogue '" + d.id + "' has no turns");

    const auto& turns = jd.at("turns");
    std::vector<Turn> parsed;
    parsed.reserve(turns.size());
    for (size_t i = 0; i < turns.size(); ++i) parsed.push_back(parse_turn(turns[i], d.id, i));

    for (size_t i = 0; i < parsed.size(); ++i) {
      const Speaker expected = (i % 2 == 0) ? Speaker::User : Speaker::Assistant;
      if (parsed[i].speaker != expected)
        throw DataError("dialogue '" + d.id +
                        "': turns must alternate user/assistant starting with user (turn " +
                        std::to_string(i) + ")");
    }
    if (parsed.size() % 2 == 1) {
      log_warn("dialogue '" + d.id + "': dropping trailing unpaired user turn");
      parsed.pop_back();
    }
    if (parsed.empty())
      throw DataError("dialogue '" + d.id + "' has no complete user/assistant exchange");

    for (size_t i = 0; i + 1 < parsed.size(); i += 2)
      d.exchanges.push_back({std::move(parsed[i]), std::move(parsed[i + 1])});
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Dialogue> parse_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

std::string corpus_to_json(const std::vector<Dialogue>& dialogues) {
  json root = json::array();
  for (const auto& d : dialogues) {
    json jd;
    jd["id"] = d.id;
    json turns = json::array();
    for (const auto& ex : d.exchanges) {
      for (const Turn* t : {&ex.user, &ex.assistant}) {
        json jt;
        jt["speaker"] = t->speaker == Speaker::User ? "user" : "assistant";
        jt["text"] = t->text;
        json slots = json::array();
        for (const auto& s : t->slots)
          slots.push_back({{"domain", s.domain}, {"slot", s.slot}, {"value", s.value}});
        jt["slots"] = std::move(slots);
        turns.push_back(std::move(jt));
      }
    }
    jd["turns"] = std::move(turns);
    root.push_back(std::move(jd));
  }
  return root.dump(2) + "\n";
}

TaskLabel derive_task_label(Dialogue& d) {
  std::set<std::string> domains;
  for (const auto& ex : d.exchanges) {
    for (const Turn* t : {&ex.user, &ex.assistant})
      for (const auto& slot : t->slots) domains.insert(slot.domain);
  }
  if (domains.empty()) throw UnlabeledDialogueError(d.id);
  d.domains = std::move(domains);
  d.task_label = d.domains.size() == 1 ? TaskLabel::SingleTask : TaskLabel::MultiTask;
  return *d.task_label;
}

size_t relabel_corpus(std::vector<Dialogue>& dialogues) {
  std::vector<Dialogue> kept;
  kept.reserve(dialogues.size());
  size_t dropped = 0;
  for (auto& d : dialogues) {
    try {
      derive_task_label(d);
      kept.push_back(std::move(d));
    } catch (const UnlabeledDialogueError&) {
      ++dropped;
    }
  }
  dialogues = std::move(kept);
  if (dropped > 0)
    log_info("dropped " + std::to_string(dropped) + " dialogue(s) without slot annotations");
  return dropped;
}

CorpusSplit make_splits(const std::vector<Dialogue>& dialogues, const SplitFractions& fractions,
                        uint64_t seed) {
  if (dialogues.size() < 3) throw DataError("need at least 3 dialogues to split");
  if (fractions.train <= 0 || fractions.valid <= 0 || fractions.test <= 0)
    throw DataError("split fractions must be positive");
  if (std::abs(fractions.train + fractions.valid + fractions.test - 1.0) > 1e-9)
    throw DataError("split fractions must sum to 1");
  for (const auto& d : dialogues)
    if (!d.task_label) throw DataError("dialogue '" + d.id + "' is unlabeled; relabel first");

  // Stratum 0 = single task, 1 = multi task.
  std::vector<const Dialogue*> strata[2];
  for (const auto& d : dialogues) strata[d.is_single_task() ? 0 : 1].push_back(&d);
  for (int g = 0; g < 2; ++g) {
    if (strata[g].empty())
      log_warn(std::string("stratum '") + (g == 0 ? "single" : "multi") +
               "' is empty; proceeding without it");
    Rng rng(derive_seed(seed, g == 0 ? "split.single" : "split.multi"));
    rng.shuffle(strata[g]);
  }

  const size_t n = dialogues.size();
  const size_t want_valid = static_cast<size_t>(std::floor(fractions.valid * n));
  const size_t want_test = static_cast<size_t>(std::floor(fractions.test * n));

  // Per-stratum floor allocation, then a largest-remainder fixup to hit the
  // global split sizes exactly.
  struct Alloc {
    size_t valid = 0, test = 0;
  };
  Alloc alloc[2];
  for (int g = 0; g < 2; ++g) {
    alloc[g].valid = static_cast<size_t>(std::floor(fractions.valid * strata[g].size()));
    alloc[g].test = static_cast<size_t>(std::floor(fractions.test * strata[g].size()));
  }
  auto fixup = [&](size_t want, size_t Alloc::* member, double frac) {
    size_t have = alloc[0].*member + alloc[1].*member;
    while (have < want) {
      // Give the extra dialogue to the stratum with the larger fractional
      // remainder; ties favor the larger stratum, then the single stratum.
      double rem[2];
      for (int g = 0; g < 2; ++g)
        rem[g] = frac * strata[g].size() - static_cast<double>(alloc[g].*member);
      int pick;
      if (rem[0] != rem[1]) {
        pick = rem[0] > rem[1] ? 0 : 1;
      } else {
        pick = strata[0].size() >= strata[1].size() ? 0 : 1;
      }
      // Never take more than the stratum holds (leave at least train's share).
      if (alloc[pick].valid + alloc[pick].test + 1 > strata[pick].size()) pick = 1 - pick;
      alloc[pick].*member += 1;
      ++have;
    }
  };
  fixup(want_valid, &Alloc::valid, fractions.valid);
  fixup(want_test, &Alloc::test, fractions.test);

  CorpusSplit split;
  split.split_seed = seed;
  for (int g = 0; g < 2; ++g) {
    const auto& pool = strata[g];
    const size_t nv = alloc[g].valid, nt = alloc[g].test;
    size_t i = 0;
    for (; i < nv && i < pool.size(); ++i) split.valid.push_back(*pool[i]);
    for (; i < nv + nt && i < pool.size(); ++i) split.test.push_back(*pool[i]);
    for (; i < pool.size(); ++i) split.train.push_back(*pool[i]);
  }
  return split;
}

std::string domain_combo_key(const std::set<std::string>& domains) {
  std::string key;
  for (const auto& d : domains) {
    if (!key.empty()) key += ",";
    key += d;
  }
  return key;
}

namespace {

std::vector<const Dialogue*> pick_from_stratum(const std::vector<const Dialogue*>& pool,
                                               int want, Rng& rng, MixtureAllocation allocation,
                                               const char* stratum_name) {
  if (static_cast<int>(pool.size()) < want)
    throw DataError(std::string("mixture needs ") + std::to_string(want) + " " + stratum_name +
                    " dialogue(s) but the pool holds " + std::to_string(pool.size()));
  std::vector<const Dialogue*> shuffled = pool;
  rng.shuffle(shuffled);
  if (allocation == MixtureAllocation::Random || want == 0)
    return {shuffled.begin(), shuffled.begin() + want};

  // Greedy proportional allocation over domain-combination groups: floor of
  // each group's ideal share, then remainders by largest fraction (ties by
  // group key).
  std::map<std::string, std::vector<const Dialogue*>> groups;
  for (const Dialogue* d : shuffled) groups[domain_combo_key(d->domains)].push_back(d);
  const double total = static_cast<double>(pool.size());
  std::map<std::string, int> quota;
  int assigned = 0;
  std::vector<std::pair<double, std::string>> remainders;
  for (const auto& [key, members] : groups) {
    const double ideal = want * static_cast<double>(members.size()) / total;
    int q = static_cast<int>(std::floor(ideal));
    if (q > static_cast<int>(members.size())) q = static_cast<int>(members.size());
    quota[key] = q;
    assigned += q;
    remainders.push_back({ideal - q, key});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  size_t ri = 0;
  while (assigned < want) {
    const auto& key = remainders[ri % remainders.size()].second;
    if (quota[key] < static_cast<int>(groups[key].size())) {
      quota[key] += 1;
      ++assigned;
    }
    ++ri;
  }
  std::vector<const Dialogue*> picked;
  picked.reserve(want);
  for (const auto& [key, members] : groups)
    picked.insert(picked.end(), members.begin(), members.begin() + quota[key]);
  return picked;
}

}  // namespace

std::vector<Dialogue> build_mixture(const std::vector<Dialogue>& train_pool,
                                    const MixtureSpec& spec, uint64_t seed,
                                    MixtureAllocation allocation) {
  if (spec.n_single < 0 || spec.n_multiple < 0)
    throw DataError("mixture counts must be non-negative");
  std::vector<const Dialogue*> singles, multis;
  for (const auto& d : train_pool) {
    if (!d.task_label) throw DataError("dialogue '" + d.id + "' is unlabeled; relabel first");
    (d.is_single_task() ? singles : multis).push_back(&d);
  }
  Rng rng_single(derive_seed(seed, "mixture.single"));
  Rng rng_multi(derive_seed(seed, "mixture.multi"));
  auto picked_single =
      pick_from_stratum(singles, spec.n_single, rng_single, allocation, "single-task");
  auto picked_multi =
      pick_from_stratum(multis, spec.n_multiple, rng_multi, allocation, "multi-task");

  std::vector<Dialogue> out;
  out.reserve(picked_single.size() + picked_multi.size());
  for (const Dialogue* d : picked_single) out.push_back(*d);
  for (const Dialogue* d : picked_multi) out.push_back(*d);
  return out;
}

std::vector<std::string> collect_turn_texts(const std::vector<Dialogue>& dialogues) {
  std::vector<std::string> texts;
  for (const auto& d : dialogues)
    for (const auto& ex : d.exchanges) {
      texts.push_back(ex.user.text);
      texts.push_back(ex.assistant.text);
    }
  return texts;
}

}  // namespace dialcomp
