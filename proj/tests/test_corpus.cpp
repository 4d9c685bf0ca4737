#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "dialcomp/corpus.hpp"
#include "dialcomp/errors.hpp"

using namespace dialcomp;

namespace {

std::string fixture_path(const std::string& name) {
  return std::string(DIALCOMP_FIXTURE_DIR) + "/" + name;
}

Dialogue make_dialogue(const std::string& id, const std::vector<std::string>& user_domains) {
  Dialogue d;
  d.id = id;
  for (size_t i = 0; i < user_domains.size(); ++i) {
    Exchange ex;
    ex.user.speaker = Speaker::User;
    ex.user.text = "user turn " + std::to_string(i);
    if (!user_domains[i].empty())
      ex.user.slots.push_back({user_domains[i], "slot", "value"});
    ex.assistant.speaker = Speaker::Assistant;
    ex.assistant.text = "assistant turn " + std::to_string(i);
    d.exchanges.push_back(std::move(ex));
  }
  return d;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("parses a single two-exchange hotel dialogue") {
  const std::string text = R"([{"id":"x","turns":[
    {"speaker":"user","text":"a hotel please","slots":[{"domain":"hotel","slot":"type","value":"hotel"}]},
    {"speaker":"assistant","text":"sure","slots":[]},
    {"speaker":"user","text":"book it","slots":[]},
    {"speaker":"assistant","text":"done","slots":[]}]}])";
  auto dialogues = parse_corpus(text);
  REQUIRE(dialogues.size() == 1);
  CHECK(dialogues[0].id == "x");
  CHECK(dialogues[0].exchange_count() == 2);
  derive_task_label(dialogues[0]);
  CHECK(dialogues[0].domains == std::set<std::string>{"hotel"});
}

TEST_CASE("assistant-first turn order is a structural error") {
  const std::string text = R"([{"id":"bad","turns":[
    {"speaker":"assistant","text":"hello","slots":[]},
    {"speaker":"user","text":"hi","slots":[]}]}])";
  CHECK_THROWS_AS(parse_corpus(text), DataError);
}

TEST_CASE("consecutive same-speaker turns are a structural error naming the dialogue") {
  const std::string text = R"([{"id":"dup-speaker","turns":[
    {"speaker":"user","text":"a","slots":[]},
    {"speaker":"user","text":"b","slots":[]}]}])";
  try {
    parse_corpus(text);
    FAIL("expected structural error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("dup-speaker") != std::string::npos);
  }
}

TEST_CASE("trailing unpaired user turn is dropped, duplicate ids rejected") {
  const std::string odd = R"([{"id":"odd","turns":[
    {"speaker":"user","text":"a","slots":[]},
    {"speaker":"assistant","text":"b","slots":[]},
    {"speaker":"user","text":"dangling","slots":[]}]}])";
  auto dialogues = parse_corpus(odd);
  REQUIRE(dialogues.size() == 1);
  CHECK(dialogues[0].exchange_count() == 1);

  const std::string dup = R"([
    {"id":"same","turns":[{"speaker":"user","text":"a","slots":[]},{"speaker":"assistant","text":"b","slots":[]}]},
    {"id":"same","turns":[{"speaker":"user","text":"c","slots":[]},{"speaker":"assistant","text":"d","slots":[]}]}])";
  CHECK_THROWS_AS(parse_corpus(dup), DataError);
}

TEST_CASE("malformed JSON reports a byte offset") {
  try {
    parse_corpus("[{\"id\": }]");
    FAIL("expected parse error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("five-dialogue fixture parses to the hand-written listing") {
  auto dialogues = parse_corpus_file(fixture_path("mini_corpus.json"));
  relabel_corpus(dialogues);
  REQUIRE(dialogues.size() == 5);

  struct Expected {
    const char* id;
    int exchanges;
    std::set<std::string> domains;
    TaskLabel label;
  };
  const Expected expected[] = {
      {"d01", 2, {"hotel"}, TaskLabel::SingleTask},
      {"d02", 2, {"train"}, TaskLabel::SingleTask},
      {"d03", 3, {"hotel", "train"}, TaskLabel::MultiTask},
      {"d04", 1, {"taxi"}, TaskLabel::SingleTask},
      {"d05", 3, {"taxi", "restaurant"}, TaskLabel::MultiTask},
  };
  for (size_t i = 0; i < 5; ++i) {
    CHECK(dialogues[i].id == expected[i].id);
    CHECK(dialogues[i].exchange_count() == expected[i].exchanges);
    CHECK(dialogues[i].domains == expected[i].domains);
    CHECK(dialogues[i].task_label == expected[i].label);
  }

  // total exchange count equals the per-dialogue sum
  int total = 0;
  for (const auto& d : dialogues) total += d.exchange_count();
  CHECK(total == 2 + 2 + 3 + 1 + 3);

  // d05 matches the annotated-turn trace: turns 1 (taxi), 3 (taxi), 5 (restaurant)
  CHECK(dialogues[4].is_multi_task());
}

TEST_CASE("derive_task_label covers single, multi, unlabeled and is idempotent") {
  auto single = make_dialogue("s", {"hotel", "hotel"});
  CHECK(derive_task_label(single) == TaskLabel::SingleTask);
  CHECK(single.domains == std::set<std::string>{"hotel"});

  auto multi = make_dialogue("m", {"hotel", "train"});
  CHECK(derive_task_label(multi) == TaskLabel::MultiTask);
  CHECK(multi.domains == std::set<std::string>{"hotel", "train"});

  auto unlabeled = make_dialogue("u", {"", ""});
  CHECK_THROWS_AS(derive_task_label(unlabeled), UnlabeledDialogueError);

  // idempotent
  auto again = multi;
  CHECK(derive_task_label(again) == TaskLabel::MultiTask);
  CHECK(again.domains == multi.domains);

  // permutation-invariant with respect to annotation order within a turn
  Dialogue perm = make_dialogue("p", {"hotel"});
  perm.exchanges[0].user.slots.push_back({"train", "s", "v"});
  Dialogue perm2 = perm;
  std::swap(perm2.exchanges[0].user.slots[0], perm2.exchanges[0].user.slots[1]);
  derive_task_label(perm);
  derive_task_label(perm2);
  CHECK(perm.domains == perm2.domains);
  CHECK(perm.task_label == perm2.task_label);
}

TEST_CASE("relabel_corpus drops annotation-free dialogues with a count") {
  std::vector<Dialogue> pool;
  pool.push_back(make_dialogue("a", {"hotel"}));
  pool.push_back(make_dialogue("b", {""}));
  pool.push_back(make_dialogue("c", {"train", "taxi"}));
  CHECK(relabel_corpus(pool) == 1);
  REQUIRE(pool.size() == 2);
  CHECK(pool[0].id == "a");
  CHECK(pool[1].id == "c");
}

TEST_CASE("make_splits: sizes, determinism, disjointness") {
  std::vector<Dialogue> pool;
  for (int i = 0; i < 10; ++i)
    pool.push_back(make_dialogue("d" + std::to_string(i), {i < 6 ? "hotel" : "train"}));
  relabel_corpus(pool);

  auto s1 = make_splits(pool, {0.8, 0.1, 0.1}, 7);
  CHECK(s1.train.size() == 8);
  CHECK(s1.valid.size() == 1);
  CHECK(s1.test.size() == 1);

  auto s2 = make_splits(pool, {0.8, 0.1, 0.1}, 7);
  auto ids = [](const std::vector<Dialogue>& v) {
    std::vector<std::string> out;
    for (const auto& d : v) out.push_back(d.id);
    return out;
  };
  CHECK(ids(s1.train) == ids(s2.train));
  CHECK(ids(s1.valid) == ids(s2.valid));
  CHECK(ids(s1.test) == ids(s2.test));

  std::set<std::string> seen;
  for (const auto* part : {&s1.train, &s1.valid, &s1.test})
    for (const auto& d : *part) CHECK(seen.insert(d.id).second);
  CHECK(seen.size() == 10);

  std::vector<Dialogue> tiny(pool.begin(), pool.begin() + 2);
  CHECK_THROWS_AS(make_splits(tiny, {0.8, 0.1, 0.1}, 1), DataError);
  CHECK_THROWS_AS(make_splits(pool, {0.8, 0.3, 0.1}, 1), DataError);
}

TEST_CASE("make_splits keeps the label ratio within one dialogue per stratum") {
  // 60 single-task, 40 multi-task; the stratified rule allocates
  // floor(0.1*60)=6 single and floor(0.1*40)=4 multi to valid and test,
  // leaving 48+32 for train (hand-enumerated expectation).
  std::vector<Dialogue> pool;
  for (int i = 0; i < 60; ++i) pool.push_back(make_dialogue("s" + std::to_string(i), {"hotel"}));
  for (int i = 0; i < 40; ++i)
    pool.push_back(make_dialogue("m" + std::to_string(i), {"hotel", "train"}));
  relabel_corpus(pool);

  auto split = make_splits(pool, {0.8, 0.1, 0.1}, 123);
  auto count = [](const std::vector<Dialogue>& v) {
    std::pair<int, int> c{0, 0};
    for (const auto& d : v) (d.is_single_task() ? c.first : c.second) += 1;
    return c;
  };
  CHECK(count(split.train) == std::pair<int, int>{48, 32});
  CHECK(count(split.valid) == std::pair<int, int>{6, 4});
  CHECK(count(split.test) == std::pair<int, int>{6, 4});
}

TEST_CASE("build_mixture returns exact counts and is deterministic") {
  std::vector<Dialogue> pool;
  for (int i = 0; i < 6; ++i)
    pool.push_back(make_dialogue("s" + std::to_string(i), {i % 2 ? "hotel" : "train"}));
  for (int i = 0; i < 4; ++i)
    pool.push_back(make_dialogue("m" + std::to_string(i), {"hotel", "train"}));
  relabel_corpus(pool);

  auto mix = build_mixture(pool, {3, 2}, 11);
  REQUIRE(mix.size() == 5);
  int single = 0, multi = 0;
  std::set<std::string> ids;
  for (const auto& d : mix) {
    (d.is_single_task() ? single : multi) += 1;
    ids.insert(d.id);
  }
  CHECK(single == 3);
  CHECK(multi == 2);
  CHECK(ids.size() == 5);  // without replacement

  auto mix2 = build_mixture(pool, {3, 2}, 11);
  REQUIRE(mix2.size() == mix.size());
  for (size_t i = 0; i < mix.size(); ++i) CHECK(mix[i].id == mix2[i].id);

  CHECK_THROWS_AS(build_mixture(pool, {7, 0}, 1), DataError);
  CHECK_THROWS_AS(build_mixture(pool, {0, 5}, 1), DataError);
}

TEST_CASE("build_mixture allocates domains proportionally") {
  // 40 hotel vs 20 train singles; asking for 30 gives quotas
  // floor(30*40/60)=20 hotel and floor(30*20/60)=10 train exactly.
  std::vector<Dialogue> pool;
  for (int i = 0; i < 40; ++i) pool.push_back(make_dialogue("h" + std::to_string(i), {"hotel"}));
  for (int i = 0; i < 20; ++i) pool.push_back(make_dialogue("t" + std::to_string(i), {"train"}));
  relabel_corpus(pool);

  auto mix = build_mixture(pool, {30, 0}, 5);
  int hotel = 0, train = 0;
  for (const auto& d : mix) (*d.domains.begin() == "hotel" ? hotel : train) += 1;
  CHECK(hotel == 20);
  CHECK(train == 10);
}

}  // TEST_SUITE
