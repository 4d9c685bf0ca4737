#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dialcomp/errors.hpp"
#include "dialcomp/model.hpp"
#include "dialcomp/tokenizer.hpp"
#include "forward_oracle.hpp"

using namespace dialcomp;

namespace {

ModelConfig tiny_config(int vocab = 32) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.model_dim = 16;
  cfg.ffn_dim = 32;
  cfg.dropout_rate = 0.0;
  cfg.max_context_len = 64;
  cfg.vocab_size = vocab;
  return cfg;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK(cfg.head_dim() == 8);
  cfg.model_dim = 18;  // not divisible by 2 heads? 18/2=9 fine; make it fail
  cfg.num_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = tiny_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("single-position context: head summary equals that position's output") {
  Model model(tiny_config(), 7);
  auto res = model.encode_context(std::vector<int>{5});
  REQUIRE(res.head_summaries.size() == 2);
  // with one position the mean over positions is the position itself; check
  // against the loop oracle's raw head outputs
  auto oracle_out = oracle::encode(model, {5});
  for (size_t h = 0; h < res.head_summaries.size(); ++h)
    for (size_t c = 0; c < res.head_summaries[h].size(); ++c)
      CHECK(res.head_summaries[h][c] ==
            doctest::Approx(oracle_out.head_summaries[h][c]).epsilon(1e-12));
}

TEST_CASE("without positions, identical tokens give identical head outputs") {
  ModelConfig cfg = tiny_config();
  cfg.use_positional_encoding = false;
  Model model(cfg, 11);
  // all positions carry the same token, so every row of the encoder state
  // is the same and the position mean equals any single position
  auto many = model.encode_context(std::vector<int>{9, 9, 9, 9});
  auto one = model.encode_context(std::vector<int>{9});
  for (size_t h = 0; h < many.head_summaries.size(); ++h)
    for (size_t c = 0; c < many.head_summaries[h].size(); ++c)
      CHECK(many.head_summaries[h][c] ==
            doctest::Approx(one.head_summaries[h][c]).epsilon(1e-9));
  for (int i = 0; i < many.states.rows; ++i)
    for (int j = 0; j < many.states.cols; ++j)
      CHECK(many.states.at(i, j) == doctest::Approx(many.states.at(0, j)).epsilon(1e-9));
}

TEST_CASE("5-token encoder forward matches the loop oracle") {
  Model model(tiny_config(48), 1234);
  const std::vector<int> ids = {7, 13, 5, 30, 21};
  auto res = model.encode_context(ids);
  auto expected = oracle::encode(model, ids);
  REQUIRE(res.states.rows == 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < res.states.cols; ++j)
      CHECK(res.states.at(i, j) == doctest::Approx(expected.states[i][j]).epsilon(1e-10));
  for (size_t h = 0; h < res.head_summaries.size(); ++h)
    for (size_t c = 0; c < res.head_summaries[h].size(); ++c)
      CHECK(res.head_summaries[h][c] ==
            doctest::Approx(expected.head_summaries[h][c]).epsilon(1e-10));
  // pooled summary equals average_pool of the head summaries
  const auto pooled = average_pool(res.head_summaries);
  for (size_t c = 0; c < pooled.size(); ++c)
    CHECK(res.pooled_summary[c] == doctest::Approx(pooled[c]).epsilon(1e-12));
}

TEST_CASE("next-token distribution matches the loop oracle and sums to one") {
  Model model(tiny_config(40), 99);
  const std::vector<int> ctx = {6, 8, 3, 17};
  const std::vector<int> prefix = {11, 29};
  auto probs = model.next_token_distribution(ctx, prefix);
  auto expected = oracle::next_token_distribution(model, ctx, prefix);
  REQUIRE(probs.size() == expected.size());
  double sum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    CHECK(probs[i] == doctest::Approx(expected[i]).epsilon(1e-10));
    sum += probs[i];
  }
  CHECK(std::abs(sum - 1.0) < 1e-6);
  CHECK_THROWS_AS(model.next_token_distribution(std::vector<int>{}, prefix), DataError);
}

TEST_CASE("causality: suffix tokens never change earlier logit rows") {
  Model model(tiny_config(40), 5);
  const std::vector<int> ctx = {4, 9, 2};
  const std::vector<int> prefix = {1, 10, 20, 30};  // decoder input incl. BOS
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> longer = prefix;
    for (int extra = 0; extra <= trial; ++extra)
      longer.push_back(static_cast<int>(rng.below(40)));

    Graph g1, g2;
    auto enc1 = model.build_encoder(g1, ctx, DropoutCtx{});
    auto logits_short = model.build_decoder_logits(g1, enc1.states, prefix, DropoutCtx{});
    auto enc2 = model.build_encoder(g2, ctx, DropoutCtx{});
    auto logits_long = model.build_decoder_logits(g2, enc2.states, longer, DropoutCtx{});

    const Mat& a = g1.value(logits_short);
    const Mat& b = g2.value(logits_long);
    REQUIRE(b.rows > a.rows);
    for (int i = 0; i < a.rows; ++i)
      for (int j = 0; j < a.cols; ++j) CHECK(a.at(i, j) == b.at(i, j));
  }
}

TEST_CASE("inference determinism is bit-stable") {
  Model model(tiny_config(), 3);
  const std::vector<int> ctx = {1, 2, 3, 4, 5};
  auto a = model.encode_context(ctx);
  auto b = model.encode_context(ctx);
  CHECK(a.states.a == b.states.a);
  CHECK(a.pooled_summary == b.pooled_summary);
  auto p1 = model.next_token_distribution(ctx, std::vector<int>{7});
  auto p2 = model.next_token_distribution(ctx, std::vector<int>{7});
  CHECK(p1 == p2);
}

TEST_CASE("shape soundness across random configurations") {
  Rng rng(2024);
  for (int trial = 0; trial < 6; ++trial) {
    ModelConfig cfg;
    cfg.num_layers = 1 + static_cast<int>(rng.below(2));
    cfg.num_heads = 1 + static_cast<int>(rng.below(4));
    cfg.model_dim = cfg.num_heads * (4 + static_cast<int>(rng.below(4)));
    cfg.ffn_dim = 8 + static_cast<int>(rng.below(32));
    cfg.dropout_rate = 0.0;
    cfg.max_context_len = 32;
    cfg.vocab_size = 16 + static_cast<int>(rng.below(32));
    Model model(cfg, 1000 + trial);

    const int len = 1 + static_cast<int>(rng.below(6));
    std::vector<int> ids;
    for (int i = 0; i < len; ++i) ids.push_back(static_cast<int>(rng.below(cfg.vocab_size)));

    auto enc = model.encode_context(ids);
    CHECK(enc.states.rows == len);
    CHECK(enc.states.cols == cfg.model_dim);
    CHECK(static_cast<int>(enc.head_summaries.size()) == cfg.num_heads);
    for (const auto& h : enc.head_summaries)
      CHECK(static_cast<int>(h.size()) == cfg.head_dim());
    CHECK(static_cast<int>(enc.pooled_summary.size()) == cfg.head_dim());

    auto probs = model.next_token_distribution(ids, std::vector<int>{0});
    CHECK(static_cast<int>(probs.size()) == cfg.vocab_size);
  }
}

TEST_CASE("discriminate: zero output layer gives exactly one half") {
  Model model(tiny_config(), 21);
  model.params().get("disc.f2.w").value.fill(0.0);
  model.params().get("disc.f2.b").value.fill(0.0);
  std::vector<double> es(model.config().head_dim(), 0.3);
  CHECK(model.discriminate(es) == 0.5);

  // sigmoid range on random inputs
  Model model2(tiny_config(), 22);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(model2.config().head_dim());
    for (double& v : x) v = rng.uniform(-3, 3);
    const double y = model2.discriminate(x);
    CHECK(y > 0.0);
    CHECK(y < 1.0);
  }
}

TEST_CASE("discriminate matches hand arithmetic on a 2x2 head") {
  ModelConfig cfg = tiny_config();
  cfg.num_heads = 8;  // head_dim = 2
  cfg.disc_hidden_dim = 2;
  Model model(cfg, 0);
  // f1 = [[1, -2], [0.5, 0.25]], b1 = [0.1, -0.1]
  auto& f1 = model.params().get("disc.f1.w").value;
  f1.at(0, 0) = 1.0;
  f1.at(0, 1) = -2.0;
  f1.at(1, 0) = 0.5;
  f1.at(1, 1) = 0.25;
  auto& b1 = model.params().get("disc.f1.b").value;
  b1.a = {0.1, -0.1};
  // f2 = [[0.7], [-1.3]], b2 = [0.2]
  auto& f2 = model.params().get("disc.f2.w").value;
  f2.at(0, 0) = 0.7;
  f2.at(1, 0) = -1.3;
  model.params().get("disc.f2.b").value.a = {0.2};

  // e_s = (1, -1): h = relu([1*1 + (-1)*0.5 + 0.1, 1*(-2) + (-1)*0.25 - 0.1])
  //              = relu([0.6, -2.35]) = [0.6, 0]
  // z = 0.6*0.7 + 0*(-1.3) + 0.2 = 0.62 ; y_hat = sigmoid(0.62)
  const double expected = 1.0 / (1.0 + std::exp(-0.62));
  CHECK(model.discriminate(std::vector<double>{1.0, -1.0}) ==
        doctest::Approx(expected).epsilon(1e-12));
  // cross-check with the loop oracle
  CHECK(oracle::discriminate(model, {1.0, -1.0}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("generate: greedy ties resolve to the lowest id, sampling is seeded") {
  Model model(tiny_config(), 31);
  // zero logits everywhere -> all-token tie -> lowest id (PAD = 0) wins
  model.params().get("out_proj.w").value.fill(0.0);
  model.params().get("out_proj.b").value.fill(0.0);
  auto out = model.generate(std::vector<int>{1, 2}, 3, GenerateMode::Greedy());
  REQUIRE(!out.empty());
  for (int id : out) CHECK(id == 0);

  Model model2(tiny_config(), 32);
  auto s1 = model2.generate(std::vector<int>{1, 2, 3}, 8, GenerateMode::Sampled(77));
  auto s2 = model2.generate(std::vector<int>{1, 2, 3}, 8, GenerateMode::Sampled(77));
  CHECK(s1 == s2);

  auto one = model2.generate(std::vector<int>{1, 2, 3}, 1, GenerateMode::Greedy());
  CHECK(one.size() <= 1);
  CHECK_THROWS_AS(model2.generate(std::vector<int>{1}, 0, GenerateMode::Greedy()), UsageError);
}

TEST_CASE("over-long contexts truncate from the left keeping BOS") {
  std::vector<int> ids;
  ids.push_back(BpeVocab::kBos);
  for (int i = 0; i < 100; ++i) ids.push_back(6 + (i % 5));
  std::vector<int> copy = ids;
  CHECK(truncate_context(copy, 16));
  REQUIRE(copy.size() == 16);
  CHECK(copy.front() == BpeVocab::kBos);
  // the newest 15 tokens survive
  for (int i = 0; i < 15; ++i) CHECK(copy[1 + i] == ids[ids.size() - 15 + i]);

  std::vector<int> short_ids = {1, 2, 3};
  CHECK_FALSE(truncate_context(short_ids, 16));
  CHECK(short_ids.size() == 3);

  ModelConfig cfg = tiny_config();
  cfg.max_context_len = 8;
  Model model(cfg, 44);
  auto res = model.encode_context(ids);
  CHECK(res.truncated);
  CHECK(res.states.rows == 8);
}

TEST_CASE("checkpoints roundtrip bit-exactly") {
  Model model(tiny_config(40), 77);
  const std::string path =
      (std::filesystem::temp_directory_path() / "dialcomp_ckpt_test.bin").string();
  model.save_checkpoint(path, 0xabcdef12u, 321);
  auto loaded = Model::load_checkpoint(path);
  CHECK(loaded.vocab_hash == 0xabcdef12u);
  CHECK(loaded.step == 321);
  CHECK(loaded.model.config().model_dim == model.config().model_dim);
  for (const auto& p : model.params().all()) {
    const auto& q = loaded.model.params().get(p->name);
    CHECK(p->value.a == q.value.a);
  }
  // inference after reload is identical
  const std::vector<int> ctx = {3, 9, 12};
  CHECK(model.next_token_distribution(ctx, std::vector<int>{4}) ==
        loaded.model.next_token_distribution(ctx, std::vector<int>{4}));
  std::remove(path.c_str());
  CHECK_THROWS_AS(Model::load_checkpoint("/nonexistent/nope.ckpt"), DataError);
}

}  // TEST_SUITE
