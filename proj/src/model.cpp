#include "dialcomp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dialcomp/errors.hpp"
#include "dialcomp/log.hpp"
#include "dialcomp/tokenizer.hpp"

namespace dialcomp {

int ModelConfig::head_dim() const {
  validate();
  return model_dim / num_heads;
}

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || model_dim < 1 || ffn_dim < 1)
    throw UsageError("model dimensions must be positive");
  if (model_dim % num_heads != 0)
    throw UsageError("model_dim must be divisible by num_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw UsageError("dropout_rate must lie in [0, 1)");
  if (vocab_size < 6) throw UsageError("vocab_size must cover the special tokens");
  if (max_context_len < 2) throw UsageError("max_context_len too small");
}

Param& ParameterSet::add(const std::string& name, int rows, int cols) {
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat(rows, cols);
  p->grad = Mat(rows, cols);
  p->adam_m = Mat(rows, cols);
  p->adam_v = Mat(rows, cols);
  Param& ref = *p;
  index_.emplace(name, p.get());
  params_.push_back(std::move(p));
  return ref;
}

Param& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter tensor '" + name + "'");
  return *it->second;
}

const Param& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter tensor '" + name + "'");
  return *it->second;
}

void ParameterSet::zero_grads() {
  for (auto& p : params_) p->grad.fill(0.0);
}

size_t ParameterSet::total_parameters() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::optional<std::string> ParameterSet::first_non_finite(bool gradients) const {
  for (const auto& p : params_) {
    const Mat& m = gradients ? p->grad : p->value;
    if (!m.finite()) return p->name;
  }
  return std::nullopt;
}

namespace {

void init_uniform(Param& p, int fan_in, uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Rng rng(seed);
  for (double& v : p.value.a) v = rng.uniform(-bound, bound);
}

struct AttentionParamNames {
  std::string wq, bq, wk, bk, wv, bv, wo, bo;
};

AttentionParamNames attn_names(const std::string& prefix) {
  return {prefix + ".wq", prefix + ".bq", prefix + ".wk", prefix + ".bk",
          prefix + ".wv", prefix + ".bv", prefix + ".wo", prefix + ".bo"};
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.model_dim;
  const int dk = cfg_.head_dim();
  const int h = cfg_.disc_hidden_dim > 0 ? cfg_.disc_hidden_dim : dk;
  const int ff = cfg_.ffn_dim;
  const int v = cfg_.vocab_size;

  auto add_weight = [&](const std::string& name, int rows, int cols, int fan_in) {
    Param& p = params_.add(name, rows, cols);
    init_uniform(p, fan_in, derive_seed(init_seed, name));
  };
  auto add_bias = [&](const std::string& name, int cols) { params_.add(name, 1, cols); };
  auto add_layer_norm = [&](const std::string& prefix) {
    params_.add(prefix + ".gamma", 1, d).value.fill(1.0);
    add_bias(prefix + ".beta", d);
  };
  auto add_attention = [&](const std::string& prefix) {
    const auto n = attn_names(prefix);
    add_weight(n.wq, d, d, d);
    add_bias(n.bq, d);
    add_weight(n.wk, d, d, d);
    add_bias(n.bk, d);
    add_weight(n.wv, d, d, d);
    add_bias(n.bv, d);
    add_weight(n.wo, d, d, d);
    add_bias(n.bo, d);
  };
  auto add_ffn = [&](const std::string& prefix) {
    add_weight(prefix + ".w1", d, ff, d);
    add_bias(prefix + ".b1", ff);
    add_weight(prefix + ".w2", ff, d, ff);
    add_bias(prefix + ".b2", d);
  };

  add_weight("tok_embed", v, d, d);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    add_layer_norm(p + ".ln1");
    add_attention(p + ".attn");
    add_layer_norm(p + ".ln2");
    add_ffn(p + ".ffn");
  }
  add_layer_norm("enc.final_ln");
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    add_layer_norm(p + ".ln1");
    add_attention(p + ".self_attn");
    add_layer_norm(p + ".ln2");
    add_attention(p + ".cross_attn");
    add_layer_norm(p + ".ln3");
    add_ffn(p + ".ffn");
  }
  add_layer_norm("dec.final_ln");
  add_weight("out_proj.w", d, v, d);
  add_bias("out_proj.b", v);
  add_weight("disc.f1.w", dk, h, dk);
  add_bias("disc.f1.b", h);
  add_weight("disc.f2.w", h, 1, h);
  add_bias("disc.f2.b", 1);
}

Mat Model::positional_encoding(int seq_len) const {
  const int d = cfg_.model_dim;
  Mat pe(seq_len, d);
  if (!cfg_.use_positional_encoding) return pe;
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

namespace {

struct AttentionOut {
  Graph::Ref projected;                  // seq_q x d
  std::vector<Graph::Ref> head_outputs;  // per head, seq_q x dk
};

// Multi-head attention. Queries come from x_q, keys/values from x_kv.
// causal_offset < 0 disables masking; otherwise query row i attends to
// key columns j <= i + causal_offset.
AttentionOut attention(Graph& g, const ModelConfig& cfg, ParameterSet& params,
                       const std::string& prefix, Graph::Ref x_q, Graph::Ref x_kv,
                       int causal_offset) {
  const auto n = attn_names(prefix);
  auto P = [&](const std::string& name) {
    Param& p = params.get(name);
    return g.param(&p.value, &p.grad);
  };
  const int dk = cfg.head_dim();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  Graph::Ref q = g.add_rowvec(g.matmul(x_q, P(n.wq)), P(n.bq));
  Graph::Ref k = g.add_rowvec(g.matmul(x_kv, P(n.wk)), P(n.bk));
  Graph::Ref v = g.add_rowvec(g.matmul(x_kv, P(n.wv)), P(n.bv));

  AttentionOut out;
  std::vector<Graph::Ref> heads;
  for (int h = 0; h < cfg.num_heads; ++h) {
    const int c0 = h * dk, c1 = (h + 1) * dk;
    Graph::Ref qh = g.slice_cols(q, c0, c1);
    Graph::Ref kh = g.slice_cols(k, c0, c1);
    Graph::Ref vh = g.slice_cols(v, c0, c1);
    Graph::Ref scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dk);
    Graph::Ref probs = causal_offset < 0 ? g.softmax_rows(scores)
                                         : g.softmax_rows_causal(scores, causal_offset);
    heads.push_back(g.matmul(probs, vh));
  }
  out.head_outputs = heads;
  Graph::Ref concat = g.concat_cols(heads);
  out.projected = g.add_rowvec(g.matmul(concat, P(n.wo)), P(n.bo));
  return out;
}

}  // namespace

EncoderNodes Model::build_encoder(Graph& g, std::span<const int> ids,
                                  const DropoutCtx& drop) const {
  if (ids.empty()) throw DataError("cannot encode an empty context");
  auto& params = params_;
  auto P = [&](const std::string& name) {
    Param& p = params.get(name);
    return g.param(&p.value, &p.grad);
  };
  auto maybe_drop = [&](Graph::Ref r) {
    return drop.active() ? g.dropout(r, drop.rate, *drop.rng) : r;
  };
  auto norm = [&](const std::string& prefix, Graph::Ref x) {
    return g.layer_norm(x, P(prefix + ".gamma"), P(prefix + ".beta"));
  };

  const int d = cfg_.model_dim;
  Graph::Ref x = g.embedding(P("tok_embed"), std::vector<int>(ids.begin(), ids.end()));
  x = g.scale(x, std::sqrt(static_cast<double>(d)));
  x = g.add(x, g.constant(positional_encoding(static_cast<int>(ids.size()))));
  x = maybe_drop(x);

  EncoderNodes nodes;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    Graph::Ref normed = norm(p + ".ln1", x);
    AttentionOut attn = attention(g, cfg_, params, p + ".attn", normed, normed, -1);
    x = g.add(x, maybe_drop(attn.projected));
    Graph::Ref ff_in = norm(p + ".ln2", x);
    Graph::Ref ff = g.add_rowvec(g.matmul(ff_in, P(p + ".ffn.w1")), P(p + ".ffn.b1"));
    ff = g.relu(ff);
    ff = g.add_rowvec(g.matmul(ff, P(p + ".ffn.w2")), P(p + ".ffn.b2"));
    x = g.add(x, maybe_drop(ff));
    if (l == cfg_.num_layers - 1) nodes.head_outputs = attn.head_outputs;
  }
  nodes.states = norm("enc.final_ln", x);

  // Summary per head: position mean of the final layer's attention output,
  // then the across-head average feeding the discriminator.
  for (Graph::Ref h : nodes.head_outputs) nodes.head_summaries.push_back(g.mean_rows(h));
  Graph::Ref sum = nodes.head_summaries[0];
  for (size_t h = 1; h < nodes.head_summaries.size(); ++h)
    sum = g.add(sum, nodes.head_summaries[h]);
  nodes.pooled_summary = g.scale(sum, 1.0 / cfg_.num_heads);
  return nodes;
}

Graph::Ref Model::build_decoder_logits(Graph& g, Graph::Ref encoder_states,
                                       std::span<const int> decoder_input_ids,
                                       const DropoutCtx& drop) const {
  if (decoder_input_ids.empty()) throw DataError("decoder input must be non-empty");
  auto& params = params_;
  auto P = [&](const std::string& name) {
    Param& p = params.get(name);
    return g.param(&p.value, &p.grad);
  };
  auto maybe_drop = [&](Graph::Ref r) {
    return drop.active() ? g.dropout(r, drop.rate, *drop.rng) : r;
  };
  auto norm = [&](const std::string& prefix, Graph::Ref x) {
    return g.layer_norm(x, P(prefix + ".gamma"), P(prefix + ".beta"));
  };

  const int d = cfg_.model_dim;
  Graph::Ref x = g.embedding(P("tok_embed"),
                             std::vector<int>(decoder_input_ids.begin(), decoder_input_ids.end()));
  x = g.scale(x, std::sqrt(static_cast<double>(d)));
  x = g.add(x, g.constant(positional_encoding(static_cast<int>(decoder_input_ids.size()))));
  x = maybe_drop(x);

  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    Graph::Ref normed = norm(p + ".ln1", x);
    AttentionOut self_attn = attention(g, cfg_, params, p + ".self_attn", normed, normed, 0);
    x = g.add(x, maybe_drop(self_attn.projected));
    Graph::Ref cross_in = norm(p + ".ln2", x);
    AttentionOut cross = attention(g, cfg_, params, p + ".cross_attn", cross_in,
                                   encoder_states, -1);
    x = g.add(x, maybe_drop(cross.projected));
    Graph::Ref ff_in = norm(p + ".ln3", x);
    Graph::Ref ff = g.add_rowvec(g.matmul(ff_in, P(p + ".ffn.w1")), P(p + ".ffn.b1"));
    ff = g.relu(ff);
    ff = g.add_rowvec(g.matmul(ff, P(p + ".ffn.w2")), P(p + ".ffn.b2"));
    x = g.add(x, maybe_drop(ff));
  }
  x = norm("dec.final_ln", x);
  return g.add_rowvec(g.matmul(x, P("out_proj.w")), P("out_proj.b"));
}

Graph::Ref Model::build_discriminator_logit(Graph& g, Graph::Ref pooled_summary,
                                            bool reverse_encoder_gradient,
                                            const DropoutCtx& drop) const {
  auto& params = params_;
  auto P = [&](const std::string& name) {
    Param& p = params.get(name);
    return g.param(&p.value, &p.grad);
  };
  Graph::Ref x = reverse_encoder_gradient ? g.grad_reverse(pooled_summary) : pooled_summary;
  x = g.relu(g.add_rowvec(g.matmul(x, P("disc.f1.w")), P("disc.f1.b")));
  if (drop.active()) x = g.dropout(x, drop.rate, *drop.rng);
  return g.add_rowvec(g.matmul(x, P("disc.f2.w")), P("disc.f2.b"));
}

bool truncate_context(std::vector<int>& ids, int max_context_len) {
  if (static_cast<int>(ids.size()) <= max_context_len) return false;
  // Keep the leading BOS; drop the oldest turns after it.
  const int keep_tail = max_context_len - 1;
  std::vector<int> out;
  out.reserve(max_context_len);
  out.push_back(ids.front());
  out.insert(out.end(), ids.end() - keep_tail, ids.end());
  ids = std::move(out);
  return true;
}

EncoderResult Model::encode_context(std::span<const int> ids) const {
  std::vector<int> trimmed(ids.begin(), ids.end());
  const bool truncated = truncate_context(trimmed, cfg_.max_context_len);
  if (truncated)
    log_warn("context of " + std::to_string(ids.size()) + " tokens truncated to " +
             std::to_string(cfg_.max_context_len));
  Graph g;
  EncoderNodes nodes = build_encoder(g, trimmed, DropoutCtx{});
  EncoderResult res;
  res.truncated = truncated;
  res.states = g.value(nodes.states);
  for (Graph::Ref h : nodes.head_summaries) res.head_summaries.push_back(g.value(h).a);
  res.pooled_summary = g.value(nodes.pooled_summary).a;
  return res;
}

std::vector<double> Model::next_token_distribution(std::span<const int> context_ids,
                                                   std::span<const int> prefix_ids) const {
  if (context_ids.empty()) throw DataError("cannot decode from an empty context");
  std::vector<int> ctx(context_ids.begin(), context_ids.end());
  truncate_context(ctx, cfg_.max_context_len);
  Graph g;
  EncoderNodes enc = build_encoder(g, ctx, DropoutCtx{});
  std::vector<int> dec_input;
  dec_input.push_back(BpeVocab::kBos);
  dec_input.insert(dec_input.end(), prefix_ids.begin(), prefix_ids.end());
  Graph::Ref logits = build_decoder_logits(g, enc.states, dec_input, DropoutCtx{});
  const Mat& lv = g.value(logits);
  std::vector<double> probs(lv.cols);
  const double* row = lv.row(lv.rows - 1);
  double mx = row[0];
  for (int j = 1; j < lv.cols; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (int j = 0; j < lv.cols; ++j) {
    probs[j] = std::exp(row[j] - mx);
    sum += probs[j];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

std::vector<int> Model::generate(std::span<const int> context_ids, int max_len,
                                 const GenerateMode& mode) const {
  if (max_len < 1) throw UsageError("max_len must be at least 1");
  std::vector<int> out;
  Rng rng(mode.greedy ? 0 : mode.sample_seed);
  for (int step = 0; step < max_len; ++step) {
    const auto probs = next_token_distribution(context_ids, out);
    int next = 0;
    if (mode.greedy) {
      // Ties resolve to the lowest token id.
      double best = probs[0];
      for (int j = 1; j < static_cast<int>(probs.size()); ++j)
        if (probs[j] > best) {
          best = probs[j];
          next = j;
        }
    } else {
      const double u = rng.uniform();
      double acc = 0.0;
      next = static_cast<int>(probs.size()) - 1;
      for (int j = 0; j < static_cast<int>(probs.size()); ++j) {
        acc += probs[j];
        if (u < acc) {
          next = j;
          break;
        }
      }
    }
    out.push_back(next);
    if (next == BpeVocab::kEos) break;
  }
  return out;
}

double Model::discriminate(std::span<const double> pooled_summary, bool training,
                           Rng* rng) const {
  Mat es(1, static_cast<int>(pooled_summary.size()));
  std::copy(pooled_summary.begin(), pooled_summary.end(), es.a.begin());
  Graph g;
  Graph::Ref in = g.constant(std::move(es));
  DropoutCtx drop;
  if (training && rng != nullptr) {
    drop.rate = cfg_.dropout_rate;
    drop.rng = rng;
  }
  Graph::Ref z = build_discriminator_logit(g, in, false, drop);
  const double zv = g.value(z).a[0];
  return 1.0 / (1.0 + std::exp(-zv));
}

void Model::save_checkpoint(const std::string& path, uint64_t vocab_hash, int64_t step) const {
  nlohmann::ordered_json header;
  header["format_version"] = 1;
  header["config"] = {{"num_layers", cfg_.num_layers},
                      {"num_heads", cfg_.num_heads},
                      {"model_dim", cfg_.model_dim},
                      {"ffn_dim", cfg_.ffn_dim},
                      {"dropout_rate", cfg_.dropout_rate},
                      {"max_context_len", cfg_.max_context_len},
                      {"vocab_size", cfg_.vocab_size},
                      {"use_positional_encoding", cfg_.use_positional_encoding},
                      {"disc_hidden_dim", cfg_.disc_hidden_dim}};
  header["vocab_hash"] = vocab_hash;
  header["step"] = step;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& p : params_.all())
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows}, {"cols", p->value.cols}});
  header["tensors"] = std::move(tensors);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write("DLCP", 4);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : params_.all())
    out.write(reinterpret_cast<const char*>(p->value.a.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

Model::LoadedCheckpoint Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DLCP", 4) != 0)
    throw DataError("'" + path + "' is not a checkpoint file");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header in '" + path + "'");
  nlohmann::json header = nlohmann::json::parse(htext);
  if (header.value("format_version", -1) != 1)
    throw DataError("unsupported checkpoint format_version");

  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.num_layers = jc.at("num_layers");
  cfg.num_heads = jc.at("num_heads");
  cfg.model_dim = jc.at("model_dim");
  cfg.ffn_dim = jc.at("ffn_dim");
  cfg.dropout_rate = jc.at("dropout_rate");
  cfg.max_context_len = jc.at("max_context_len");
  cfg.vocab_size = jc.at("vocab_size");
  cfg.use_positional_encoding = jc.at("use_positional_encoding");
  cfg.disc_hidden_dim = jc.at("disc_hidden_dim");

  LoadedCheckpoint loaded{Model(cfg, 0), header.at("vocab_hash").get<uint64_t>(),
                          header.at("step").get<int64_t>()};
  for (const auto& jt : header.at("tensors")) {
    Param& p = loaded.model.params().get(jt.at("name").get<std::string>());
    if (p.value.rows != jt.at("rows").get<int>() || p.value.cols != jt.at("cols").get<int>())
      throw DataError("checkpoint tensor shape mismatch for '" + p.name + "'");
    in.read(reinterpret_cast<char*>(p.value.a.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!in) throw DataError("truncated checkpoint tensors in '" + path + "'");
  return loaded;
}

}  // namespace dialcomp
