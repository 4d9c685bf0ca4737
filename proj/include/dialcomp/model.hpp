#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialcomp/graph.hpp"
#include "dialcomp/rng.hpp"

namespace dialcomp {

struct ModelConfig {
  int num_layers = 2;
  int num_heads = 4;
  int model_dim = 128;
  int ffn_dim = 512;
  double dropout_rate = 0.1;
  int max_context_len = 256;
  int vocab_size = 0;
  bool use_positional_encoding = true;
  // Width of the discriminator's hidden layer; 0 means head_dim.
  int disc_hidden_dim = 0;

  int head_dim() const;
  void validate() const;
};

// One named learnable tensor plus its gradient and optimizer slots.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
};

class ParameterSet {
 public:
  Param& add(const std::string& name, int rows, int cols);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  std::vector<std::unique_ptr<Param>>& all() { return params_; }
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  void zero_grads();
  size_t total_parameters() const;
  // Name of the first tensor containing a non-finite entry, if any.
  std::optional<std::string> first_non_finite(bool gradients) const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> index_;
};

// Dropout wiring for a forward pass; rng == nullptr means inference.
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

// Nodes a training step needs from the encoder.
struct EncoderNodes {
  Graph::Ref states = -1;                 // seq x d, after the final layer norm
  std::vector<Graph::Ref> head_outputs;   // final layer, per head: seq x head_dim
  std::vector<Graph::Ref> head_summaries; // per head: 1 x head_dim (position mean)
  Graph::Ref pooled_summary = -1;         // 1 x head_dim (mean over heads)
};

// Plain-value view of an encoded context.
struct EncoderResult {
  std::vector<std::vector<double>> head_summaries;  // k vectors of head_dim
  std::vector<double> pooled_summary;               // head_dim
  Mat states;                                       // seq x d
  bool truncated = false;
};

struct GenerateMode {
  bool greedy = true;
  uint64_t sample_seed = 0;
  static GenerateMode Greedy() { return {true, 0}; }
  static GenerateMode Sampled(uint64_t seed) { return {false, seed}; }
};

// Transformer encoder-decoder with a two-layer discriminator head fed by
// the head-averaged summary of the final encoder layer's attention outputs.
// Pre-norm residual blocks, sinusoidal positions, weights initialized
// uniformly within +/- 1/sqrt(fan_in) from per-tensor seeds.
class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Truncates from the left when ids exceed max_context_len, keeping the
  // leading BOS; oldest turns drop first.
  EncoderResult encode_context(std::span<const int> ids) const;

  // Distribution over the vocabulary for the token following `prefix`
  // (decoder input is BOS followed by the prefix).
  std::vector<double> next_token_distribution(std::span<const int> context_ids,
                                              std::span<const int> prefix_ids) const;

  std::vector<int> generate(std::span<const int> context_ids, int max_len,
                            const GenerateMode& mode) const;

  // sigmoid(f2(dropout(relu(f1(e_s))))); dropout only when training.
  double discriminate(std::span<const double> pooled_summary, bool training = false,
                      Rng* rng = nullptr) const;

  // Graph builders used by training and by the inference paths above.
  EncoderNodes build_encoder(Graph& g, std::span<const int> ids, const DropoutCtx& drop) const;
  Graph::Ref build_decoder_logits(Graph& g, Graph::Ref encoder_states,
                                  std::span<const int> decoder_input_ids,
                                  const DropoutCtx& drop) const;
  Graph::Ref build_discriminator_logit(Graph& g, Graph::Ref pooled_summary,
                                       bool reverse_encoder_gradient,
                                       const DropoutCtx& drop) const;

  void save_checkpoint(const std::string& path, uint64_t vocab_hash, int64_t step) const;
  struct LoadedCheckpoint;
  static LoadedCheckpoint load_checkpoint(const std::string& path);

 private:
  Mat positional_encoding(int seq_len) const;
  ModelConfig cfg_;
  // Gradient and optimizer slots are scratch state written by backward
  // passes, so const forward paths may still hand out sinks.
  mutable ParameterSet params_;
};

struct Model::LoadedCheckpoint {
  Model model;
  uint64_t vocab_hash = 0;
  int64_t step = 0;
};

// Left truncation helper shared by the model and the example builder.
// Returns true when tokens were dropped.
bool truncate_context(std::vector<int>& ids, int max_context_len);

}  // namespace dialcomp
