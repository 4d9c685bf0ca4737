#pragma once

// Independent transformer forward pass written with explicit scalar loops
// and std::vector matrices only. It reads the same parameter tensors as the
// production model but shares none of its kernel or tape code, so the two
// paths cross-check each other.

#include <vector>

#include "dialcomp/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

struct EncoderOut {
  Rows states;           // seq x d after the final layer norm
  Rows head_summaries;   // num_heads x head_dim
  Vec pooled_summary;    // head_dim
};

EncoderOut encode(const dialcomp::Model& model, const std::vector<int>& ids);

Vec next_token_distribution(const dialcomp::Model& model, const std::vector<int>& context_ids,
                            const std::vector<int>& prefix_ids);

double discriminate(const dialcomp::Model& model, const Vec& pooled_summary);

}  // namespace oracle
