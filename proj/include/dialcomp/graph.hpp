#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialcomp/rng.hpp"

namespace dialcomp {

// Row-major dense matrix of doubles. Vectors are 1 x n.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return a.size(); }

  void fill(double v) { std::fill(a.begin(), a.end(), v); }
  bool finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Reverse-mode tape over matrices. A Graph is built per forward pass
// (one training example or one decoding step), seeded at one or more
// scalar loss nodes, and walked once backwards. Parameter leaves
// accumulate their gradients into an external sink matrix so that a
// batch can be reduced in a fixed example order.
class Graph {
 public:
  using Ref = int;

  // Leaf holding externally owned values. grad_sink may be null for
  // constants (positional encodings, masks).
  Ref leaf(const Mat* value, Mat* grad_sink);
  // Leaf that copies a temporary value into the tape.
  Ref constant(Mat value);
  // Cached per (value pointer): a parameter used twice shares one node.
  Ref param(const Mat* value, Mat* grad_sink);

  // out[i, :] = table[ids[i], :]
  Ref embedding(Ref table, std::vector<int> ids);
  Ref matmul(Ref a, Ref b);
  // a (m x k) times b^T where b is stored (n x k)
  Ref matmul_nt(Ref a, Ref b);
  Ref add(Ref a, Ref b);
  // bias is 1 x c, broadcast over rows of a
  Ref add_rowvec(Ref a, Ref bias);
  Ref scale(Ref a, double s);
  Ref relu(Ref a);
  Ref sigmoid(Ref a);
  // Inverted dropout; keep-probability scaling applied in forward.
  // rate <= 0 returns a unchanged.
  Ref dropout(Ref a, double rate, Rng& rng);
  // Row-wise layer norm with learned gain/bias (each 1 x c).
  Ref layer_norm(Ref x, Ref gamma, Ref beta, double eps = 1e-6);
  Ref softmax_rows(Ref x);
  // In row i only columns j <= i + offset participate.
  Ref softmax_rows_causal(Ref x, int offset);
  // 1 x c column means.
  Ref mean_rows(Ref x);
  Ref slice_cols(Ref x, int c0, int c1);
  Ref concat_cols(const std::vector<Ref>& parts);
  // Identity forward, negated gradient backward.
  Ref grad_reverse(Ref x);
  // Scalar 1x1: sum over rows of -log softmax(logits)[target].
  Ref cross_entropy_sum(Ref logits, std::vector<int> targets);
  // Scalar 1x1 binary cross-entropy on a pre-sigmoid logit, computed in
  // the overflow-safe softplus form.
  Ref bce_with_logit(Ref z, double y);

  const Mat& value(Ref r) const { return nodes_[r].val; }
  Mat& grad(Ref r) { return nodes_[r].grad; }

  // Seed the gradient of a scalar node before backward().
  void set_loss_grad(Ref r, double g);
  void backward();

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;  // empty for leaves
    Mat* sink = nullptr;         // parameter gradient accumulator
  };

  Ref push(Mat val);
  std::vector<Node> nodes_;
  std::unordered_map<const Mat*, Ref> param_cache_;
};

// Elementwise mean over k equally sized vectors. Plain helper shared by
// the model's pooled encoder summary and its tests.
std::vector<double> average_pool(const std::vector<std::vector<double>>& heads);

}  // namespace dialcomp
