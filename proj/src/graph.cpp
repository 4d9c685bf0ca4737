#include "dialcomp/graph.hpp"

#include <cassert>
#include <stdexcept>

#include "dialcomp/errors.hpp"
#include "dialcomp/kernels.hpp"

namespace dialcomp {

Graph::Ref Graph::push(Mat val) {
  Node n;
  n.grad = Mat(val.rows, val.cols);
  n.val = std::move(val);
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size() - 1);
}

Graph::Ref Graph::leaf(const Mat* value, Mat* grad_sink) {
  Ref r = push(*value);
  nodes_[r].sink = grad_sink;
  return r;
}

Graph::Ref Graph::constant(Mat value) { return push(std::move(value)); }

Graph::Ref Graph::param(const Mat* value, Mat* grad_sink) {
  auto it = param_cache_.find(value);
  if (it != param_cache_.end()) return it->second;
  Ref r = leaf(value, grad_sink);
  param_cache_.emplace(value, r);
  return r;
}

Graph::Ref Graph::embedding(Ref table, std::vector<int> ids) {
  const Mat& t = nodes_[table].val;
  Mat out(static_cast<int>(ids.size()), t.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows)
      throw DataError("token id " + std::to_string(ids[i]) + " out of range");
    std::copy(t.row(ids[i]), t.row(ids[i]) + t.cols, out.row(static_cast<int>(i)));
  }
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, table, ids = std::move(ids)]() {
    Mat& tg = nodes_[table].grad;
    const Mat& g = nodes_[r].grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      double* dst = tg.row(ids[i]);
      const double* src = g.row(static_cast<int>(i));
      for (int c = 0; c < tg.cols; ++c) dst[c] += src[c];
    }
  };
  return r;
}

Graph::Ref Graph::matmul(Ref a, Ref b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(A.cols == B.rows);
  Mat out(A.rows, B.cols);
  kernels::matmul(A.a.data(), B.a.data(), out.a.data(), A.rows, A.cols, B.cols);
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a, b]() {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    const Mat& G = nodes_[r].grad;
    // dA += G * B^T ; dB += A^T * G
    kernels::matmul_nt_acc(G.a.data(), B.a.data(), nodes_[a].grad.a.data(), G.rows, G.cols,
                           B.rows);
    kernels::matmul_tn_acc(A.a.data(), G.a.data(), nodes_[b].grad.a.data(), A.cols, A.rows,
                           G.cols);
  };
  return r;
}

Graph::Ref Graph::matmul_nt(Ref a, Ref b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(A.cols == B.cols);
  Mat out(A.rows, B.rows);
  kernels::matmul_nt(A.a.data(), B.a.data(), out.a.data(), A.rows, A.cols, B.rows);
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a, b]() {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    const Mat& G = nodes_[r].grad;
    // out = A B^T: dA += G * B ; dB += G^T * A
    kernels::matmul_acc(G.a.data(), B.a.data(), nodes_[a].grad.a.data(), G.rows, G.cols, B.cols);
    kernels::matmul_tn_acc(G.a.data(), A.a.data(), nodes_[b].grad.a.data(), G.cols, G.rows,
                           A.cols);
  };
  return r;
}

Graph::Ref Graph::add(Ref a, Ref b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(A.rows == B.rows && A.cols == B.cols);
  Mat out = A;
  for (size_t i = 0; i < out.size(); ++i) out.a[i] += B.a[i];
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a, b]() {
    const Mat& G = nodes_[r].grad;
    Mat& ga = nodes_[a].grad;
    Mat& gb = nodes_[b].grad;
    for (size_t i = 0; i < G.size(); ++i) {
      ga.a[i] += G.a[i];
      gb.a[i] += G.a[i];
    }
  };
  return r;
}

Graph::Ref Graph::add_rowvec(Ref a, Ref bias) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[bias].val;
  assert(B.rows == 1 && B.cols == A.cols);
  Mat out = A;
  for (int i = 0; i < out.rows; ++i) {
    double* row = out.row(i);
    for (int j = 0; j < out.cols; ++j) row[j] += B.a[j];
  }
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a, bias]() {
    const Mat& G = nodes_[r].grad;
    Mat& ga = nodes_[a].grad;
    Mat& gb = nodes_[bias].grad;
    for (size_t i = 0; i < G.size(); ++i) ga.a[i] += G.a[i];
    for (int i = 0; i < G.rows; ++i) {
      const double* row = G.row(i);
      for (int j = 0; j < G.cols; ++j) gb.a[j] += row[j];
    }
  };
  return r;
}

Graph::Ref Graph::scale(Ref a, double s) {
  Mat out = nodes_[a].val;
  for (double& v : out.a) v *= s;
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a, s]() {
    const Mat& G = nodes_[r].grad;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < G.size(); ++i) ga.a[i] += s * G.a[i];
  };
  return r;
}

Graph::Ref Graph::relu(Ref a) {
  Mat out = nodes_[a].val;
  for (double& v : out.a) v = v > 0.0 ? v : 0.0;
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a]() {
    const Mat& G = nodes_[r].grad;
    const Mat& A = nodes_[a].val;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < G.size(); ++i)
      if (A.a[i] > 0.0) ga.a[i] += G.a[i];
  };
  return r;
}

Graph::Ref Graph::sigmoid(Ref a) {
  Mat out = nodes_[a].val;
  for (double& v : out.a) v = 1.0 / (1.0 + std::exp(-v));
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a]() {
    const Mat& G = nodes_[r].grad;
    const Mat& Y = nodes_[r].val;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < G.size(); ++i) ga.a[i] += G.a[i] * Y.a[i] * (1.0 - Y.a[i]);
  };
  return r;
}

Graph::Ref Graph::dropout(Ref a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw UsageError("dropout rate must be < 1");
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  Mat out = nodes_[a].val;
  std::vector<char> mask(out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < keep ? 1 : 0;
    out.a[i] = mask[i] ? out.a[i] * inv_keep : 0.0;
  }
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, a, inv_keep, mask = std::move(mask)]() {
    const Mat& G = nodes_[r].grad;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < G.size(); ++i)
      if (mask[i]) ga.a[i] += G.a[i] * inv_keep;
  };
  return r;
}

Graph::Ref Graph::layer_norm(Ref x, Ref gamma, Ref beta, double eps) {
  const Mat& X = nodes_[x].val;
  const Mat& G = nodes_[gamma].val;
  const Mat& B = nodes_[beta].val;
  assert(G.rows == 1 && G.cols == X.cols && B.cols == X.cols);
  const int n = X.cols;
  Mat out(X.rows, n);
  std::vector<double> inv_std(X.rows), mean(X.rows);
  for (int i = 0; i < X.rows; ++i) {
    const double* row = X.row(i);
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[i] = mu;
    inv_std[i] = is;
    double* orow = out.row(i);
    for (int j = 0; j < n; ++j) orow[j] = (row[j] - mu) * is * G.a[j] + B.a[j];
  }
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, x, gamma, beta, mean = std::move(mean),
                    inv_std = std::move(inv_std)]() {
    const Mat& X = nodes_[x].val;
    const Mat& Gm = nodes_[gamma].val;
    const Mat& Gr = nodes_[r].grad;
    Mat& dx = nodes_[x].grad;
    Mat& dgamma = nodes_[gamma].grad;
    Mat& dbeta = nodes_[beta].grad;
    const int n = X.cols;
    for (int i = 0; i < X.rows; ++i) {
      const double* xr = X.row(i);
      const double* gr = Gr.row(i);
      const double is = inv_std[i];
      const double mu = mean[i];
      // dxhat = g * gamma; fold the two row sums into the standard form
      // dx = is/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int j = 0; j < n; ++j) {
        const double xhat = (xr[j] - mu) * is;
        const double dxhat = gr[j] * Gm.a[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        dgamma.a[j] += gr[j] * xhat;
        dbeta.a[j] += gr[j];
      }
      double* dxr = dx.row(i);
      for (int j = 0; j < n; ++j) {
        const double xhat = (xr[j] - mu) * is;
        const double dxhat = gr[j] * Gm.a[j];
        dxr[j] += (is / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
      }
    }
  };
  return r;
}

namespace {

// dX_row = (g - (g . y)) * y, applied over the active window only.
void softmax_backward_rows(const Mat& y, const Mat& g, Mat& dx, int offset, bool causal) {
  for (int i = 0; i < y.rows; ++i) {
    int hi = causal ? std::min(y.cols, std::max(1, i + offset + 1)) : y.cols;
    const double* yr = y.row(i);
    const double* gr = g.row(i);
    double dot = 0.0;
    for (int j = 0; j < hi; ++j) dot += gr[j] * yr[j];
    double* dxr = dx.row(i);
    for (int j = 0; j < hi; ++j) dxr[j] += (gr[j] - dot) * yr[j];
  }
}

}  // namespace

Graph::Ref Graph::softmax_rows(Ref x) {
  Mat out = nodes_[x].val;
  kernels::softmax_rows(out.a.data(), out.rows, out.cols);
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, x]() {
    softmax_backward_rows(nodes_[r].val, nodes_[r].grad, nodes_[x].grad, 0, false);
  };
  return r;
}

Graph::Ref Graph::softmax_rows_causal(Ref x, int offset) {
  Mat out = nodes_[x].val;
  kernels::softmax_rows_causal(out.a.data(), out.rows, out.cols, offset);
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, x, offset]() {
    softmax_backward_rows(nodes_[r].val, nodes_[r].grad, nodes_[x].grad, offset, true);
  };
  return r;
}

Graph::Ref Graph::mean_rows(Ref x) {
  const Mat& X = nodes_[x].val;
  Mat out(1, X.cols);
  for (int i = 0; i < X.rows; ++i) {
    const double* row = X.row(i);
    for (int j = 0; j < X.cols; ++j) out.a[j] += row[j];
  }
  for (int j = 0; j < X.cols; ++j) out.a[j] /= X.rows;
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, x]() {
    const Mat& G = nodes_[r].grad;
    Mat& dx = nodes_[x].grad;
    const double inv = 1.0 / dx.rows;
    for (int i = 0; i < dx.rows; ++i) {
      double* row = dx.row(i);
      for (int j = 0; j < dx.cols; ++j) row[j] += G.a[j] * inv;
    }
  };
  return r;
}

Graph::Ref Graph::slice_cols(Ref x, int c0, int c1) {
  const Mat& X = nodes_[x].val;
  assert(0 <= c0 && c0 < c1 && c1 <= X.cols);
  Mat out(X.rows, c1 - c0);
  for (int i = 0; i < X.rows; ++i)
    std::copy(X.row(i) + c0, X.row(i) + c1, out.row(i));
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, x, c0]() {
    const Mat& G = nodes_[r].grad;
    Mat& dx = nodes_[x].grad;
    for (int i = 0; i < G.rows; ++i) {
      const double* gr = G.row(i);
      double* dxr = dx.row(i) + c0;
      for (int j = 0; j < G.cols; ++j) dxr[j] += gr[j];
    }
  };
  return r;
}

Graph::Ref Graph::concat_cols(const std::vector<Ref>& parts) {
  assert(!parts.empty());
  const int rows = nodes_[parts[0]].val.rows;
  int cols = 0;
  for (Ref p : parts) {
    assert(nodes_[p].val.rows == rows);
    cols += nodes_[p].val.cols;
  }
  Mat out(rows, cols);
  int off = 0;
  for (Ref p : parts) {
    const Mat& P = nodes_[p].val;
    for (int i = 0; i < rows; ++i)
      std::copy(P.row(i), P.row(i) + P.cols, out.row(i) + off);
    off += P.cols;
  }
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, parts]() {
    const Mat& G = nodes_[r].grad;
    int off = 0;
    for (Ref p : parts) {
      Mat& dp = nodes_[p].grad;
      for (int i = 0; i < G.rows; ++i) {
        const double* gr = G.row(i) + off;
        double* dpr = dp.row(i);
        for (int j = 0; j < dp.cols; ++j) dpr[j] += gr[j];
      }
      off += dp.cols;
    }
  };
  return r;
}

Graph::Ref Graph::grad_reverse(Ref x) {
  Mat out = nodes_[x].val;
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, x]() {
    const Mat& G = nodes_[r].grad;
    Mat& dx = nodes_[x].grad;
    for (size_t i = 0; i < G.size(); ++i) dx.a[i] -= G.a[i];
  };
  return r;
}

Graph::Ref Graph::cross_entropy_sum(Ref logits, std::vector<int> targets) {
  const Mat& L = nodes_[logits].val;
  assert(static_cast<int>(targets.size()) == L.rows);
  double total = 0.0;
  for (int i = 0; i < L.rows; ++i) {
    const double* row = L.row(i);
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= L.cols) throw DataError("target id out of range in cross entropy");
    double mx = row[0];
    for (int j = 1; j < L.cols; ++j) mx = row[j] > mx ? row[j] : mx;
    double sum = 0.0;
    for (int j = 0; j < L.cols; ++j) sum += std::exp(row[j] - mx);
    total += mx + std::log(sum) - row[t];
  }
  Mat out(1, 1);
  out.a[0] = total;
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, logits, targets = std::move(targets)]() {
    const double g = nodes_[r].grad.a[0];
    const Mat& L = nodes_[logits].val;
    Mat& dl = nodes_[logits].grad;
    for (int i = 0; i < L.rows; ++i) {
      const double* row = L.row(i);
      double mx = row[0];
      for (int j = 1; j < L.cols; ++j) mx = row[j] > mx ? row[j] : mx;
      double sum = 0.0;
      for (int j = 0; j < L.cols; ++j) sum += std::exp(row[j] - mx);
      double* dlr = dl.row(i);
      const double inv = 1.0 / sum;
      for (int j = 0; j < L.cols; ++j) dlr[j] += g * std::exp(row[j] - mx) * inv;
      dlr[targets[static_cast<size_t>(i)]] -= g;
    }
  };
  return r;
}

Graph::Ref Graph::bce_with_logit(Ref z, double y) {
  const double zv = nodes_[z].val.a[0];
  Mat out(1, 1);
  out.a[0] = std::max(zv, 0.0) - zv * y + std::log1p(std::exp(-std::abs(zv)));
  Ref r = push(std::move(out));
  nodes_[r].back = [this, r, z, y]() {
    const double g = nodes_[r].grad.a[0];
    const double zv = nodes_[z].val.a[0];
    const double s = 1.0 / (1.0 + std::exp(-zv));
    nodes_[z].grad.a[0] += g * (s - y);
  };
  return r;
}

void Graph::set_loss_grad(Ref r, double g) {
  assert(nodes_[r].val.size() == 1);
  nodes_[r].grad.a[0] = g;
}

void Graph::backward() {
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back();
    if (nodes_[i].sink) {
      Mat& s = *nodes_[i].sink;
      const Mat& g = nodes_[i].grad;
      for (size_t j = 0; j < s.size(); ++j) s.a[j] += g.a[j];
    }
  }
}

std::vector<double> average_pool(const std::vector<std::vector<double>>& heads) {
  if (heads.empty()) throw DataError("average_pool: no head vectors");
  const size_t n = heads[0].size();
  for (const auto& h : heads)
    if (h.size() != n) throw DataError("average_pool: mismatched head vector lengths");
  std::vector<double> out(n, 0.0);
  for (const auto& h : heads)
    for (size_t i = 0; i < n; ++i) out[i] += h[i];
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (double& v : out) v *= inv;
  return out;
}

}  // namespace dialcomp
