#include "unisa/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unisa/error.hpp"

namespace unisa {

// --- Var / Graph -------------------------------------------------------------

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
  Node n;
  // Parameter values are copied so later optimizer steps cannot alter a recorded forward.
  n.value = p.value;
  n.is_leaf = true;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw ContractError("op inputs belong to different graphs");
    n.inputs.push_back(in.id());
    needs = needs || nodes_[in.id()].requires_grad;
  }
  n.requires_grad = grad_enabled_ && needs;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::grad(std::size_t id) const {
  static const Tensor kEmpty;
  const Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  return n.grad.empty() ? kEmpty : n.grad;
}

Tensor* Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return &n.grad;
}

void Graph::zero_leaf_grads() {
  for (Node& n : nodes_) {
    if (n.is_leaf && !n.param) n.grad = Tensor();
  }
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("loss belongs to a different graph");
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + root.value.shape_str());
  }
  if (!root.requires_grad) return;

  for (Node& n : nodes_) {
    if (!n.is_leaf || n.param) n.grad = Tensor();
  }
  grad_buffer(loss.id())->data()[0] += 1.0;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }

  for (Node& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    Tensor& dst = n.param->grad;
    if (dst.shape() != n.value.shape()) dst = Tensor::zeros_like(n.value);
    auto out = dst.data();
    auto in = n.grad.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    n.grad = Tensor();
  }
}

// --- kernels -------------------------------------------------------------------

namespace {

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

Tensor matrix_of(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// --- ops -----------------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + av.shape_str() + " x " + bv.shape_str());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = matrix_of(m, n);
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  Var inputs[] = {a, b};
  return a.graph().record(std::move(out), inputs, [a, b, m, k, n](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a.id())) gemm_nt(go.data().data(), b.value().data().data(), ga->data().data(), m, n, k);
    if (Tensor* gb = g.grad_buffer(b.id())) gemm_tn(a.value().data().data(), go.data().data(), gb->data().data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + av.shape_str() + " x " + bv.shape_str() + "^T");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out = matrix_of(m, n);
  gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  Var inputs[] = {a, b};
  return a.graph().record(std::move(out), inputs, [a, b, m, k, n](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a.id())) gemm_nn(go.data().data(), b.value().data().data(), ga->data().data(), m, n, k);
    if (Tensor* gb = g.grad_buffer(b.id())) gemm_tn(go.data().data(), a.value().data().data(), gb->data().data(), m, n, k);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  Var inputs[] = {a, b};
  return a.graph().record(std::move(out), inputs, [a, b](Graph& g, const Tensor& go) {
    accumulate(g.grad_buffer(a.id()), go);
    accumulate(g.grad_buffer(b.id()), go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  Var inputs[] = {a, b};
  return a.graph().record(std::move(out), inputs, [a, b](Graph& g, const Tensor& go) {
    accumulate(g.grad_buffer(a.id()), go);
    if (Tensor* gb = g.grad_buffer(b.id())) {
      auto d = gb->data();
      auto s = go.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  Var inputs[] = {a, b};
  return a.graph().record(std::move(out), inputs, [a, b](Graph& g, const Tensor& go) {
    auto s = go.data();
    if (Tensor* ga = g.grad_buffer(a.id())) {
      auto d = ga->data();
      auto bv = b.value().data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * bv[i];
    }
    if (Tensor* gb = g.grad_buffer(b.id())) {
      auto d = gb->data();
      auto av = a.value().data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + rv.shape_str() + " does not broadcast over " + av.shape_str());
  }
  Tensor out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
  Var inputs[] = {a, row};
  return a.graph().record(std::move(out), inputs, [a, row, m, n](Graph& g, const Tensor& go) {
    accumulate(g.grad_buffer(a.id()), go);
    if (Tensor* gr = g.grad_buffer(row.id())) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gr)[j] += go(i, j);
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, c](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a.id())) {
      auto d = ga->data();
      auto s = go.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * s[i];
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Var inputs[] = {a};
  return a.graph().record(Tensor::scalar(s), inputs, [a](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a.id())) {
      const double gv = go[0];
      for (double& v : ga->data()) v += gv;
    }
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = matrix_of(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av(i, j);
    out[i] = s;
  }
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, m, n](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a.id())) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)(i, j) += go[i];
    }
  });
}

Var safe_div(Var num, Var den) {
  require_same_shape("safe_div", num.value(), den.value());
  Tensor out = Tensor::zeros_like(num.value());
  auto nv = num.value().data();
  auto dv = den.value().data();
  for (std::size_t i = 0; i < nv.size(); ++i) out[i] = dv[i] == 0.0 ? 0.0 : nv[i] / dv[i];
  Var inputs[] = {num, den};
  return num.graph().record(std::move(out), inputs, [num, den](Graph& g, const Tensor& go) {
    auto nv = num.value().data();
    auto dv = den.value().data();
    Tensor* gn = g.grad_buffer(num.id());
    Tensor* gd = g.grad_buffer(den.id());
    for (std::size_t i = 0; i < nv.size(); ++i) {
      if (dv[i] == 0.0) continue;
      if (gn) (*gn)[i] += go[i] / dv[i];
      if (gd) (*gd)[i] -= go[i] * nv[i] / (dv[i] * dv[i]);
    }
  });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a.id())) {
      auto x = a.value().data();
      auto d = ga->data();
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
        d[i] += go[i] * (cdf + x[i] * pdf);
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw DimensionError("layer_norm: affine params " + gamma.value().shape_str() + "/" +
                         beta.value().shape_str() + " do not match " + xv.shape_str());
  }
  Tensor xhat = matrix_of(m, n);
  Tensor inv_std = matrix_of(m, 1);
  Tensor out = matrix_of(m, n);
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * is;
      out(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  Var inputs[] = {x, gamma, beta};
  return x.graph().record(
      std::move(out), inputs,
      [x, gamma, beta, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, const Tensor& go) {
        const auto gv = gamma.value().data();
        if (Tensor* gg = g.grad_buffer(gamma.id())) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += go(i, j) * xhat(i, j);
        }
        if (Tensor* gb = g.grad_buffer(beta.id())) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += go(i, j);
        }
        if (Tensor* gx = g.grad_buffer(x.id())) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = go(i, j) * gv[j];
              mean_d += d;
              mean_dx += d * xhat(i, j);
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = go(i, j) * gv[j];
              (*gx)(i, j) += inv_std[i] * (d - mean_d - xhat(i, j) * mean_dx);
            }
          }
        }
      });
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out = a;
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : r) v /= s;
  }
  (void)n;
  return out;
}

Var softmax_rows(Var a) {
  Tensor out = softmax_rows(a.value());
  Tensor probs = out;
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, probs = std::move(probs)](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    const std::size_t m = probs.rows(), n = probs.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go(i, j) * probs(i, j);
      for (std::size_t j = 0; j < n; ++j) (*ga)(i, j) += probs(i, j) * (go(i, j) - dot);
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  const std::size_t v = tv.rows(), d = tv.cols();
  if (ids.empty()) throw ContractError("embedding: empty id list");
  Tensor out = matrix_of(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) + " rows");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> idx(ids.begin(), ids.end());
  Var inputs[] = {table};
  return table.graph().record(std::move(out), inputs, [table, idx = std::move(idx), d](Graph& g, const Tensor& go) {
    Tensor* gt = g.grad_buffer(table.id());
    if (!gt) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gt->row(static_cast<std::size_t>(idx[i]));
      auto src = go.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  if (rows.empty()) throw ContractError("gather_rows: empty row list");
  Tensor out = matrix_of(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " outside " + av.shape_str());
    auto src = av.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, idx = std::move(idx)](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = ga->row(idx[i]);
      auto src = go.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

Var gather_cols(Var a, std::span<const std::size_t> cols) {
  const Tensor& av = a.value();
  if (cols.empty()) throw ContractError("gather_cols: empty column list");
  const std::size_t m = av.rows();
  Tensor out = matrix_of(m, cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= av.cols()) throw IndexError("gather_cols: column " + std::to_string(cols[j]) + " outside " + av.shape_str());
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = av(i, cols[j]);
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, idx = std::move(idx), m](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) (*ga)(i, idx[j]) += go(i, j);
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || start + count > av.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " + av.shape_str());
  }
  const std::size_t m = av.rows();
  Tensor out = matrix_of(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, start + j);
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, start, count, m](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) (*ga)(i, start + j) += go(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + parts[0].value().shape_str() + " vs " + p.value().shape_str());
    }
    m += p.rows();
  }
  Tensor out = matrix_of(m, n);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * n));
    offset += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].graph().record(std::move(out), parts, [ins, n](Graph& g, const Tensor& go) {
    std::size_t offset = 0;
    for (const Var& p : ins) {
      const std::size_t rows = p.rows();
      if (Tensor* gp = g.grad_buffer(p.id())) {
        auto d = gp->data();
        for (std::size_t i = 0; i < rows * n; ++i) d[i] += go[offset * n + i];
      }
      offset += rows;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + parts[0].value().shape_str() + " vs " + p.value().shape_str());
    }
    n += p.cols();
  }
  Tensor out = matrix_of(m, n);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offset + j) = pv(i, j);
    offset += pv.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].graph().record(std::move(out), parts, [ins, m](Graph& g, const Tensor& go) {
    std::size_t offset = 0;
    for (const Var& p : ins) {
      const std::size_t cols = p.cols();
      if (Tensor* gp = g.grad_buffer(p.id())) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < cols; ++j) (*gp)(i, j) += go(i, offset + j);
      }
      offset += cols;
    }
  });
}

Var replace_rows(Var a, Var row, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("replace_rows: row " + rv.shape_str() + " does not fit " + av.shape_str());
  }
  Tensor out = av;
  std::vector<char> replaced(av.rows(), 0);
  for (std::size_t r : rows) {
    if (r >= av.rows()) throw IndexError("replace_rows: row " + std::to_string(r) + " outside " + av.shape_str());
    replaced[r] = 1;
    std::copy(rv.data().begin(), rv.data().end(), out.row(r).begin());
  }
  Var inputs[] = {a, row};
  return a.graph().record(std::move(out), inputs, [a, row, replaced = std::move(replaced)](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    Tensor* gr = g.grad_buffer(row.id());
    const std::size_t n = go.cols();
    for (std::size_t i = 0; i < replaced.size(); ++i) {
      auto src = go.row(i);
      if (replaced[i]) {
        if (gr)
          for (std::size_t j = 0; j < n; ++j) (*gr)[j] += src[j];
      } else if (ga) {
        auto dst = ga->row(i);
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    }
  });
}

Var mean_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  if (rows.empty()) throw ContractError("mean_rows: empty row set");
  const std::size_t n = av.cols();
  Tensor out = matrix_of(1, n);
  for (std::size_t r : rows) {
    if (r >= av.rows()) throw IndexError("mean_rows: row " + std::to_string(r) + " outside " + av.shape_str());
    auto src = av.row(r);
    for (std::size_t j = 0; j < n; ++j) out[j] += src[j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out.data()) v *= inv;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, idx = std::move(idx), inv, n](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    for (std::size_t r : idx) {
      auto dst = ga->row(r);
      for (std::size_t j = 0; j < n; ++j) dst[j] += go[j] * inv;
    }
  });
}

Var pairwise_distance(Var a) {
  const Tensor& av = a.value();
  const std::size_t b = av.rows(), n = av.cols();
  Tensor out = matrix_of(b, b);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t k = j + 1; k < b; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double diff = av(j, c) - av(k, c);
        s += diff * diff;
      }
      out(j, k) = out(k, j) = std::sqrt(s);
    }
  }
  Tensor dist = out;
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, b, n, dist = std::move(dist)](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    const Tensor& av = a.value();
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t k = 0; k < b; ++k) {
        const double d = dist(j, k);
        // Zero distance is a kink of the norm; use the zero subgradient there.
        if (j == k || d == 0.0) continue;
        const double w = go(j, k) / d;
        for (std::size_t c = 0; c < n; ++c) {
          const double diff = av(j, c) - av(k, c);
          (*ga)(j, c) += w * diff;
          (*ga)(k, c) -= w * diff;
        }
      }
    }
  });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1, got " + std::to_string(rate));
  const Tensor& av = a.value();
  Tensor mask = Tensor::zeros_like(av);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = unif(rng) < rate ? 0.0 : keep_scale;
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  Var inputs[] = {a};
  return a.graph().record(std::move(out), inputs, [a, mask = std::move(mask)](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_buffer(a.id());
    if (!ga) return;
    for (std::size_t i = 0; i < mask.size(); ++i) (*ga)[i] += go[i] * mask[i];
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets, Reduction reduction) {
  const Tensor& lv = logits.value();
  const std::size_t m = lv.rows(), v = lv.cols();
  if (targets.size() != m) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + lv.shape_str());
  }
  for (std::size_t t : targets) {
    if (t >= v) throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(v) + " classes");
  }
  Tensor probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    auto r = lv.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double x : r) s += std::exp(x - mx);
    loss += std::log(s) + mx - r[targets[i]];
  }
  const double norm = reduction == Reduction::Mean ? 1.0 / static_cast<double>(m) : 1.0;
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Var inputs[] = {logits};
  return logits.graph().record(
      Tensor::scalar(loss * norm), inputs,
      [logits, probs = std::move(probs), tgt = std::move(tgt), norm, m, v](Graph& g, const Tensor& go) {
        Tensor* gl = g.grad_buffer(logits.id());
        if (!gl) return;
        const double s = go[0] * norm;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < v; ++j) (*gl)(i, j) += s * probs(i, j);
          (*gl)(i, tgt[i]) -= s;
        }
      });
}

}  // namespace unisa
