#include "mbc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mbc::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const char* op, Shape a, Shape b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                              to_string(b));
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(value);
  n->leaf = false;
  bool needs = false;
  if (NoGradGuard::grad_enabled()) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  n->requires_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Tensor::from_node(std::move(n));
}

// C(m×n) += A(m×k) · B(k×n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C(m×n) += A(m×k) · B(n×k)ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C(m×n) += A(k×m)ᵀ · B(k×n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

thread_local FrozenBranches* g_frozen = nullptr;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
    if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.ensure_grad().data(), k, m, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) gemm_nn(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
    if (pb.requires_grad) gemm_tn(self.grad.data(), pa.value.data(), pb.ensure_grad().data(), n, m, k);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    // Both may be the same node (x∘x); ensure_grad on each then accumulate.
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  return make_result(a.shape(), std::move(out), {a.node()}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.shape(), row.shape());
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.values()[i * d + j] + row.values()[j];
  return make_result(a.shape(), std::move(out), {a.node(), row.node()}, [n, d](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x)));
  }
  return make_result(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p.value[i];
      const double t = std::tanh(c * (x + k * x * x * x));
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      g[i] += self.grad[i] * d;
    }
  });
}

Tensor softmax_rows(const Tensor& a, std::optional<std::size_t> causal_offset) {
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(a.numel(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t visible = causal_offset ? std::min(d, i + *causal_offset + 1) : d;
    if (visible == 0) throw std::invalid_argument("softmax_rows: row with no visible columns");
    const double* x = a.values().data() + i * d;
    double* y = out.data() + i * d;
    double mx = x[0];
    for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < visible; ++j) y[j] /= total;
  }
  return make_result(a.shape(), std::move(out), {a.node()}, [n, d](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.value.data() + i * d;
      const double* dy = self.grad.data() + i * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.shape() != Shape{1, d}) shape_error("layer_norm gain", x.shape(), gain.shape());
  if (bias.shape() != Shape{1, d}) shape_error("layer_norm bias", x.shape(), bias.shape());
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.values().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xi[j] - mu) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gain.values()[j] + bias.values()[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = self.grad[i * d + j] * pg.value[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i * d + j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = self.grad[i * d + j] * pg.value[j];
              g[i * d + j] += rstd[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " >= table rows " +
                              std::to_string(table.rows()));
    }
    std::copy_n(table.values().data() + ids[i] * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table.node()},
                     [d, idx = std::vector<std::size_t>(ids.begin(), ids.end())](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const long> targets) {
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  }
  std::vector<double> probs(logits.numel(), 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == kIgnore) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw std::out_of_range("cross_entropy: target out of range");
    }
    const double* x = logits.values().data() + i * v;
    double mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(x[j] - mx) / z;
    total += (std::log(z) + mx) - x[targets[i]];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is masked");
  const double inv = 1.0 / static_cast<double>(count);
  return make_result(
      {1, 1}, {total * inv}, {logits.node()},
      [n, v, inv, probs = std::move(probs), tg = std::vector<long>(targets.begin(), targets.end())](
          Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double up = self.grad[0] * inv;
        for (std::size_t i = 0; i < n; ++i) {
          if (tg[i] == kIgnore) continue;
          for (std::size_t j = 0; j < v; ++j) g[i * v + j] += up * probs[i * v + j];
          g[i * v + static_cast<std::size_t>(tg[i])] -= up;
        }
      });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t d = parts[0].cols();
  std::size_t n = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != d) shape_error("concat_rows", parts[0].shape(), p.shape());
    offsets.push_back(n * d);
    n += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result({n, d}, std::move(out), std::move(parents),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         auto& g = p.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t d = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != n) shape_error("concat_cols", parts[0].shape(), p.shape());
    offsets.push_back(d);
    d += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(n * d);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(parts[k].values().data() + i * w, w, out.data() + i * d + offsets[k]);
  }
  return make_result({n, d}, std::move(out), std::move(parents),
                     [n, d, offsets = std::move(offsets)](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         auto& g = p.ensure_grad();
                         const std::size_t w = p.shape.cols;
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * d + offsets[k] + j];
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (start + count > a.rows()) throw std::out_of_range("slice_rows: range exceeds " + to_string(a.shape()));
  const std::size_t d = a.cols();
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(start * d),
                          a.values().begin() + static_cast<std::ptrdiff_t>((start + count) * d));
  return make_result({count, d}, std::move(out), {a.node()}, [start, d](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * d + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  if (start + count > a.cols()) throw std::out_of_range("slice_cols: range exceeds " + to_string(a.shape()));
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(a.values().data() + i * d + start, count, out.data() + i * count);
  return make_result({n, count}, std::move(out), {a.node()}, [n, d, start, count](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * d + start + j] += self.grad[i * count + j];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result({1, 1}, {total}, {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result({1, 1}, {total * inv}, {a.node()}, [inv](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& x : g) x += self.grad[0] * inv;
  });
}

Tensor stop_gradient(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  if (auto* f = FrozenBranches::active()) v = f->pass_value(std::move(v));
  auto n = std::make_shared<Node>();
  n->shape = x.shape();
  n->value = std::move(v);
  n->leaf = false;
  n->requires_grad = false;
  return Tensor::from_node(std::move(n));
}

FrozenBranches::FrozenBranches() : previous_(g_frozen) { g_frozen = this; }
FrozenBranches::~FrozenBranches() { g_frozen = previous_; }

FrozenBranches* FrozenBranches::active() { return g_frozen; }

void FrozenBranches::start_replay() {
  mode_ = Mode::replay;
  value_cursor_ = 0;
  choice_cursor_ = 0;
}

std::vector<double> FrozenBranches::pass_value(std::vector<double> computed) {
  if (mode_ == Mode::record) {
    values_.push_back(computed);
    return computed;
  }
  if (value_cursor_ >= values_.size() || values_[value_cursor_].size() != computed.size()) {
    throw std::logic_error("FrozenBranches: replayed forward diverged from the recorded one");
  }
  // Restart the cursor so one recording serves any number of replays.
  auto out = values_[value_cursor_++];
  if (value_cursor_ == values_.size()) value_cursor_ = 0;
  return out;
}

std::vector<std::size_t> FrozenBranches::pass_choice(std::vector<std::size_t> computed) {
  if (mode_ == Mode::record) {
    choices_.push_back(computed);
    return computed;
  }
  if (choice_cursor_ >= choices_.size() || choices_[choice_cursor_].size() != computed.size()) {
    throw std::logic_error("FrozenBranches: replayed forward diverged from the recorded one");
  }
  auto out = choices_[choice_cursor_++];
  if (choice_cursor_ == choices_.size()) choice_cursor_ = 0;
  return out;
}

}  // namespace mbc::ops
