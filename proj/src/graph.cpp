#include "crowding/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crowding/simd/kernels.hpp"

namespace crowding {

Param::Param(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

ParamPtr make_param(std::string name, Tensor value) {
  return std::make_shared<Param>(std::move(name), std::move(value));
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// dst += a * b^T  (a: m x n, b: k x n, dst: m x k)
void accumulate_a_bt(const Tensor& a, const Tensor& b, Tensor& dst) {
  const Tensor bt = transpose(b);
  simd::active().gemm_nn(a.rows(), bt.cols(), a.cols(), a.data(), a.cols(),
                         bt.data(), bt.cols(), dst.data(), dst.cols());
}

// dst += a^T * b  (a: m x k, b: m x n, dst: k x n)
void accumulate_at_b(const Tensor& a, const Tensor& b, Tensor& dst) {
  const Tensor at = transpose(a);
  simd::active().gemm_nn(at.rows(), b.cols(), at.cols(), at.data(), at.cols(),
                         b.data(), b.cols(), dst.data(), dst.cols());
}

}  // namespace

Var Graph::push(Tensor value, bool requires_grad,
                std::function<void(Graph&, const Node&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value))
    n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Var Graph::param(const ParamPtr& p) {
  require(p != nullptr, "null parameter");
  Var v = push(p->value, p->requires_grad, nullptr);
  nodes_[v.id].param = p.get();
  return v;
}

Var Graph::constant(Tensor t) { return push(std::move(t), false, nullptr); }

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(av.cols() == bv.rows(),
          "matmul shape mismatch " + av.shape_string() + " * " + bv.shape_string());
  Tensor out = crowding::matmul(av, bv);
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    if (g.needs(a)) accumulate_a_bt(self.grad, g.value(b), g.grad_slot(a));
    if (g.needs(b)) accumulate_at_b(g.value(a), self.grad, g.grad_slot(b));
  });
}

Var Graph::add_bias(Var a, Var bias) {
  const Tensor& av = value(a);
  const Tensor& bv = value(bias);
  require(bv.size() == av.cols(), "bias width " + std::to_string(bv.size()) +
                                      " vs " + std::to_string(av.cols()));
  Tensor out = av;
  const std::size_t n = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  return push(std::move(out), needs(a) || needs(bias),
              [a, bias, n](Graph& g, const Node& self) {
                if (g.needs(a)) {
                  Tensor& ga = g.grad_slot(a);
                  simd::active().axpy(1.0, self.grad.data(), ga.data(), ga.size());
                }
                if (g.needs(bias)) {
                  Tensor& gb = g.grad_slot(bias);
                  for (std::size_t r = 0; r < self.grad.rows(); ++r)
                    simd::active().axpy(1.0, self.grad.data() + r * n, gb.data(), n);
                }
              });
}

Var Graph::add(Var a, Var b) {
  require(value(a).same_shape(value(b)), "add shape mismatch");
  Tensor out = value(a);
  simd::active().axpy(1.0, value(b).data(), out.data(), out.size());
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    for (Var v : {a, b}) {
      if (!g.needs(v)) continue;
      Tensor& gv = g.grad_slot(v);
      simd::active().axpy(1.0, self.grad.data(), gv.data(), gv.size());
    }
  });
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Graph::mul(Var a, Var b) {
  require(value(a).same_shape(value(b)), "mul shape mismatch");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Node& self) {
    if (g.needs(a)) {
      Tensor& ga = g.grad_slot(a);
      const Tensor& bv = g.value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (g.needs(b)) {
      Tensor& gb = g.grad_slot(b);
      const Tensor& av = g.value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

Var Graph::scale(Var a, double c) {
  Tensor out = value(a);
  for (double& x : out.values()) x *= c;
  return push(std::move(out), needs(a), [a, c](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    simd::active().axpy(c, self.grad.data(), ga.data(), ga.size());
  });
}

Var Graph::add_scalar(Var a, double c) {
  Tensor out = value(a);
  for (double& x : out.values()) x += c;
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    simd::active().axpy(1.0, self.grad.data(), ga.data(), ga.size());
  });
}

Var Graph::relu(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  simd::active().relu(av.data(), out.data(), av.size());
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += self.value[i] > 0.0 ? self.grad[i] : 0.0;
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = value(a);
  for (double& x : out.values())
    x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double s = self.value[i];
      ga[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var Graph::softmax_rows(Var a) {
  const Tensor& av = value(a);
  const std::size_t n = av.cols();
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double* row = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) row[c] /= z;
  }
  return push(std::move(out), needs(a), [a, n](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const double* p = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      const double inner = simd::active().dot(p, gy, n);
      double* gx = ga.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) gx[c] += p[c] * (gy[c] - inner);
    }
  });
}

Var Graph::log_softmax_rows(Var a) {
  const Tensor& av = value(a);
  const std::size_t n = av.cols();
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double* row = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) row[c] -= lse;
  }
  return push(std::move(out), needs(a), [a, n](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const double* lp = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double total = 0.0;
      for (std::size_t c = 0; c < n; ++c) total += gy[c];
      double* gx = ga.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) gx[c] += gy[c] - std::exp(lp[c]) * total;
    }
  });
}

Var Graph::log_clamped(Var a, double lo, double hi, ClampStats* stats) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    const double c = std::clamp(x, lo, hi);
    if (c != x && stats) ++stats->count;
    out[i] = std::log(c);
  }
  return push(std::move(out), needs(a), [a, lo, hi](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    const Tensor& av = g.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (av[i] > lo && av[i] < hi) ga[i] += self.grad[i] / av[i];
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat of nothing");
  const std::size_t rows = value(parts[0]).rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  bool any = false;
  for (Var p : parts) {
    require(value(p).rows() == rows, "concat row mismatch");
    offsets.push_back(total);
    total += value(p).cols();
    any = any || needs(p);
  }
  Tensor out = Tensor::matrix(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = value(parts[k]);
    const std::size_t w = pv.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * w, w, out.data() + r * total + offsets[k]);
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(out), any,
              [ps, offsets, total](Graph& g, const Node& self) {
                for (std::size_t k = 0; k < ps.size(); ++k) {
                  if (!g.needs(ps[k])) continue;
                  Tensor& gp = g.grad_slot(ps[k]);
                  const std::size_t w = gp.cols();
                  for (std::size_t r = 0; r < gp.rows(); ++r)
                    simd::active().axpy(1.0, self.grad.data() + r * total + offsets[k],
                                        gp.data() + r * w, w);
                }
              });
}

Var Graph::reshape(Var a, std::size_t rows, std::size_t cols) {
  require(rows * cols == value(a).size(), "reshape size mismatch");
  Tensor out = value(a).reshaped({rows, cols});
  return push(std::move(out), needs(a), [a](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    simd::active().axpy(1.0, self.grad.data(), ga.data(), ga.size());
  });
}

Var Graph::pick(Var a, std::span<const std::size_t> index) {
  const Tensor& av = value(a);
  require(index.size() == av.rows(), "pick index count mismatch");
  const std::size_t n = av.cols();
  Tensor out = Tensor::matrix(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    require(index[r] < n, "pick index out of range");
    out[r] = av[r * n + index[r]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return push(std::move(out), needs(a), [a, idx, n](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + idx[r]] += self.grad[r];
  });
}

Var Graph::gather_rows(Var a, std::span<const std::size_t> index) {
  const Tensor& av = value(a);
  const std::size_t w = av.cols();
  Tensor out = Tensor::matrix(index.size(), w);
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < av.rows(), "gather_rows index out of range");
    std::copy_n(av.data() + index[r] * w, w, out.data() + r * w);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return push(std::move(out), needs(a), [a, idx, w](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (std::size_t r = 0; r < idx.size(); ++r)
      simd::active().axpy(1.0, self.grad.data() + r * w, ga.data() + idx[r] * w, w);
  });
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double x : value(a).values()) s += x;
  return push(Tensor::matrix(1, 1, s), needs(a), [a](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    for (double& x : ga.values()) x += self.grad[0];
  });
}

Var Graph::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  require(n > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var Graph::weighted_sum(Var a, const Tensor& weights) {
  const Tensor& av = value(a);
  require(weights.size() == av.size(), "weighted_sum size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += weights[i] * av[i];
  return push(Tensor::matrix(1, 1, s), needs(a), [a, weights](Graph& g, const Node& self) {
    Tensor& ga = g.grad_slot(a);
    simd::active().axpy(self.grad[0], weights.data(), ga.data(), ga.size());
  });
}

Var Graph::bilinear_select(Var u, Var stack, Var v, std::span<const std::size_t> cls) {
  const Tensor& uv = value(u);
  const Tensor& vv = value(v);
  const Tensor& sv = value(stack);
  const std::size_t m = uv.cols();
  require(vv.cols() == m && sv.cols() == m && sv.rows() % m == 0,
          "bilinear_select width mismatch");
  require(uv.rows() == vv.rows() && uv.rows() == cls.size(),
          "bilinear_select batch mismatch");
  const std::size_t classes = sv.rows() / m;
  const auto& k = simd::active();
  Tensor out = Tensor::matrix(uv.rows(), 1);
  std::vector<double> mv(m);
  for (std::size_t b = 0; b < uv.rows(); ++b) {
    require(cls[b] < classes, "bilinear_select class out of range");
    const double* block = sv.data() + cls[b] * m * m;
    for (std::size_t i = 0; i < m; ++i) mv[i] = k.dot(block + i * m, vv.data() + b * m, m);
    out[b] = k.dot(uv.data() + b * m, mv.data(), m);
  }
  std::vector<std::size_t> idx(cls.begin(), cls.end());
  return push(std::move(out), needs(u) || needs(stack) || needs(v),
              [u, stack, v, idx, m](Graph& g, const Node& self) {
                const auto& k = simd::active();
                const Tensor& uv = g.value(u);
                const Tensor& vv = g.value(v);
                const Tensor& sv = g.value(stack);
                Tensor* gu = g.needs(u) ? &g.grad_slot(u) : nullptr;
                Tensor* gv = g.needs(v) ? &g.grad_slot(v) : nullptr;
                Tensor* gs = g.needs(stack) ? &g.grad_slot(stack) : nullptr;
                std::vector<double> tmp(m);
                for (std::size_t b = 0; b < idx.size(); ++b) {
                  const double go = self.grad[b];
                  if (go == 0.0) continue;
                  const double* block = sv.data() + idx[b] * m * m;
                  const double* ub = uv.data() + b * m;
                  const double* vb = vv.data() + b * m;
                  if (gu) {
                    for (std::size_t i = 0; i < m; ++i)
                      (*gu)[b * m + i] += go * k.dot(block + i * m, vb, m);
                  }
                  if (gv) {
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    for (std::size_t i = 0; i < m; ++i) k.axpy(ub[i], block + i * m, tmp.data(), m);
                    k.axpy(go, tmp.data(), gv->data() + b * m, m);
                  }
                  if (gs) {
                    double* gblock = gs->data() + idx[b] * m * m;
                    for (std::size_t i = 0; i < m; ++i) k.axpy(go * ub[i], vb, gblock + i * m, m);
                  }
                }
              });
}

Var Graph::select_matmul(Var z, Var stack, std::span<const std::size_t> which) {
  const Tensor& zv = value(z);
  const Tensor& sv = value(stack);
  const std::size_t c = zv.cols();
  require(sv.cols() == c && sv.rows() % c == 0, "select_matmul width mismatch");
  require(which.size() == zv.rows(), "select_matmul batch mismatch");
  const std::size_t blocks = sv.rows() / c;
  const auto& k = simd::active();
  Tensor out = Tensor::matrix(zv.rows(), c);
  for (std::size_t b = 0; b < zv.rows(); ++b) {
    require(which[b] < blocks, "select_matmul index out of range");
    k.gemm_nn(1, c, c, zv.data() + b * c, c, sv.data() + which[b] * c * c, c,
              out.data() + b * c, c);
  }
  std::vector<std::size_t> idx(which.begin(), which.end());
  return push(std::move(out), needs(z) || needs(stack),
              [z, stack, idx, c](Graph& g, const Node& self) {
                const auto& k = simd::active();
                const Tensor& zv = g.value(z);
                const Tensor& sv = g.value(stack);
                Tensor* gz = g.needs(z) ? &g.grad_slot(z) : nullptr;
                Tensor* gs = g.needs(stack) ? &g.grad_slot(stack) : nullptr;
                for (std::size_t b = 0; b < idx.size(); ++b) {
                  const double* gy = self.grad.data() + b * c;
                  const double* block = sv.data() + idx[b] * c * c;
                  for (std::size_t i = 0; i < c; ++i) {
                    if (gz) (*gz)[b * c + i] += k.dot(block + i * c, gy, c);
                    if (gs) k.axpy(zv[b * c + i], gy, gs->data() + idx[b] * c * c + i * c, c);
                  }
                }
              });
}

void Graph::backward(Var loss) {
  require(grad_enabled_, "backward on a graph built without gradients");
  require(value(loss).size() == 1,
          "backward needs a scalar loss, got shape " + value(loss).shape_string());
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id].requires_grad) return;
  grad_slot(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backprop) n.backprop(*this, n);
    if (n.param) {
      Tensor& pg = n.param->grad;
      if (!pg.same_shape(n.param->value)) pg = Tensor(n.param->value.shape(), 0.0);
      simd::active().axpy(1.0, n.grad.data(), pg.data(), pg.size());
    }
  }
}

}  // namespace crowding
