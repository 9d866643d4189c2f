#include "mtplab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace mtplab {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(std::span<const float> vals, const char* op) {
  for (float v : vals) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value produced");
    }
  }
}

void check_finite_input(std::span<const float> vals, const char* op) {
  for (float v : vals) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input");
    }
  }
}

std::vector<float>& grad_buf(detail::TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0f);
  return n.grad;
}

}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor make_op_result(Shape shape, std::vector<float> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backfn) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) track = true;
    }
  }
  if (track) {
    node->requires_grad = true;
    for (const Tensor& p : parents) {
      if (p.defined()) node->parents.push_back(p.node_ptr());
    }
    node->backfn = std::move(backfn);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.0f),
                   requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  return from_data(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), value),
                   requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  check_finite_input(data, "from_data");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = static_cast<float>(rng.normal() * stddev);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

std::span<float> Tensor::mutable_grad() { return grad_buf(*node_); }

void Tensor::zero_grad() { node_->grad.clear(); }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::clone_detached(bool requires_grad) const {
  return from_data(node_->shape, node_->data, requires_grad);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const size_t n = a.data().size();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [an, bn](detail::TensorNode& self) {
                          if (an->requires_grad) {
                            auto& g = grad_buf(*an);
                            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (bn->requires_grad) {
                            auto& g = grad_buf(*bn);
                            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                        });
}

Tensor scale(const Tensor& x, float c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  const size_t n = x.data().size();
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = x.data()[i] * c;
  check_finite(out, "scale");
  auto xn = x.node_ptr();
  return make_op_result(x.shape(), std::move(out), {x},
                        [xn, c](detail::TensorNode& self) {
                          if (!xn->requires_grad) return;
                          auto& g = grad_buf(*xn);
                          for (size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
                        });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  std::vector<float> out{static_cast<float>(acc)};
  check_finite(out, "sum");
  auto xn = x.node_ptr();
  return make_op_result({1}, std::move(out), {x},
                        [xn](detail::TensorNode& self) {
                          if (!xn->requires_grad) return;
                          auto& g = grad_buf(*xn);
                          const float go = self.grad[0];
                          for (float& v : g) v += go;
                        });
}

// ---- matmul / linear ----

namespace {

// C[m,n] += A[m,k] * B[k,n], row-major, fixed loop order.
void mm_acc(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void mm_at_b(const float* a, const float* b, float* c, int64_t k, int64_t m, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const float av = arow[i];
      float* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_a_bt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float acc = 0.0f;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<size_t>(m * n), 0.0f);
  mm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  check_finite(out, "matmul");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op_result({m, n}, std::move(out), {a, b},
                        [an, bn, m, k, n](detail::TensorNode& self) {
                          if (an->requires_grad) {
                            // dA = dC * B^T
                            mm_a_bt(self.grad.data(), bn->data.data(),
                                    grad_buf(*an).data(), m, n, k);
                          }
                          if (bn->requires_grad) {
                            // dB = A^T * dC
                            mm_at_b(an->data.data(), self.grad.data(),
                                    grad_buf(*bn).data(), m, k, n);
                          }
                        });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: incompatible shapes x=" + shape_str(x.shape()) +
                     " w=" + shape_str(w.shape()));
  }
  const int64_t t = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  }
  std::vector<float> out(static_cast<size_t>(t * out_dim), 0.0f);
  if (b.defined()) {
    for (int64_t i = 0; i < t; ++i) {
      std::memcpy(out.data() + i * out_dim, b.data().data(),
                  static_cast<size_t>(out_dim) * sizeof(float));
    }
  }
  // y = x * w^T
  mm_a_bt(x.data().data(), w.data().data(), out.data(), t, in, out_dim);
  check_finite(out, "linear");
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = b.defined() ? b.node_ptr() : nullptr;
  return make_op_result(
      {t, out_dim}, std::move(out), b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w},
      [xn, wn, bn, t, in, out_dim](detail::TensorNode& self) {
        if (xn->requires_grad) {
          // dx = dy * w
          mm_acc(self.grad.data(), wn->data.data(), grad_buf(*xn).data(), t,
                 out_dim, in);
        }
        if (wn->requires_grad) {
          // dw = dy^T * x
          mm_at_b(self.grad.data(), xn->data.data(), grad_buf(*wn).data(), t,
                  out_dim, in);
        }
        if (bn && bn->requires_grad) {
          auto& g = grad_buf(*bn);
          for (int64_t i = 0; i < t; ++i) {
            const float* grow = self.grad.data() + i * out_dim;
            for (int64_t j = 0; j < out_dim; ++j) g[static_cast<size_t>(j)] += grow[j];
          }
        }
      });
}

// ---- gelu ----

Tensor gelu(const Tensor& x) {
  const size_t n = x.data().size();
  std::vector<float> out(n);
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  check_finite(out, "gelu");
  auto xn = x.node_ptr();
  return make_op_result(x.shape(), std::move(out), {x},
                        [xn](detail::TensorNode& self) {
                          if (!xn->requires_grad) return;
                          auto& g = grad_buf(*xn);
                          constexpr double kInvSqrt2 = 0.70710678118654752440;
                          constexpr double kInvSqrt2Pi = 0.39894228040143267794;
                          for (size_t i = 0; i < g.size(); ++i) {
                            const double v = xn->data[i];
                            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                            g[i] += static_cast<float>((cdf + v * pdf) * self.grad[i]);
                          }
                        });
}

// ---- softmax (general axis) ----

namespace {

struct AxisIter {
  int64_t outer, extent, inner;
};

AxisIter axis_iter(const Shape& shape, int axis) {
  const int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError("axis out of range");
  AxisIter it{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) it.outer *= shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) it.inner *= shape[static_cast<size_t>(i)];
  return it;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  check_finite_input(x.data(), "softmax");
  const AxisIter it = axis_iter(x.shape(), axis);
  std::vector<float> out(x.data().size());
  const float* src = x.data().data();
  for (int64_t o = 0; o < it.outer; ++o) {
    for (int64_t in = 0; in < it.inner; ++in) {
      const int64_t base = o * it.extent * it.inner + in;
      float mx = src[base];
      for (int64_t e = 1; e < it.extent; ++e) {
        mx = std::max(mx, src[base + e * it.inner]);
      }
      double denom = 0.0;
      for (int64_t e = 0; e < it.extent; ++e) {
        denom += std::exp(static_cast<double>(src[base + e * it.inner]) - mx);
      }
      for (int64_t e = 0; e < it.extent; ++e) {
        out[static_cast<size_t>(base + e * it.inner)] = static_cast<float>(
            std::exp(static_cast<double>(src[base + e * it.inner]) - mx) / denom);
      }
    }
  }
  check_finite(out, "softmax");
  auto xn = x.node_ptr();
  return make_op_result(
      x.shape(), std::move(out), {x}, [xn, it](detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = grad_buf(*xn);
        for (int64_t o = 0; o < it.outer; ++o) {
          for (int64_t in = 0; in < it.inner; ++in) {
            const int64_t base = o * it.extent * it.inner + in;
            double dot = 0.0;
            for (int64_t e = 0; e < it.extent; ++e) {
              const size_t idx = static_cast<size_t>(base + e * it.inner);
              dot += static_cast<double>(self.data[idx]) * self.grad[idx];
            }
            for (int64_t e = 0; e < it.extent; ++e) {
              const size_t idx = static_cast<size_t>(base + e * it.inner);
              g[idx] += static_cast<float>(self.data[idx] *
                                           (self.grad[idx] - dot));
            }
          }
        }
      });
}

// ---- layer norm ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps) {
  const int64_t h = x.dim(x.ndim() - 1);
  if (gain.numel() != h || bias.numel() != h) {
    throw ShapeError("layer_norm: gain/bias length must be " + std::to_string(h));
  }
  const int64_t rows = x.numel() / h;
  std::vector<float> out(x.data().size());
  auto xhat = std::make_shared<std::vector<float>>(x.data().size());
  auto inv_sigma = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  const float* src = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = src + r * h;
    double mean = 0.0;
    for (int64_t j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (int64_t j = 0; j < h; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = static_cast<float>(is);
    for (int64_t j = 0; j < h; ++j) {
      const float xh = static_cast<float>((row[j] - mean) * is);
      (*xhat)[static_cast<size_t>(r * h + j)] = xh;
      out[static_cast<size_t>(r * h + j)] =
          gain.data()[static_cast<size_t>(j)] * xh + bias.data()[static_cast<size_t>(j)];
    }
  }
  check_finite(out, "layer_norm");
  auto xn = x.node_ptr();
  auto gn = gain.node_ptr();
  auto bn = bias.node_ptr();
  return make_op_result(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, xhat, inv_sigma, rows, h](detail::TensorNode& self) {
        for (int64_t r = 0; r < rows; ++r) {
          const float* dy = self.grad.data() + r * h;
          const float* xh = xhat->data() + r * h;
          const double is = (*inv_sigma)[static_cast<size_t>(r)];
          if (gn->requires_grad) {
            auto& gg = grad_buf(*gn);
            for (int64_t j = 0; j < h; ++j) gg[static_cast<size_t>(j)] += dy[j] * xh[j];
          }
          if (bn->requires_grad) {
            auto& gb = grad_buf(*bn);
            for (int64_t j = 0; j < h; ++j) gb[static_cast<size_t>(j)] += dy[j];
          }
          if (xn->requires_grad) {
            auto& gx = grad_buf(*xn);
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < h; ++j) {
              const double dxh = static_cast<double>(dy[j]) * gn->data[static_cast<size_t>(j)];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[j];
            }
            mean_dxhat /= static_cast<double>(h);
            mean_dxhat_xhat /= static_cast<double>(h);
            for (int64_t j = 0; j < h; ++j) {
              const double dxh = static_cast<double>(dy[j]) * gn->data[static_cast<size_t>(j)];
              gx[static_cast<size_t>(r * h + j)] += static_cast<float>(
                  is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat));
            }
          }
        }
      });
}

// ---- embedding ----

Tensor embedding(const Tensor& table, const std::vector<int32_t>& ids) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-d");
  const int64_t v = table.dim(0), h = table.dim(1);
  const int64_t t = static_cast<int64_t>(ids.size());
  std::vector<float> out(static_cast<size_t>(t * h));
  for (int64_t i = 0; i < t; ++i) {
    const int32_t id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= v) throw ShapeError("embedding: id out of range");
    std::memcpy(out.data() + i * h, table.data().data() + id * h,
                static_cast<size_t>(h) * sizeof(float));
  }
  auto tn = table.node_ptr();
  auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
  return make_op_result({t, h}, std::move(out), {table},
                        [tn, ids_copy, h](detail::TensorNode& self) {
                          if (!tn->requires_grad) return;
                          auto& g = grad_buf(*tn);
                          for (size_t i = 0; i < ids_copy->size(); ++i) {
                            float* dst = g.data() + (*ids_copy)[i] * h;
                            const float* srcg = self.grad.data() + static_cast<int64_t>(i) * h;
                            for (int64_t j = 0; j < h; ++j) dst[j] += srcg[j];
                          }
                        });
}

// ---- fused causal multi-head self-attention ----

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads) {
  if (q.ndim() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("causal_attention: q/k/v must share shape [t,h]");
  }
  const int64_t t = q.dim(0), h = q.dim(1);
  if (n_heads <= 0 || h % n_heads != 0) {
    throw ShapeError("causal_attention: h not divisible by n_heads");
  }
  const int64_t d = h / n_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Per-head attention probabilities, kept for the backward pass.
  auto probs = std::make_shared<std::vector<float>>(
      static_cast<size_t>(n_heads) * static_cast<size_t>(t * t), 0.0f);
  std::vector<float> out(static_cast<size_t>(t * h), 0.0f);

  const float* qd = q.data().data();
  const float* kd = k.data().data();
  const float* vd = v.data().data();
  for (int hd = 0; hd < n_heads; ++hd) {
    const int64_t off = hd * d;
    float* p = probs->data() + static_cast<size_t>(hd) * static_cast<size_t>(t * t);
    for (int64_t i = 0; i < t; ++i) {
      // scores for row i over keys 0..i, float64 accumulation
      double mx = -1e300;
      std::vector<double> srow(static_cast<size_t>(i + 1));
      for (int64_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        const float* qi = qd + i * h + off;
        const float* kj = kd + j * h + off;
        for (int64_t c = 0; c < d; ++c) acc += static_cast<double>(qi[c]) * kj[c];
        acc *= inv_sqrt_d;
        srow[static_cast<size_t>(j)] = acc;
        mx = std::max(mx, acc);
      }
      double denom = 0.0;
      for (int64_t j = 0; j <= i; ++j) denom += std::exp(srow[static_cast<size_t>(j)] - mx);
      float* prow = p + i * t;
      for (int64_t j = 0; j <= i; ++j) {
        prow[j] = static_cast<float>(std::exp(srow[static_cast<size_t>(j)] - mx) / denom);
      }
      float* orow = out.data() + i * h + off;
      for (int64_t j = 0; j <= i; ++j) {
        const float pij = prow[j];
        const float* vj = vd + j * h + off;
        for (int64_t c = 0; c < d; ++c) orow[c] += pij * vj[c];
      }
    }
  }
  check_finite(out, "causal_attention");

  auto qn = q.node_ptr();
  auto kn = k.node_ptr();
  auto vn = v.node_ptr();
  return make_op_result(
      q.shape(), std::move(out), {q, k, v},
      [qn, kn, vn, probs, t, h, d, n_heads, inv_sqrt_d](detail::TensorNode& self) {
        const bool need_q = qn->requires_grad;
        const bool need_k = kn->requires_grad;
        const bool need_v = vn->requires_grad;
        if (!need_q && !need_k && !need_v) return;
        std::vector<float>* gq = need_q ? &grad_buf(*qn) : nullptr;
        std::vector<float>* gk = need_k ? &grad_buf(*kn) : nullptr;
        std::vector<float>* gv = need_v ? &grad_buf(*vn) : nullptr;
        std::vector<float> ds(static_cast<size_t>(t), 0.0f);
        for (int hd = 0; hd < n_heads; ++hd) {
          const int64_t off = hd * d;
          const float* p = probs->data() + static_cast<size_t>(hd) * static_cast<size_t>(t * t);
          for (int64_t i = 0; i < t; ++i) {
            const float* go = self.grad.data() + i * h + off;
            const float* prow = p + i * t;
            // dP_ij = dO_i . V_j ; dS via softmax jacobian over j<=i
            double dot = 0.0;
            for (int64_t j = 0; j <= i; ++j) {
              double dp = 0.0;
              const float* vj = vn->data.data() + j * h + off;
              for (int64_t c = 0; c < d; ++c) dp += static_cast<double>(go[c]) * vj[c];
              ds[static_cast<size_t>(j)] = static_cast<float>(dp);
              dot += dp * prow[j];
            }
            for (int64_t j = 0; j <= i; ++j) {
              const float dsj = static_cast<float>(
                  prow[j] * (static_cast<double>(ds[static_cast<size_t>(j)]) - dot));
              if (need_v) {
                float* gvj = gv->data() + j * h + off;
                const float pij = prow[j];
                for (int64_t c = 0; c < d; ++c) gvj[c] += pij * go[c];
              }
              if (need_q) {
                float* gqi = gq->data() + i * h + off;
                const float* kj = kn->data.data() + j * h + off;
                const float f = static_cast<float>(dsj * inv_sqrt_d);
                for (int64_t c = 0; c < d; ++c) gqi[c] += f * kj[c];
              }
              if (need_k) {
                float* gkj = gk->data() + j * h + off;
                const float* qi = qn->data.data() + i * h + off;
                const float f = static_cast<float>(dsj * inv_sqrt_d);
                for (int64_t c = 0; c < d; ++c) gkj[c] += f * qi[c];
              }
            }
          }
        }
      });
}

// ---- cross entropy ----

Tensor cross_entropy_per_pos(const Tensor& logits,
                             const std::vector<int32_t>& targets,
                             const std::vector<uint8_t>& mask) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be [t,v]");
  const int64_t t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != t ||
      static_cast<int64_t>(mask.size()) != t) {
    throw ShapeError("cross_entropy: targets/mask length mismatch");
  }
  check_finite_input(logits.data(), "cross_entropy");
  std::vector<float> out(static_cast<size_t>(t), 0.0f);
  // Softmax probabilities for masked rows, kept for backward.
  auto probs = std::make_shared<std::vector<float>>(logits.data().size(), 0.0f);
  const float* src = logits.data().data();
  for (int64_t i = 0; i < t; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const int32_t tgt = targets[static_cast<size_t>(i)];
    if (tgt < 0 || tgt >= v) throw ShapeError("cross_entropy: target id out of range");
    const float* row = src + i * v;
    float mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double logz = static_cast<double>(mx) + std::log(denom);
    out[static_cast<size_t>(i)] = static_cast<float>(logz - row[tgt]);
    float* prow = probs->data() + i * v;
    for (int64_t j = 0; j < v; ++j) {
      prow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - logz));
    }
  }
  check_finite(out, "cross_entropy");
  auto ln = logits.node_ptr();
  auto tg = std::make_shared<std::vector<int32_t>>(targets);
  auto mk = std::make_shared<std::vector<uint8_t>>(mask);
  return make_op_result({t}, std::move(out), {logits},
                        [ln, tg, mk, probs, t, v](detail::TensorNode& self) {
                          if (!ln->requires_grad) return;
                          auto& g = grad_buf(*ln);
                          for (int64_t i = 0; i < t; ++i) {
                            if (!(*mk)[static_cast<size_t>(i)]) continue;
                            const float go = self.grad[static_cast<size_t>(i)];
                            const float* prow = probs->data() + i * v;
                            float* grow = g.data() + i * v;
                            for (int64_t j = 0; j < v; ++j) grow[j] += go * prow[j];
                            grow[(*tg)[static_cast<size_t>(i)]] -= go;
                          }
                        });
}

Tensor masked_mean(const Tensor& per_pos, const std::vector<uint8_t>& mask) {
  if (per_pos.ndim() != 1 || static_cast<size_t>(per_pos.numel()) != mask.size()) {
    throw ShapeError("masked_mean: shape mismatch");
  }
  int64_t count = 0;
  double acc = 0.0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      acc += per_pos.data()[i];
      ++count;
    }
  }
  if (count == 0) throw NumericError("masked_mean: empty mask (degenerate batch)");
  std::vector<float> out{static_cast<float>(acc / static_cast<double>(count))};
  check_finite(out, "masked_mean");
  auto pn = per_pos.node_ptr();
  auto mk = std::make_shared<std::vector<uint8_t>>(mask);
  return make_op_result({1}, std::move(out), {per_pos},
                        [pn, mk, count](detail::TensorNode& self) {
                          if (!pn->requires_grad) return;
                          auto& g = grad_buf(*pn);
                          const float go = self.grad[0] / static_cast<float>(count);
                          for (size_t i = 0; i < g.size(); ++i) {
                            if ((*mk)[i]) g[i] += go;
                          }
                        });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     const std::vector<uint8_t>& mask) {
  return masked_mean(cross_entropy_per_pos(logits, targets, mask), mask);
}

// ---- weighted sum of layer outputs ----

Tensor weighted_sum(const std::vector<Tensor>& zs, const Tensor& w) {
  if (zs.empty()) throw ShapeError("weighted_sum: empty input list");
  if (w.ndim() != 1 || w.dim(0) != static_cast<int64_t>(zs.size())) {
    throw ShapeError("weighted_sum: weight length must equal layer count");
  }
  const Shape& shape = zs[0].shape();
  for (const Tensor& z : zs) {
    if (z.shape() != shape) throw ShapeError("weighted_sum: inconsistent shapes");
  }
  const size_t n = zs[0].data().size();
  std::vector<float> out(n, 0.0f);
  for (size_t l = 0; l < zs.size(); ++l) {
    const float wl = w.data()[l];
    const float* zd = zs[l].data().data();
    for (size_t i = 0; i < n; ++i) out[i] += wl * zd[i];
  }
  check_finite(out, "weighted_sum");
  std::vector<Tensor> parents = zs;
  parents.push_back(w);
  std::vector<std::shared_ptr<detail::TensorNode>> znodes;
  for (const Tensor& z : zs) znodes.push_back(z.node_ptr());
  auto wn = w.node_ptr();
  return make_op_result(shape, std::move(out), std::move(parents),
                        [znodes, wn](detail::TensorNode& self) {
                          for (size_t l = 0; l < znodes.size(); ++l) {
                            const float wl = wn->data[l];
                            if (znodes[l]->requires_grad) {
                              auto& g = grad_buf(*znodes[l]);
                              for (size_t i = 0; i < g.size(); ++i) g[i] += wl * self.grad[i];
                            }
                            if (wn->requires_grad) {
                              double dot = 0.0;
                              for (size_t i = 0; i < self.grad.size(); ++i) {
                                dot += static_cast<double>(self.grad[i]) * znodes[l]->data[i];
                              }
                              grad_buf(*wn)[l] += static_cast<float>(dot);
                            }
                          }
                        });
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: root must be a scalar");
  }
  if (!std::isfinite(loss.item())) {
    throw NumericError("backward: non-finite loss");
  }
  detail::TensorNode* root = loss.node();
  if (root->backward_ran) {
    throw NumericError("backward: already ran on this root (reset the graph first)");
  }
  root->backward_ran = true;
  if (!root->requires_grad) return;

  // Iterative DFS post-order topological sort. `order` holds shared
  // ownership: releasing a node's parent edges below must not free nodes the
  // traversal still has to visit.
  std::vector<std::shared_ptr<detail::TensorNode>> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<std::shared_ptr<detail::TensorNode>, size_t>> stack;
  stack.emplace_back(loss.node_shared(), 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      const std::shared_ptr<detail::TensorNode> p = node->parents[idx];
      ++idx;
      if (p->requires_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  grad_buf(*root)[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = it->get();
    if (node->backfn) {
      node->backfn(*node);
      node->backfn = nullptr;  // release the tape as we go
      node->parents.clear();
    }
  }
}

}  // namespace mtplab
