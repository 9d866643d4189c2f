#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtplab/errors.hpp"
#include "mtplab/rng.hpp"

namespace mtplab {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // sized lazily, same extent as data
  bool requires_grad = false;
  bool backward_ran = false;  // set on the root once backward() completes
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backfn;  // reads this->grad, accumulates into parents
};

}  // namespace detail

// Dense float32 n-d array, row-major, with optional reverse-mode gradient
// tracking. Copies are shallow (shared node); the tape is the implicit DAG of
// parent links, rebuilt by every forward and released by backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  // Elementwise normal(0, stddev) draws in row-major order.
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  std::span<const float> data() const { return node_->data; }
  std::span<float> mutable_data() { return node_->data; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad();
  void zero_grad();

  float item() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_shared() const { return node_; }
  std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

  // Deep copy of values only; no tape link, no grad.
  Tensor clone_detached(bool requires_grad = false) const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_result(Shape shape, std::vector<float> data,
                               std::vector<Tensor> parents,
                               std::function<void(detail::TensorNode&)> backfn);
};

// Scoped suppression of tape recording (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);
Tensor sum(const Tensor& x);

// A [m,k] times B [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x [t,in] * w^T [in,out] + b -> [t,out]. Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);

// Softmax along `axis` with max subtraction; denominator accumulated in
// float64. Rejects non-finite input.
Tensor softmax(const Tensor& x, int axis);

// Normalization over the last axis; moments accumulated in float64.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps);

// Row gather: table [v,h], ids -> [len(ids),h].
Tensor embedding(const Tensor& table, const std::vector<int32_t>& ids);

// Fused causal multi-head self-attention over one sequence.
// q,k,v: [t,h] with h divisible by n_heads. Scores in float64.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads);

// Per-position cross entropy: logits [t,v], targets/mask length t.
// Output [t]; zero where mask is 0. Log-sum-exp in float64.
Tensor cross_entropy_per_pos(const Tensor& logits,
                             const std::vector<int32_t>& targets,
                             const std::vector<uint8_t>& mask);

// Mean of per_pos over mask-selected entries. Errors on empty mask.
Tensor masked_mean(const Tensor& per_pos, const std::vector<uint8_t>& mask);

// Convenience: masked_mean(cross_entropy_per_pos(...)).
Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     const std::vector<uint8_t>& mask);

// out = sum_l w[l] * zs[l], all zs same shape, w is 1-d of len(zs).
Tensor weighted_sum(const std::vector<Tensor>& zs, const Tensor& w);

// Reverse-mode pass from a finite scalar root. Populates grads of all
// reachable requires_grad tensors; calling twice on the same root throws.
void backward(const Tensor& loss);

}  // namespace mtplab
