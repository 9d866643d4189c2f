#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtplab/tensor.hpp"

namespace mtplab {

// Named parameter tensors plus the set the optimizer must not touch.
// Frozen parameters may still carry gradients; they just never update.
struct ParamStore {
  std::map<std::string, Tensor> tensors;
  std::set<std::string> frozen;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool is_frozen(const std::string& name) const { return frozen.count(name) > 0; }
  void zero_grads();
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig config;
  int64_t step = 0;
  // First/second moment buffers, keyed like the parameters they track.
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
};

// Decoupled-weight-decay Adam update over every unfrozen parameter that has a
// gradient. `lr_for` maps a parameter name to its group learning rate.
// Arithmetic in float64, stored back as float32. Increments state.step.
void adamw_step(ParamStore& params, OptimizerState& state,
                const std::function<double(const std::string&)>& lr_for);

// Single-group convenience overload.
void adamw_step(ParamStore& params, OptimizerState& state, double lr);

// base_lr * 0.5 * (1 + cos(pi * step / total)); exact base_lr at step 0 and
// exact 0 at step == total_steps. Errors outside [0, total_steps].
double cosine_lr(int64_t step, int64_t total_steps, double base_lr);

}  // namespace mtplab
