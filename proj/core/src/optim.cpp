#include "mtplab/optim.hpp"

#include <cmath>

#include "mtplab/errors.hpp"

namespace mtplab {

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

void adamw_step(ParamStore& params, OptimizerState& state,
                const std::function<double(const std::string&)>& lr_for) {
  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params.tensors) {
    if (params.is_frozen(name)) continue;
    if (!p.has_grad()) continue;
    const double lr = lr_for(name);
    if (lr < 0.0 || !std::isfinite(lr)) throw NumericError("adamw: bad lr for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.data().size(), 0.0f);
    if (v.empty()) v.assign(p.data().size(), 0.0f);
    if (m.size() != p.data().size() || v.size() != p.data().size()) {
      throw ShapeError("adamw: moment buffer shape mismatch for " + name);
    }
    auto pd = p.mutable_data();
    auto gd = p.grad();
    for (size_t i = 0; i < pd.size(); ++i) {
      const double g = gd[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double w = pd[i];
      w -= lr * c.weight_decay * w;  // decoupled decay
      w -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      pd[i] = static_cast<float>(w);
      if (!std::isfinite(pd[i])) throw NumericError("adamw: non-finite update in " + name);
    }
  }
}

void adamw_step(ParamStore& params, OptimizerState& state, double lr) {
  adamw_step(params, state, [lr](const std::string&) { return lr; });
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ConfigError("cosine_lr: step out of range");
  }
  if (step == total_steps) return 0.0;
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  const double lr = base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
  return lr < 0.0 ? 0.0 : lr;
}

}  // namespace mtplab
