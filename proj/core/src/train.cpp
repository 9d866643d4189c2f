#include "mtplab/train.hpp"

#include <chrono>
#include <cmath>

#include "mtplab/checkpoint_io.hpp"
#include "mtplab/errors.hpp"

namespace mtplab {

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain_ntp: return "pretrain_ntp";
    case TrainMode::finetune_base_lora: return "finetune_base_lora";
    case TrainMode::heads_only: return "heads_only";
    case TrainMode::joint: return "joint";
  }
  throw ConfigError("unknown train mode");
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "pretrain_ntp") return TrainMode::pretrain_ntp;
  if (name == "finetune_base_lora") return TrainMode::finetune_base_lora;
  if (name == "heads_only") return TrainMode::heads_only;
  if (name == "joint") return TrainMode::joint;
  throw ConfigError("unknown train mode: " + name);
}

void TrainPlan::validate() const {
  if (diff_lr_multiplier < 1.0) throw ConfigError("plan: diff_lr_multiplier must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("plan: base_lr must be > 0");
  if (epochs < 1 || batch_size < 1) throw ConfigError("plan: epochs/batch_size must be >= 1");
  if (mode == TrainMode::joint && adapter_rank < 1) {
    throw ConfigError("plan: joint mode requires adapter_rank >= 1");
  }
  if (head_warmup && warmup_path.empty()) {
    throw ConfigError("plan: head_warmup requires a warmup checkpoint path");
  }
}

namespace {

// Targets/mask for offset n: position t is scored against ids[t+n] when that
// shifted target is still inside the target span.
void shifted_targets(const SequencePair& pair, int64_t n,
                     std::vector<int32_t>& targets, std::vector<uint8_t>& mask) {
  const int64_t len = static_cast<int64_t>(pair.ids.size());
  targets.assign(pair.ids.size(), 0);
  mask.assign(pair.ids.size(), 0);
  for (int64_t t = 0; t + n < len; ++t) {
    if (pair.mask[static_cast<size_t>(t + n)]) {
      targets[static_cast<size_t>(t)] = pair.ids[static_cast<size_t>(t + n)];
      mask[static_cast<size_t>(t)] = 1;
    }
  }
}

struct HeadAccumulator {
  Tensor total;  // running sum of per-position CE
  int64_t count = 0;
  std::vector<float> values;
};

BatchLosses finalize(std::vector<HeadAccumulator>& acc, int64_t skipped) {
  BatchLosses out;
  out.skipped = skipped;
  for (HeadAccumulator& a : acc) {
    if (a.count == 0) {
      throw NumericError("batch loss: no scored positions for a head (degenerate batch)");
    }
    out.per_head_mean.push_back(scale(a.total, 1.0f / static_cast<float>(a.count)));
    out.per_head_values.push_back(std::move(a.values));
  }
  return out;
}

void accumulate_head(HeadAccumulator& acc, const Tensor& per_pos,
                     const std::vector<uint8_t>& mask) {
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      acc.values.push_back(per_pos.data()[i]);
      ++acc.count;
    }
  }
  const Tensor s = sum(per_pos);
  acc.total = acc.total.defined() ? add(acc.total, s) : s;
}

}  // namespace

BatchLosses mtp_batch_losses(const MtpModel& m, std::span<const SequencePair> batch) {
  std::vector<HeadAccumulator> acc(static_cast<size_t>(m.mtp.heads));
  int64_t skipped = 0;
  std::vector<int32_t> targets;
  std::vector<uint8_t> mask;
  for (const SequencePair& pair : batch) {
    const std::vector<Tensor> backbone = mtp_backbone(m, pair.ids);
    for (int64_t n = 1; n <= m.mtp.heads; ++n) {
      shifted_targets(pair, n, targets, mask);
      bool any = false;
      for (uint8_t v : mask) any |= (v != 0);
      if (!any) {
        ++skipped;
        continue;
      }
      const Tensor logits = mtp_head_logits(m, backbone, n);
      accumulate_head(acc[static_cast<size_t>(n - 1)],
                      cross_entropy_per_pos(logits, targets, mask), mask);
    }
  }
  return finalize(acc, skipped);
}

BatchLosses ntp_batch_losses(const Checkpoint& ckpt, std::span<const SequencePair> batch) {
  std::vector<HeadAccumulator> acc(1);
  int64_t skipped = 0;
  std::vector<int32_t> targets;
  std::vector<uint8_t> mask;
  for (const SequencePair& pair : batch) {
    shifted_targets(pair, 1, targets, mask);
    bool any = false;
    for (uint8_t v : mask) any |= (v != 0);
    if (!any) {
      ++skipped;
      continue;
    }
    const std::vector<Tensor> layers = forward_hidden(ckpt, pair.ids);
    const Tensor logits = unembed(ckpt.params, layers.back());
    accumulate_head(acc[0], cross_entropy_per_pos(logits, targets, mask), mask);
  }
  return finalize(acc, skipped);
}

std::vector<double> rms_balance_factors(
    const std::vector<std::vector<float>>& per_head_values) {
  if (per_head_values.empty()) throw ConfigError("rms_balance: no heads");
  auto rms = [](const std::vector<float>& v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return v.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(v.size()));
  };
  const double rms1 = rms(per_head_values[0]);
  if (!(rms1 > 0.0)) throw NumericError("rms_balance: head-1 loss RMS must be > 0");
  std::vector<double> factors(per_head_values.size(), 1.0);
  for (size_t n = 1; n < per_head_values.size(); ++n) {
    const double rn = rms(per_head_values[n]);
    factors[n] = rn > 0.0 ? rms1 / rn : 1.0;  // zero-RMS head: factor clamped
  }
  return factors;
}

Tensor combine_losses(const BatchLosses& losses, const std::vector<double>& factors) {
  if (factors.size() != losses.per_head_mean.size()) {
    throw ShapeError("combine_losses: factor count mismatch");
  }
  Tensor total;
  for (size_t n = 0; n < factors.size(); ++n) {
    const Tensor scaled =
        scale(losses.per_head_mean[n], static_cast<float>(factors[n]));
    total = total.defined() ? add(total, scaled) : scaled;
  }
  return total;
}

void prepare_for_training(Checkpoint& ckpt, const TrainPlan& plan) {
  plan.validate();
  Rng rng(plan.seed);
  switch (plan.mode) {
    case TrainMode::pretrain_ntp:
      ckpt.meta["pretrain_lr"] = plan.base_lr;
      break;
    case TrainMode::finetune_base_lora: {
      attach_adapters(ckpt, plan.adapter_rank, rng);
      for (const auto& [name, t] : ckpt.params.tensors) {
        if (name.find(".lora_") == std::string::npos) ckpt.params.frozen.insert(name);
      }
      break;
    }
    default:
      throw ConfigError("plan mode " + train_mode_name(plan.mode) +
                        " needs an MtpModel, not a base checkpoint");
  }
}

void prepare_for_training(MtpModel& m, const TrainPlan& plan) {
  plan.validate();
  if (plan.whs != m.mtp.whs) {
    throw ConfigError("plan/model mismatch: whs flag differs from MtpConfig");
  }
  if (plan.head_warmup) load_warmup_heads(m, plan.warmup_path);
  switch (plan.mode) {
    case TrainMode::heads_only:
      freeze_for_heads_only(m);
      break;
    case TrainMode::joint: {
      Rng rng(plan.seed);
      freeze_for_joint(m, plan.adapter_rank, rng);
      break;
    }
    default:
      throw ConfigError("plan mode " + train_mode_name(plan.mode) +
                        " needs a base checkpoint, not an MtpModel");
  }
}

void load_warmup_heads(MtpModel& m, const std::string& warmup_path) {
  const MtpModel warm = load_mtp(warmup_path);
  if (warm.config != m.config || warm.mtp != m.mtp) {
    throw ConfigError("warmup checkpoint configuration mismatch");
  }
  for (const auto& [name, t] : warm.params.tensors) {
    if (name.rfind("head.", 0) == 0) {
      Tensor copy = t.clone_detached(true);
      m.params.at(name) = std::move(copy);
    }
  }
}

double finetune_lr_from(const Checkpoint& base) {
  if (!base.meta.contains("pretrain_lr")) {
    throw ConfigError("base checkpoint has no recorded pretrain_lr");
  }
  return 0.5 * base.meta.at("pretrain_lr").get<double>();
}

int64_t total_steps(const TrainPlan& plan, int64_t n_train) {
  const int64_t per_epoch = (n_train + plan.batch_size - 1) / plan.batch_size;
  return plan.epochs * per_epoch;
}

double scheduled_lr(int64_t step, int64_t total, double base_lr) {
  if (total <= 1) return base_lr;
  return cosine_lr(step, total - 1, base_lr);
}

namespace {

TrainResult train_loop(
    ParamStore& params, const std::vector<SequencePair>& data, const TrainPlan& plan,
    const TrainHooks& hooks, OptimizerState* state, int64_t start_step,
    const std::function<BatchLosses(std::span<const SequencePair>)>& batch_losses) {
  if (data.empty()) throw ConfigError("run_training: empty corpus");
  OptimizerState local_state;
  OptimizerState& opt = state ? *state : local_state;
  opt.config.weight_decay = 0.01;
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(data.size()) + plan.batch_size - 1) / plan.batch_size;
  const int64_t total = plan.epochs * steps_per_epoch;
  TrainResult result;
  for (int64_t step = start_step; step < total; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const int64_t first = (step % steps_per_epoch) * plan.batch_size;
    const int64_t count =
        std::min<int64_t>(plan.batch_size, static_cast<int64_t>(data.size()) - first);
    const std::span<const SequencePair> batch(data.data() + first,
                                              static_cast<size_t>(count));
    params.zero_grads();
    BatchLosses losses = batch_losses(batch);
    result.skipped_records += losses.skipped;
    std::vector<double> factors(losses.per_head_mean.size(), 1.0);
    if (plan.loss_balance) factors = rms_balance_factors(losses.per_head_values);
    const Tensor loss = combine_losses(losses, factors);
    if (!std::isfinite(loss.item())) {
      // Last-good checkpoint is whatever the checkpoint hook wrote before.
      throw NumericError("run_training: non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    const double base_lr = scheduled_lr(step, total, plan.base_lr);
    const double head_lr = base_lr * plan.diff_lr_multiplier;
    adamw_step(params, opt, [&](const std::string& name) {
      return name.rfind("head.", 0) == 0 ? head_lr : base_lr;
    });
    result.steps = step + 1;
    result.final_loss = loss.item();
    if (hooks.metrics) {
      nlohmann::json rec;
      rec["step"] = step;
      std::vector<double> head_losses;
      for (const Tensor& t : losses.per_head_mean) head_losses.push_back(t.item());
      rec["loss"] = head_losses;
      rec["lr"] = {{"base", base_lr}, {"head", head_lr}};
      rec["balance"] = factors;
      hooks.metrics(rec);
    }
    if (hooks.timing) {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
      hooks.timing(step, dt.count());
    }
    if (hooks.checkpoint && plan.checkpoint_every > 0 &&
        (step + 1) % plan.checkpoint_every == 0) {
      hooks.checkpoint(step + 1, params, opt);
    }
  }
  return result;
}

}  // namespace

TrainResult run_training(Checkpoint& ckpt, const std::vector<SequencePair>& train_data,
                         const TrainPlan& plan, const TrainHooks& hooks,
                         OptimizerState* state, int64_t start_step) {
  plan.validate();
  if (plan.mode != TrainMode::pretrain_ntp && plan.mode != TrainMode::finetune_base_lora) {
    throw ConfigError("run_training(base): plan mode requires an MtpModel");
  }
  return train_loop(ckpt.params, train_data, plan, hooks, state, start_step,
                    [&ckpt](std::span<const SequencePair> batch) {
                      return ntp_batch_losses(ckpt, batch);
                    });
}

TrainResult run_training(MtpModel& m, const std::vector<SequencePair>& train_data,
                         const TrainPlan& plan, const TrainHooks& hooks,
                         OptimizerState* state, int64_t start_step) {
  plan.validate();
  if (plan.mode != TrainMode::heads_only && plan.mode != TrainMode::joint) {
    throw ConfigError("run_training(mtp): plan mode requires a base checkpoint");
  }
  return train_loop(m.params, train_data, plan, hooks, state, start_step,
                    [&m](std::span<const SequencePair> batch) {
                      return mtp_batch_losses(m, batch);
                    });
}

void save_train_state(const std::string& path, const ParamStore& params,
                      const OptimizerState& state, int64_t steps_done) {
  nlohmann::json header;
  header["kind"] = "state";
  header["step"] = steps_done;
  header["adamw"] = {{"beta1", state.config.beta1},
                     {"beta2", state.config.beta2},
                     {"eps", state.config.eps},
                     {"weight_decay", state.config.weight_decay}};
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, t] : params.tensors) tensors.emplace("param." + name, t);
  for (const auto& [name, m] : state.m) {
    tensors.emplace("optim.m." + name,
                    Tensor::from_data({static_cast<int64_t>(m.size())}, m));
  }
  for (const auto& [name, v] : state.v) {
    tensors.emplace("optim.v." + name,
                    Tensor::from_data({static_cast<int64_t>(v.size())}, v));
  }
  write_container(path, header, tensors);
}

int64_t load_train_state(const std::string& path, ParamStore& params,
                         OptimizerState& state) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "state") throw IoError("not a train state: " + path);
  state.config.beta1 = c.header.at("adamw").at("beta1").get<double>();
  state.config.beta2 = c.header.at("adamw").at("beta2").get<double>();
  state.config.eps = c.header.at("adamw").at("eps").get<double>();
  state.config.weight_decay = c.header.at("adamw").at("weight_decay").get<double>();
  state.step = c.header.at("step").get<int64_t>();
  for (auto& [name, t] : c.tensors) {
    if (name.rfind("param.", 0) == 0) {
      Tensor& dst = params.at(name.substr(6));
      if (dst.shape() != t.shape()) throw IoError("state shape mismatch: " + name);
      std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
    } else if (name.rfind("optim.m.", 0) == 0) {
      state.m[name.substr(8)].assign(t.data().begin(), t.data().end());
    } else if (name.rfind("optim.v.", 0) == 0) {
      state.v[name.substr(8)].assign(t.data().begin(), t.data().end());
    } else {
      throw IoError("unexpected tensor in train state: " + name);
    }
  }
  return state.step;
}

}  // namespace mtplab
