#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtplab/data.hpp"
#include "mtplab/mtp.hpp"
#include "mtplab/optim.hpp"

namespace mtplab {

enum class TrainMode { pretrain_ntp, finetune_base_lora, heads_only, joint };

std::string train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

// The strategy knobs plus optimizer/schedule settings. One plan describes one
// table row; the strategy matrix is a list of plans.
struct TrainPlan {
  TrainMode mode = TrainMode::pretrain_ntp;
  bool loss_balance = true;          // RMS-normalize head losses to head 1
  bool head_warmup = false;
  std::string warmup_path;           // MTP checkpoint whose heads seed this run
  double diff_lr_multiplier = 1.0;   // head-group LR = multiplier * base LR
  bool whs = false;
  double base_lr = 1e-3;
  int64_t epochs = 1;
  int64_t batch_size = 16;
  int64_t adapter_rank = 8;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;      // state snapshots every k steps; 0 = none

  void validate() const;
};

// Per-head scalar losses for one batch plus the masked per-position values
// the RMS balancing needs. Positions whose shifted target falls outside the
// target span are excluded; sequences contributing nothing to a head are
// counted in `skipped`.
struct BatchLosses {
  std::vector<Tensor> per_head_mean;               // scalar tensors
  std::vector<std::vector<float>> per_head_values; // masked per-position CE
  int64_t skipped = 0;
};

// Head n (1-based) is scored against targets shifted by n.
BatchLosses mtp_batch_losses(const MtpModel& m, std::span<const SequencePair> batch);

// N=1 case on the base model (NTP objective over target positions).
BatchLosses ntp_batch_losses(const Checkpoint& ckpt, std::span<const SequencePair> batch);

// Loss-balancing factors: RMS(head 1) / RMS(head n) over the batch's
// per-position losses, treated as constants (no gradient through them).
// Zero-RMS heads get factor 1. Identity when only one head.
std::vector<double> rms_balance_factors(const std::vector<std::vector<float>>& per_head_values);

// sum_n factor[n] * mean_loss[n].
Tensor combine_losses(const BatchLosses& losses, const std::vector<double>& factors);

struct TrainHooks {
  // Deterministic per-step record: step, per-head loss, group LRs, factors.
  std::function<void(const nlohmann::json&)> metrics;
  // Wall-clock per step, kept out of the metrics stream so identical runs
  // produce bit-identical metrics.
  std::function<void(int64_t step, double seconds)> timing;
  // Periodic state snapshot (checkpoint_every).
  std::function<void(int64_t steps_done, const ParamStore&, const OptimizerState&)>
      checkpoint;
};

struct TrainResult {
  int64_t steps = 0;
  int64_t skipped_records = 0;
  double final_loss = 0.0;
};

// Mode-specific setup. For finetune_base_lora: attach adapters and freeze
// everything else. For pretrain: record the pretraining LR in meta (the 0.5x
// finetuning convention reads it back). For MTP modes: freeze sets, adapter
// attach, warmup head loading.
void prepare_for_training(Checkpoint& ckpt, const TrainPlan& plan);
void prepare_for_training(MtpModel& m, const TrainPlan& plan);
void load_warmup_heads(MtpModel& m, const std::string& warmup_path);

// Default finetuning LR: half the recorded pretraining LR.
double finetune_lr_from(const Checkpoint& base);

// AdamW(0.01 decay) + cosine schedule over the derived step count; per-group
// LRs; frozen flags enforced by the optimizer. Deterministic given
// (plan, corpus, initial params). `state`/`start_step` support resumption.
TrainResult run_training(Checkpoint& ckpt, const std::vector<SequencePair>& train_data,
                         const TrainPlan& plan, const TrainHooks& hooks = {},
                         OptimizerState* state = nullptr, int64_t start_step = 0);
TrainResult run_training(MtpModel& m, const std::vector<SequencePair>& train_data,
                         const TrainPlan& plan, const TrainHooks& hooks = {},
                         OptimizerState* state = nullptr, int64_t start_step = 0);

int64_t total_steps(const TrainPlan& plan, int64_t n_train);

// Scheduled base-group LR at `step` of `total`; first step = base_lr, last
// step 0.
double scheduled_lr(int64_t step, int64_t total, double base_lr);

// Resumable training state (parameters + optimizer moments + step counter)
// in the checkpoint container format.
void save_train_state(const std::string& path, const ParamStore& params,
                      const OptimizerState& state, int64_t steps_done);
int64_t load_train_state(const std::string& path, ParamStore& params,
                         OptimizerState& state);

}  // namespace mtplab
