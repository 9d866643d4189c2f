#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mtplab/train.hpp"

using namespace mtplab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.n_heads = 2;
  cfg.vocab = 16;
  cfg.max_seq = 48;
  cfg.mlp_ratio = 2;
  return cfg;
}

std::vector<SequencePair> tiny_train(int64_t n, uint64_t seed = 5) {
  CorpusSpec spec;
  spec.vocab_size = 16;
  spec.n_train = n;
  spec.n_eval = 1;
  spec.min_target_len = 6;
  spec.src_len_min = 7;
  spec.src_len_max = 10;
  spec.seed = seed;
  return generate_corpus(spec).train;
}

std::vector<float> vec(std::span<const float> s) { return {s.begin(), s.end()}; }

double rms(const std::vector<float>& xs) {
  double acc = 0.0;
  for (float x : xs) acc += static_cast<double>(x) * x;
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

TEST_CASE("rms balancing factors match the definition") {
  std::vector<std::vector<float>> values = {
      {1.0f, 2.0f, 3.0f}, {0.5f, 0.5f}, {4.0f, 0.0f, 1.0f, 2.0f}};
  const std::vector<double> f = rms_balance_factors(values);
  REQUIRE(f.size() == 3);
  CHECK(f[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(rms(values[0]) / rms(values[1])).epsilon(1e-6));
  CHECK(f[2] == doctest::Approx(rms(values[0]) / rms(values[2])).epsilon(1e-6));
  // After scaling, every head's RMS equals head 1's within tolerance.
  for (size_t n = 1; n < 3; ++n) {
    CHECK(f[n] * rms(values[n]) == doctest::Approx(rms(values[0])).epsilon(1e-6));
  }
}

TEST_CASE("rms balancing is the identity for one head and for zero-RMS heads") {
  const std::vector<double> one = rms_balance_factors({{0.7f, 0.1f}});
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 1.0);
  const std::vector<double> z = rms_balance_factors({{1.0f, 3.0f}, {0.0f, 0.0f}});
  CHECK(z[1] == 1.0);
}

TEST_CASE("ntp batch losses are finite and drop after steps") {
  Checkpoint ckpt = init_checkpoint(tiny_config(), 2);
  TrainPlan plan;
  plan.mode = TrainMode::pretrain_ntp;
  plan.base_lr = 3e-3;
  plan.epochs = 6;
  plan.batch_size = 4;
  plan.seed = 2;
  const std::vector<SequencePair> data = tiny_train(8);

  const BatchLosses before = ntp_batch_losses(ckpt, std::span(data.data(), 4));
  REQUIRE(before.per_head_mean.size() == 1);
  const double l0 = before.per_head_mean[0].item();
  CHECK(std::isfinite(l0));

  prepare_for_training(ckpt, plan);
  run_training(ckpt, data, plan);
  const BatchLosses after = ntp_batch_losses(ckpt, std::span(data.data(), 4));
  CHECK(after.per_head_mean[0].item() < l0);
}

TEST_CASE("shifted targets skip positions beyond the target span") {
  Checkpoint base = init_checkpoint(tiny_config(), 2);
  MtpConfig mcfg;
  mcfg.heads = 2;
  MtpModel m = init_mtp(base, mcfg, 1);
  // Head n scores position t against ids[t+n] whenever that shifted target
  // is masked, so context positions in the source region still count.
  std::vector<SequencePair> batch(3);
  batch[0].ids = {1, 3, 4, 5, 2, 10, 11};
  batch[0].mask = {0, 0, 0, 0, 0, 1, 1};
  batch[0].target_len = 2;
  batch[1].ids = {1, 3, 4, 2, 12};
  batch[1].mask = {0, 0, 0, 0, 1};
  batch[1].target_len = 1;
  // Target at index 1: head 2 would need t = -1, so it skips this sequence.
  batch[2].ids = {1, 9};
  batch[2].mask = {0, 1};
  batch[2].target_len = 1;
  const BatchLosses losses = mtp_batch_losses(m, std::span(batch.data(), 3));
  REQUIRE(losses.per_head_mean.size() == 2);
  // Head 1 sees 2 + 1 + 1 target tokens, head 2 sees 2 + 1 + 0.
  CHECK(losses.per_head_values[0].size() == 4);
  CHECK(losses.per_head_values[1].size() == 3);
  CHECK(losses.skipped == 1);

  // A batch where some head scores nothing at all is degenerate.
  CHECK_THROWS_AS(mtp_batch_losses(m, std::span(batch.data() + 2, 1)), NumericError);
}

TEST_CASE("schedule hits base_lr at step 0 and 0 at the last step") {
  CHECK(scheduled_lr(0, 10, 2e-3) == doctest::Approx(2e-3).epsilon(1e-15));
  CHECK(scheduled_lr(9, 10, 2e-3) == doctest::Approx(0.0));
  CHECK(scheduled_lr(5, 10, 2e-3) < 2e-3);
  CHECK(scheduled_lr(0, 1, 2e-3) == 2e-3);
  TrainPlan plan;
  plan.epochs = 2;
  plan.batch_size = 4;
  CHECK(total_steps(plan, 10) == 6);  // ceil(10/4) = 3 per epoch
}

TEST_CASE("frozen parameters never move in finetuning") {
  Checkpoint ckpt = init_checkpoint(tiny_config(), 2);
  ckpt.meta["pretrain_lr"] = 1e-3;
  TrainPlan plan;
  plan.mode = TrainMode::finetune_base_lora;
  plan.adapter_rank = 2;
  plan.base_lr = finetune_lr_from(ckpt);
  plan.epochs = 2;
  plan.batch_size = 4;
  plan.seed = 3;
  CHECK(plan.base_lr == doctest::Approx(5e-4));
  prepare_for_training(ckpt, plan);
  const std::vector<float> base_w = vec(ckpt.params.at("layers.0.attn.q.w").data());
  const std::vector<float> embed = vec(ckpt.params.at("embed.tok").data());
  const std::vector<float> lora_a = vec(ckpt.params.at("layers.0.attn.q.lora_a").data());
  run_training(ckpt, tiny_train(8), plan);
  CHECK(vec(ckpt.params.at("layers.0.attn.q.w").data()) == base_w);
  CHECK(vec(ckpt.params.at("embed.tok").data()) == embed);
  CHECK(vec(ckpt.params.at("layers.0.attn.q.lora_a").data()) != lora_a);
}

TEST_CASE("finetune_lr_from requires the recorded pretraining lr") {
  Checkpoint ckpt = init_checkpoint(tiny_config(), 2);
  CHECK_THROWS_AS(finetune_lr_from(ckpt), ConfigError);
}

TEST_CASE("train state round-trips and resumption replays the tail exactly") {
  namespace fs = std::filesystem;
  const std::vector<SequencePair> data = tiny_train(8);
  TrainPlan plan;
  plan.mode = TrainMode::heads_only;
  plan.base_lr = 1e-3;
  plan.epochs = 2;
  plan.batch_size = 4;
  plan.seed = 4;
  MtpConfig mcfg;
  mcfg.heads = 2;

  Checkpoint base = init_checkpoint(tiny_config(), 2);
  // Uninterrupted run.
  MtpModel full = init_mtp(base, mcfg, 7);
  prepare_for_training(full, plan);
  OptimizerState full_state;
  run_training(full, data, plan, {}, &full_state);

  // Interrupted at step 2, saved, reloaded, resumed.
  const std::string path = (fs::temp_directory_path() / "mtplab_state_test.state").string();
  MtpModel part = init_mtp(base, mcfg, 7);
  prepare_for_training(part, plan);
  OptimizerState part_state;
  TrainHooks hooks;
  hooks.checkpoint = [&](int64_t steps_done, const ParamStore& params,
                         const OptimizerState& state) {
    if (steps_done == 2) save_train_state(path, params, state, steps_done);
  };
  TrainPlan first_leg = plan;
  first_leg.checkpoint_every = 2;
  run_training(part, data, first_leg, hooks, &part_state);

  MtpModel resumed = init_mtp(base, mcfg, 7);
  prepare_for_training(resumed, plan);
  OptimizerState resumed_state;
  const int64_t start = load_train_state(path, resumed.params, resumed_state);
  CHECK(start == 2);
  run_training(resumed, data, plan, {}, &resumed_state, start);

  for (const auto& [name, t] : full.params.tensors) {
    CHECK(vec(resumed.params.at(name).data()) == vec(t.data()));
  }
  CHECK(resumed_state.step == full_state.step);
  fs::remove(path);
}

TEST_CASE("plan validation") {
  TrainPlan plan;
  plan.base_lr = 0.0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan.base_lr = 1e-3;
  plan.diff_lr_multiplier = 0.5;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan.diff_lr_multiplier = 1.0;
  plan.mode = TrainMode::joint;
  plan.adapter_rank = 0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan.adapter_rank = 2;
  plan.head_warmup = true;
  plan.warmup_path.clear();
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  CHECK(train_mode_from_name("joint") == TrainMode::joint);
  CHECK(train_mode_name(TrainMode::heads_only) == "heads_only");
  CHECK_THROWS_AS(train_mode_from_name("nope"), ConfigError);
}

TEST_CASE("mode/category mismatches are rejected") {
  Checkpoint ckpt = init_checkpoint(tiny_config(), 2);
  TrainPlan plan;
  plan.mode = TrainMode::heads_only;
  CHECK_THROWS_AS(run_training(ckpt, tiny_train(4), plan), ConfigError);
  MtpConfig mcfg;
  MtpModel m = init_mtp(ckpt, mcfg, 1);
  plan.mode = TrainMode::pretrain_ntp;
  CHECK_THROWS_AS(run_training(m, tiny_train(4), plan), ConfigError);
}
