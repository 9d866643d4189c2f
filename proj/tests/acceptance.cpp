// End-to-end acceptance checks. Each check prints exactly one PASS/FAIL line;
// the process exits nonzero if any check fails. Training-backed checks share
// artifacts (a pretrained base per corpus, the strategy-matrix models), so the
// suite runs the full pipeline the way a user would.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck_util.hpp"
#include "mtplab/commands.hpp"
#include "mtplab/config.hpp"
#include "mtplab/eval.hpp"
#include "mtplab/probes.hpp"
#include "mtplab/run.hpp"

using namespace mtplab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%2d] %s: %s (%s)\n", index, pass ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---- shared toy-scale settings ----------------------------------------------

// The standard toy model: 4 layers, 64 hidden, |V|=64.
ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.layers = 4;
  cfg.hidden = 64;
  cfg.n_heads = 4;
  cfg.vocab = 64;
  cfg.max_seq = 96;
  cfg.mlp_ratio = 4;
  return cfg;
}

CorpusSpec toy_corpus_spec(double ambiguity, uint64_t seed, int64_t n_train) {
  CorpusSpec spec;
  spec.kind = TaskKind::translation;
  spec.vocab_size = 64;
  spec.n_train = n_train;
  spec.n_eval = 100;
  // Fixed source length keeps the source->target positional offset constant,
  // which a 4-layer model reliably learns in one epoch; variable lengths make
  // the copy offset sequence-dependent and training routinely stalls on the
  // unigram plateau (loss = ln 30).
  spec.min_target_len = 10;
  spec.src_len_min = 10;
  spec.src_len_max = 10;
  spec.seed = seed;
  spec.ambiguity = ambiguity;
  return spec;
}

// One-epoch pretraining recipe that clears the task's unigram plateau
// (loss = ln 30 when the model only knows the target alphabet): small batches
// for more optimizer steps and an aggressive peak LR.
constexpr int64_t kPretrainSequences = 8192;
constexpr int64_t kPretrainBatch = 8;
constexpr double kPretrainLr = 3e-3;

// Finetuning rows of the strategy matrix. Two epochs give the deeper heads
// enough steps to move past the order-1 statistics of the source chain; with
// a frozen backbone (heads-only) they stay pinned there, which is exactly the
// gap the matrix measures.
constexpr int64_t kRowEpochs = 2;
constexpr int64_t kRowBatch = 8;
constexpr double kRowLr = 3e-3;
constexpr double kDiffLrMultiplier = 2.0;
constexpr int64_t kAdapterRank = 8;

Checkpoint pretrain_base(const Corpus& corpus, uint64_t seed, double lr = kPretrainLr,
                         int64_t batch = kPretrainBatch) {
  Checkpoint ckpt = init_checkpoint(toy_model(), seed);
  TrainPlan plan;
  plan.mode = TrainMode::pretrain_ntp;
  plan.base_lr = lr;
  plan.epochs = 1;
  plan.batch_size = batch;
  plan.seed = seed;
  prepare_for_training(ckpt, plan);
  run_training(ckpt, corpus.train, plan);
  return ckpt;
}

EvalResult eval_marginal(const Checkpoint& ckpt, const std::vector<SequencePair>& pairs,
                         double top_p = 0.99) {
  CheckpointPredictor model(ckpt);
  MarginalSpec mspec;
  mspec.top_p = top_p;
  MarginalPairPredictor predictor(model, mspec);
  EvalSpec espec;
  espec.tokens_per_sequence = 8;  // targets are 10 tokens; window needs len+1
  return evaluate(predictor, pairs, espec);
}

EvalResult eval_heads(const MtpModel& m, const std::vector<SequencePair>& pairs) {
  HeadsPairPredictor predictor(m);
  EvalSpec espec;
  espec.tokens_per_sequence = 8;
  return evaluate(predictor, pairs, espec);
}

// ---- criteria ----------------------------------------------------------------

void check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  // Gradcheck scale: small dims keep central differences over every parameter
  // affordable; the graph exercises every op the toy model uses (adapters,
  // WHS mixing, multiple heads, the shared unembedding).
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.hidden = 8;
  cfg.n_heads = 2;
  cfg.vocab = 12;
  cfg.max_seq = 16;
  cfg.mlp_ratio = 2;

  double worst = 0.0;
  std::string worst_param;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Checkpoint base = init_checkpoint(cfg, seed);
    MtpConfig mcfg;
    mcfg.heads = 2;
    mcfg.whs = true;
    MtpModel m = init_mtp(base, mcfg, seed + 7);
    Rng rng(seed + 50);
    freeze_for_joint(m, 2, rng);
    for (auto& [name, t] : m.params.tensors) {
      if (name.find(".lora_b") != std::string::npos) {
        size_t i = 0;
        for (float& v : t.mutable_data()) v = 0.01f * static_cast<float>(++i % 5);
      }
    }
    SequencePair pair;
    pair.ids = {1, 3, 7, 4, 2, 9, 10, 11};
    pair.mask = {0, 0, 0, 0, 0, 1, 1, 1};
    pair.target_len = 3;
    m.params.zero_grads();
    const BatchLosses losses = mtp_batch_losses(m, std::span(&pair, 1));
    const std::vector<double> factors = rms_balance_factors(losses.per_head_values);
    backward(combine_losses(losses, factors));

    std::vector<std::vector<int32_t>> tgt(2, std::vector<int32_t>(pair.ids.size(), 0));
    std::vector<std::vector<uint8_t>> msk(2, std::vector<uint8_t>(pair.ids.size(), 0));
    for (size_t n = 1; n <= 2; ++n) {
      for (size_t t = 0; t + n < pair.ids.size(); ++t) {
        if (pair.mask[t + n]) {
          tgt[n - 1][t] = pair.ids[t + n];
          msk[n - 1][t] = 1;
        }
      }
    }
    ModelConfig ref_cfg = m.config;
    ref_cfg.adapter_rank = 2;
    const auto rep = refm::gradcheck(m.params, [&](const refm::RefParams& p) {
      return refm::mtp_loss(p, ref_cfg, m.mtp, pair.ids, tgt, msk, factors);
    });
    if (rep.max_rel > worst) {
      worst = rep.max_rel;
      worst_param = rep.worst_param;
    }
  }
  const double secs = seconds_since(t0);
  report(1, "gradient check vs finite differences (10 seeds)",
         worst <= 1e-4 && secs < 60.0,
         "max rel err " + fmt(worst) + " at " + worst_param + ", " + fmt(secs) + "s");
}

void check_marginal_oracle() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.n_heads = 2;
  cfg.vocab = 8;
  cfg.max_seq = 16;
  cfg.mlp_ratio = 2;
  Checkpoint ckpt = init_checkpoint(cfg, 3);
  CheckpointPredictor model(ckpt);

  bool bitwise_ok = true;
  Rng rng(17);
  MarginalSpec exact_spec;
  exact_spec.top_p = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int32_t> ctx;
    const int len = static_cast<int>(rng.uniform_int(1, 10));
    for (int t = 0; t < len; ++t) ctx.push_back(static_cast<int32_t>(rng.uniform_int(0, 7)));
    const ProbDist a = second_token_exact(model, ctx);
    const ProbDist b = second_token_truncated(model, ctx, exact_spec);
    for (size_t v = 0; v < a.size(); ++v) bitwise_ok &= (a[v] == b[v]);
  }

  // K = 3 against brute-force enumeration of every intermediate pair.
  const std::vector<int32_t> ctx = {1, 5, 2};
  std::vector<ProbDist> marg(3, ProbDist(8, 0.0));
  marg[0] = model.next_dist(ctx);
  std::vector<int32_t> ext = ctx;
  ext.push_back(0);
  std::vector<ProbDist> after_y(8);
  for (int32_t y = 0; y < 8; ++y) {
    ext.back() = y;
    after_y[static_cast<size_t>(y)] = model.next_dist(ext);
    for (size_t v = 0; v < 8; ++v)
      marg[1][v] += marg[0][static_cast<size_t>(y)] * after_y[static_cast<size_t>(y)][v];
  }
  ext.push_back(0);
  for (int32_t y = 0; y < 8; ++y) {
    ext[ext.size() - 2] = y;
    for (int32_t z = 0; z < 8; ++z) {
      ext.back() = z;
      const double path = marg[0][static_cast<size_t>(y)] *
                          after_y[static_cast<size_t>(y)][static_cast<size_t>(z)];
      const ProbDist p = model.next_dist(ext);
      for (size_t v = 0; v < 8; ++v) marg[2][v] += path * p[v];
    }
  }
  MarginalSpec spec3;
  spec3.k = 3;
  spec3.top_p = 1.0;
  double max_rel = 0.0;
  Rng qrng(23);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int32_t> query;
    for (int k = 0; k < 3; ++k) query.push_back(static_cast<int32_t>(qrng.uniform_int(0, 7)));
    const double got = k_token_joint(model, ctx, spec3, query);
    const double want = marg[0][static_cast<size_t>(query[0])] *
                        marg[1][static_cast<size_t>(query[1])] *
                        marg[2][static_cast<size_t>(query[2])];
    max_rel = std::max(max_rel, std::abs(got - want) / std::max(want, 1e-300));
  }
  report(2, "marginalization matches the exact oracle",
         bitwise_ok && max_rel <= 1e-6,
         std::string("top_p=1 bitwise ") + (bitwise_ok ? "ok" : "MISMATCH") +
             ", K=3 max rel err " + fmt(max_rel));
}

void check_truncation_bound(const Checkpoint& trained,
                            const std::vector<SequencePair>& eval_pairs) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckpointPredictor model(trained);
  const std::vector<double> levels = {0.9, 0.95, 0.99, 1.0};
  std::vector<double> mean_tv(levels.size(), 0.0);
  double worst_tv_99 = 0.0;
  int64_t contexts = 0;
  for (const SequencePair& pair : eval_pairs) {
    if (contexts >= 100) break;
    const int64_t n = static_cast<int64_t>(pair.ids.size());
    for (int64_t t = n - 22; t <= n - 3 && contexts < 100; ++t) {
      const std::vector<int32_t> ctx(pair.ids.begin(), pair.ids.begin() + t + 1);
      const ProbDist exact = second_token_exact(model, ctx);
      for (size_t li = 0; li < levels.size(); ++li) {
        MarginalSpec spec;
        spec.top_p = levels[li];
        const ProbDist trunc = second_token_truncated(model, ctx, spec);
        const double tv = total_variation(trunc, exact);
        mean_tv[li] += tv;
        if (levels[li] == 0.99) worst_tv_99 = std::max(worst_tv_99, tv);
      }
      ++contexts;
    }
  }
  for (double& v : mean_tv) v /= static_cast<double>(contexts);
  bool monotone = true;
  for (size_t i = 1; i < mean_tv.size(); ++i) monotone &= (mean_tv[i] <= mean_tv[i - 1] + 1e-12);
  report(3, "truncated marginal stays close to exact on a trained model",
         worst_tv_99 <= 0.02 && monotone && contexts >= 100,
         "worst TV@0.99 " + fmt(worst_tv_99) + " over " + std::to_string(contexts) +
             " contexts, mean TV " + fmt(mean_tv[0]) + "->" + fmt(mean_tv.back()) +
             ", " + fmt(seconds_since(t0)) + "s");
}

void check_head1_equivalence() {
  Checkpoint base = init_checkpoint(toy_model(), 11);
  MtpConfig mcfg;
  mcfg.heads = 2;
  MtpModel m = init_mtp(base, mcfg, 4);
  Rng rng(91);
  bool head_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int32_t> ctx;
    const int len = static_cast<int>(rng.uniform_int(2, 40));
    for (int t = 0; t < len; ++t) ctx.push_back(static_cast<int32_t>(rng.uniform_int(0, 63)));
    const ProbDist want = next_token_dist(base, ctx);
    const ProbDist got = mtp_forward(m, ctx)[0];
    for (size_t v = 0; v < want.size(); ++v) head_ok &= (got[v] == want[v]);
  }
  bool adapter_ok = true;
  Checkpoint adapted = init_checkpoint(toy_model(), 11);
  std::vector<std::vector<int32_t>> ctxs;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int32_t> ctx;
    const int len = static_cast<int>(rng.uniform_int(2, 40));
    for (int t = 0; t < len; ++t) ctx.push_back(static_cast<int32_t>(rng.uniform_int(0, 63)));
    ctxs.push_back(ctx);
  }
  std::vector<ProbDist> before;
  for (const auto& ctx : ctxs) before.push_back(next_token_dist(adapted, ctx));
  Rng arng(5);
  attach_adapters(adapted, kAdapterRank, arng);
  for (size_t i = 0; i < ctxs.size(); ++i) {
    const ProbDist after = next_token_dist(adapted, ctxs[i]);
    for (size_t v = 0; v < after.size(); ++v) adapter_ok &= (after[v] == before[i][v]);
  }
  report(4, "MTP head 1 and fresh adapters reproduce the base model bitwise",
         head_ok && adapter_ok,
         std::string("head-1 ") + (head_ok ? "ok" : "MISMATCH") + " x100 contexts, adapters " +
             (adapter_ok ? "ok" : "MISMATCH"));
}

void check_probe_invariants() {
  ProbDist p = {0.25, 0.25, 0.5};
  const bool kl_zero = kl_nats(p, p) == 0.0;
  ProbDist uniform(64, 1.0 / 64.0);
  const bool ent_ok = std::abs(entropy_nats(uniform) - std::log(64.0)) <= 1e-9;
  ProbDist point(64, 0.0);
  point[5] = 1.0;
  const bool count_ok = top_p_count(point, 0.99) == 1;
  Checkpoint ckpt = init_checkpoint(toy_model(), 2);
  const CorpusSpec cspec = toy_corpus_spec(0.0, 77, 1);
  CorpusSpec small = cspec;
  small.n_eval = 4;
  const LayerProfile prof = kl_profile(ckpt, generate_corpus(small).eval);
  const bool rows_ok = prof.values.size() == static_cast<size_t>(toy_model().layers - 1);
  report(9, "probe invariants (KL(p,p)=0, rows, uniform entropy, point mass)",
         kl_zero && ent_ok && count_ok && rows_ok,
         "kl_zero " + std::to_string(kl_zero) + " entropy " + std::to_string(ent_ok) +
             " count " + std::to_string(count_ok) + " rows " + std::to_string(prof.values.size()));
}

void check_rms_balancing() {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.hidden = 16;
  cfg.n_heads = 2;
  cfg.vocab = 16;
  cfg.max_seq = 48;
  cfg.mlp_ratio = 2;
  Checkpoint base = init_checkpoint(cfg, 6);
  MtpConfig mcfg;
  mcfg.heads = 3;
  MtpModel m = init_mtp(base, mcfg, 2);
  CorpusSpec cspec;
  cspec.vocab_size = 16;
  cspec.n_train = 12;
  cspec.n_eval = 1;
  cspec.min_target_len = 8;
  cspec.src_len_min = 9;
  cspec.src_len_max = 12;
  cspec.seed = 31;
  const Corpus corpus = generate_corpus(cspec);
  auto rms = [](const std::vector<float>& v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return std::sqrt(acc / static_cast<double>(v.size()));
  };
  double worst = 0.0;
  for (int64_t first = 0; first + 4 <= 12; first += 4) {
    const BatchLosses losses =
        mtp_batch_losses(m, std::span(corpus.train.data() + first, 4));
    const std::vector<double> factors = rms_balance_factors(losses.per_head_values);
    const double target = rms(losses.per_head_values[0]);
    for (size_t n = 0; n < factors.size(); ++n) {
      worst = std::max(worst, std::abs(factors[n] * rms(losses.per_head_values[n]) - target));
    }
  }
  const std::vector<double> single = rms_balance_factors({{0.3f, 0.9f, 1.4f}});
  const bool identity_ok = single.size() == 1 && single[0] == 1.0;
  report(10, "RMS loss balancing equalizes per-head loss scale",
         worst <= 1e-6 && identity_ok,
         "max |scaled RMS - head1 RMS| " + fmt(worst) + ", N=1 identity " +
             std::to_string(identity_ok));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "<missing " + path + ">";
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_reproducibility(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  // Tiny but complete pipeline through the public CLI, twice, same config.
  RunConfig cfg;
  cfg.model.layers = 2;
  cfg.model.hidden = 16;
  cfg.model.n_heads = 2;
  cfg.model.vocab = 16;
  cfg.model.max_seq = 48;
  cfg.model.mlp_ratio = 2;
  cfg.corpus.vocab_size = 16;
  cfg.corpus.n_train = 16;
  cfg.corpus.n_eval = 3;
  cfg.corpus.min_target_len = 6;
  cfg.corpus.src_len_min = 7;
  cfg.corpus.src_len_max = 10;
  cfg.corpus.seed = 5;
  cfg.eval.n_eval_sequences = 3;
  cfg.eval.tokens_per_sequence = 4;
  cfg.batch_size = 4;
  cfg.adapter_rank = 2;
  cfg.mtp.whs = true;
  const std::string ini = (work / "repro.ini").string();
  {
    std::ofstream out(ini, std::ios::binary);
    out << serialize_ini(run_config_to_ini(cfg));
  }
  auto pipeline = [&](const std::string& dir) {
    std::ostringstream sink;
    int rc = 0;
    rc |= run_cli({"gen-corpus", "--config", ini, "--run", dir}, sink, sink);
    rc |= run_cli({"pretrain", "--config", ini, "--run", dir}, sink, sink);
    rc |= run_cli({"joint", "--config", ini, "--run", dir, "--strategy", "diff-lr+whs"},
                  sink, sink);
    rc |= run_cli({"eval-heads", "--config", ini, "--run", dir, "--row", "diff_lr+whs"},
                  sink, sink);
    return rc;
  };
  const std::string r1 = (work / "repro1").string();
  const std::string r2 = (work / "repro2").string();
  const int rc = pipeline(r1) | pipeline(r2);
  const bool ckpt_same = slurp(r1 + "/checkpoints/diff_lr+whs.mtpl") ==
                         slurp(r2 + "/checkpoints/diff_lr+whs.mtpl");
  const bool metrics_same = slurp(r1 + "/metrics.jsonl") == slurp(r2 + "/metrics.jsonl");
  const bool eval_same = slurp(r1 + "/eval/diff_lr+whs.json") ==
                         slurp(r2 + "/eval/diff_lr+whs.json");
  report(11, "identical pipelines are bit-identical (checkpoints + metrics)",
         rc == 0 && ckpt_same && metrics_same && eval_same,
         "exit " + std::to_string(rc) + ", checkpoint " + (ckpt_same ? "ok" : "DIFFERS") +
             ", metrics " + (metrics_same ? "ok" : "DIFFERS") + ", eval " +
             (eval_same ? "ok" : "DIFFERS") + ", " + fmt(seconds_since(t0)) + "s");
}

void check_forward_budget() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.n_heads = 2;
  cfg.vocab = 32;
  cfg.max_seq = 32;
  cfg.mlp_ratio = 2;
  Checkpoint ckpt = init_checkpoint(cfg, 9);
  CheckpointPredictor model(ckpt);
  Rng rng(3);
  bool ok = true;
  std::string detail;
  for (double top_p : {0.5, 0.9, 0.99}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int32_t> ctx;
      const int len = static_cast<int>(rng.uniform_int(2, 20));
      for (int t = 0; t < len; ++t) ctx.push_back(static_cast<int32_t>(rng.uniform_int(0, 31)));
      const int64_t s = static_cast<int64_t>(nucleus_set(model.next_dist(ctx), top_p).size());
      model.reset_counter();
      MarginalSpec spec;
      spec.top_p = top_p;
      second_token_truncated(model, ctx, spec);
      if (model.forward_calls() != s + 1) {
        ok = false;
        detail = "top_p " + fmt(top_p) + ": " + std::to_string(model.forward_calls()) +
                 " calls for |S|=" + std::to_string(s);
      }
    }
  }
  report(12, "truncated marginalization issues exactly |S|+1 forward passes",
         ok, ok ? "30 context/top_p combinations" : detail);
}

// ---- training-backed criteria -------------------------------------------------

struct MatrixRow {
  std::string name;
  double second_top5 = 0.0;
};

MtpModel train_row(const Checkpoint& base, const std::vector<SequencePair>& data,
                   const std::string& strategy, uint64_t seed,
                   const std::string& warmup_path, const fs::path& work) {
  MtpConfig mcfg;
  mcfg.heads = 2;
  mcfg.whs = strategy == "diff_lr+whs";
  MtpModel m = init_mtp(base, mcfg, seed);
  TrainPlan plan;
  plan.base_lr = kRowLr;
  plan.epochs = kRowEpochs;
  plan.batch_size = kRowBatch;
  plan.adapter_rank = kAdapterRank;
  plan.seed = seed;
  plan.whs = mcfg.whs;
  if (strategy == "heads_only") {
    plan.mode = TrainMode::heads_only;
  } else {
    plan.mode = TrainMode::joint;
    if (strategy == "warmup" || strategy == "warmup+diff_lr") {
      plan.head_warmup = true;
      plan.warmup_path = warmup_path;
    }
    if (strategy == "diff_lr" || strategy == "warmup+diff_lr" || strategy == "diff_lr+whs") {
      plan.diff_lr_multiplier = kDiffLrMultiplier;
    }
  }
  prepare_for_training(m, plan);
  run_training(m, data, plan);
  if (strategy == "heads_only") {
    save_mtp(m, (work / ("heads_only_" + std::to_string(seed) + ".mtpl")).string());
  }
  return m;
}

Checkpoint train_baseline(const Checkpoint& base, const std::vector<SequencePair>& data,
                          uint64_t seed) {
  Checkpoint ckpt = base;
  ckpt.params.tensors.clear();
  for (const auto& [name, t] : base.params.tensors) {
    ckpt.params.tensors.emplace(name, t.clone_detached(true));
  }
  TrainPlan plan;
  plan.mode = TrainMode::finetune_base_lora;
  plan.base_lr = finetune_lr_from(ckpt);
  plan.epochs = kRowEpochs;
  plan.batch_size = kRowBatch;
  plan.adapter_rank = kAdapterRank;
  plan.seed = seed;
  prepare_for_training(ckpt, plan);
  run_training(ckpt, data, plan);
  return ckpt;
}

void run_all(const fs::path& work) {
  check_gradients();
  check_marginal_oracle();
  check_head1_equivalence();
  check_probe_invariants();
  check_rms_balancing();
  check_forward_budget();
  check_reproducibility(work);

  // ---- criterion 5: one-epoch learnability on the unambiguous task ----
  const auto t5 = std::chrono::steady_clock::now();
  const Corpus clean = generate_corpus(toy_corpus_spec(0.0, 101, kPretrainSequences));
  const Checkpoint base_clean = pretrain_base(clean, 1001);
  const EvalResult clean_eval = eval_marginal(base_clean, clean.eval);
  const double t5s = seconds_since(t5);
  report(5, "one-epoch pretraining learns the unambiguous cipher",
         clean_eval.next_top5 >= 0.95 && clean_eval.second_top5 >= 0.90 && t5s < 1800.0,
         "next top-5 " + fmt(clean_eval.next_top5) + ", 2nd-token top-5 " +
             fmt(clean_eval.second_top5) + ", " + fmt(t5s) + "s");

  // ---- criterion 3 reuses the trained model ----
  check_truncation_bound(base_clean, clean.eval);

  // ---- criterion 8: sparsification of the next-token distribution ----
  {
    const Checkpoint untrained = init_checkpoint(toy_model(), 1001);
    const EntropySeries init_h = entropy_profile(untrained, clean.eval);
    const EntropySeries end_h = entropy_profile(base_clean, clean.eval);
    const double init_count = mean_top_p_count(untrained, clean.eval, 0.99);
    const double end_count = mean_top_p_count(base_clean, clean.eval, 0.99);

    const Corpus noisy = generate_corpus(toy_corpus_spec(0.5, 101, kPretrainSequences));
    const Checkpoint base_noisy = pretrain_base(noisy, 1001);
    const EntropySeries noisy_h = entropy_profile(base_noisy, noisy.eval);

    const bool pass = end_h.mean < init_h.mean && end_count < init_count &&
                      noisy_h.mean > end_h.mean;
    report(8, "training sparsifies predictions, ambiguity keeps them broad",
           pass,
           "entropy " + fmt(init_h.mean) + "->" + fmt(end_h.mean) + " nats, top-0.99 count " +
               fmt(init_count) + "->" + fmt(end_count) + ", ambiguous-task entropy " +
               fmt(noisy_h.mean));
  }

  // ---- criteria 6 + 7: the strategy matrix at ambiguity 0.2, 3 seeds ----
  const auto t67 = std::chrono::steady_clock::now();
  const std::vector<std::string> joint_rows = {"vanilla", "warmup", "diff_lr",
                                               "warmup+diff_lr", "diff_lr+whs"};
  std::map<std::string, double> mean_second;
  const std::vector<uint64_t> seeds = {201, 202, 203};
  for (uint64_t seed : seeds) {
    const Corpus corpus = generate_corpus(toy_corpus_spec(0.2, seed, kPretrainSequences));
    const Checkpoint base = pretrain_base(corpus, seed);
    const std::vector<SequencePair>& row_data = corpus.train;

    const Checkpoint baseline = train_baseline(base, row_data, seed);
    mean_second["baseline"] += eval_marginal(baseline, corpus.eval).second_top5;

    const MtpModel heads = train_row(base, row_data, "heads_only", seed, "", work);
    mean_second["heads_only"] += eval_heads(heads, corpus.eval).second_top5;
    const std::string warmup_path =
        (work / ("heads_only_" + std::to_string(seed) + ".mtpl")).string();

    for (const std::string& row : joint_rows) {
      const MtpModel m = train_row(base, row_data, row, seed, warmup_path, work);
      mean_second[row] += eval_heads(m, corpus.eval).second_top5;
    }
  }
  for (auto& [row, v] : mean_second) v /= static_cast<double>(seeds.size());

  double best_joint = 0.0;
  std::string best_name;
  bool joint_beats_heads = true;
  std::string detail = "baseline " + fmt(mean_second["baseline"]) + ", heads_only " +
                       fmt(mean_second["heads_only"]);
  for (const std::string& row : joint_rows) {
    detail += ", " + row + " " + fmt(mean_second[row]);
    if (mean_second[row] > best_joint) {
      best_joint = mean_second[row];
      best_name = row;
    }
    joint_beats_heads &= mean_second[row] > mean_second["heads_only"];
  }
  detail += ", " + fmt(seconds_since(t67)) + "s";
  const bool ordering = mean_second["baseline"] >= best_joint - 0.02 &&
                        best_joint >= mean_second["heads_only"] - 0.02;
  report(6, "2nd-token ordering: baseline >= best joint >= heads-only (3 seeds)",
         ordering, detail + ", best joint " + best_name);
  report(7, "every joint strategy beats heads-only on 2nd-token top-5",
         joint_beats_heads, detail);
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "mtplab_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  try {
    run_all(work);
  } catch (const std::exception& e) {
    std::printf("FATAL: unhandled exception: %s\n", e.what());
    g_failures = 100;
  }
  fs::remove_all(work);
  std::printf("%s: %d failing check(s)\n", g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
