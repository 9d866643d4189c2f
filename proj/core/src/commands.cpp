#include "mtplab/commands.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "mtplab/checkpoint_io.hpp"
#include "mtplab/errors.hpp"
#include "mtplab/eval.hpp"
#include "mtplab/probes.hpp"
#include "mtplab/run.hpp"

namespace fs = std::filesystem;

namespace mtplab {

namespace {

struct Options {
  std::string config;
  std::string run_dir;
  std::string out_dir;
  std::string strategy;
  std::string warmup_from;
  std::string row;
  std::optional<double> top_p;
  std::optional<uint64_t> seed;
  std::optional<double> ambiguity;
  bool resume = false;
};

RunConfig load_config(const Options& opt) {
  if (opt.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = run_config_from_ini(read_ini_file(opt.config));
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.ambiguity) cfg.corpus.ambiguity = *opt.ambiguity;
  cfg.validate();
  return cfg;
}

void cmd_gen_corpus(const Options& opt, std::ostream& out) {
  const RunConfig cfg = load_config(opt);
  const Corpus corpus = generate_corpus(cfg.corpus);
  if (!opt.run_dir.empty()) {
    RunDirectory rd(opt.run_dir);
    rd.snapshot_config(cfg);
    fs::create_directories(rd.subpath("corpus"));
    write_pairs_jsonl(corpus.train, rd.subpath("corpus/train.jsonl"));
    rd.record_artifact("corpus/train.jsonl", "pairs-jsonl/v1");
    write_pairs_jsonl(corpus.eval, rd.subpath("corpus/eval.jsonl"));
    rd.record_artifact("corpus/eval.jsonl", "pairs-jsonl/v1");
    out << "gen-corpus: " << corpus.train.size() << " train / " << corpus.eval.size()
        << " eval records -> " << rd.subpath("corpus") << "\n";
    return;
  }
  if (opt.out_dir.empty()) throw ConfigError("gen-corpus needs --run or --out");
  fs::create_directories(opt.out_dir);
  write_pairs_jsonl(corpus.train, (fs::path(opt.out_dir) / "train.jsonl").string());
  write_pairs_jsonl(corpus.eval, (fs::path(opt.out_dir) / "eval.jsonl").string());
  out << "gen-corpus: " << corpus.train.size() << " train / " << corpus.eval.size()
      << " eval records -> " << opt.out_dir << "\n";
}

std::vector<SequencePair> load_split(RunDirectory& rd, const std::string& split) {
  const std::string rel = "corpus/" + split + ".jsonl";
  rd.require_artifact(rel, "gen-corpus --run " + rd.path());
  return read_pairs_jsonl(rd.subpath(rel));
}

// Shared training-command plumbing: metrics tagged with the row name, timing
// in a sidecar log (wall clock is the one nondeterministic output, so it
// stays out of the manifest and the metrics stream), periodic resumable
// state snapshots under checkpoints/<row>.state.
struct RowTrainer {
  RunDirectory& rd;
  std::string row;
  TrainHooks hooks;
  std::string state_rel;

  RowTrainer(RunDirectory& d, std::string r) : rd(d), row(std::move(r)) {
    state_rel = "checkpoints/" + row + ".state";
    hooks.metrics = [this](const nlohmann::json& rec) {
      nlohmann::json tagged = rec;
      tagged["row"] = row;
      rd.append_metrics(tagged);
    };
    hooks.timing = [this](int64_t step, double seconds) {
      std::ofstream out(rd.subpath("timing.jsonl"), std::ios::binary | std::ios::app);
      out << nlohmann::json{{"row", row}, {"step", step}, {"seconds", seconds}}.dump()
          << "\n";
    };
    hooks.checkpoint = [this](int64_t steps_done, const ParamStore& params,
                              const OptimizerState& state) {
      fs::create_directories(rd.subpath("checkpoints"));
      save_train_state(rd.subpath(state_rel), params, state, steps_done);
      rd.record_artifact(state_rel, "train-state/v1");
    };
  }

  int64_t maybe_resume(bool resume, ParamStore& params, OptimizerState& state) const {
    if (!resume) return 0;
    if (!rd.has_artifact(state_rel)) {
      throw ConfigError("--resume: no state snapshot '" + state_rel + "' in " + rd.path());
    }
    return load_train_state(rd.subpath(state_rel), params, state);
  }
};

void report_training(std::ostream& out, const std::string& row, const TrainResult& r) {
  out << row << ": " << r.steps << " steps, final loss " << r.final_loss;
  if (r.skipped_records > 0) out << " (" << r.skipped_records << " degenerate records)";
  out << "\n";
}

void cmd_pretrain(const Options& opt, std::ostream& out) {
  const RunConfig cfg = load_config(opt);
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> train_data = load_split(rd, "train");

  Checkpoint ckpt = init_checkpoint(cfg.model, cfg.seed);
  TrainPlan plan;
  plan.mode = TrainMode::pretrain_ntp;
  plan.base_lr = cfg.base_lr;
  plan.epochs = cfg.epochs;
  plan.batch_size = cfg.batch_size;
  plan.adapter_rank = cfg.adapter_rank;
  plan.seed = cfg.seed;
  plan.checkpoint_every = cfg.checkpoint_every;
  prepare_for_training(ckpt, plan);

  RowTrainer rt(rd, "pretrain");
  OptimizerState state;
  const int64_t start = rt.maybe_resume(opt.resume, ckpt.params, state);
  const TrainResult r = run_training(ckpt, train_data, plan, rt.hooks, &state, start);

  fs::create_directories(rd.subpath("checkpoints"));
  save_checkpoint(ckpt, rd.subpath("checkpoints/base.mtpl"));
  rd.record_artifact("checkpoints/base.mtpl", "checkpoint/v1");
  report_training(out, "pretrain", r);
}

Checkpoint load_base(RunDirectory& rd) {
  rd.require_artifact("checkpoints/base.mtpl", "pretrain");
  return load_checkpoint(rd.subpath("checkpoints/base.mtpl"));
}

void cmd_finetune_baseline(const Options& opt, std::ostream& out) {
  const RunConfig cfg = load_config(opt);
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> train_data = load_split(rd, "train");

  Checkpoint ckpt = load_base(rd);
  TrainPlan plan;
  plan.mode = TrainMode::finetune_base_lora;
  plan.base_lr = finetune_lr_from(ckpt);
  plan.epochs = cfg.epochs;
  plan.batch_size = cfg.batch_size;
  plan.adapter_rank = cfg.adapter_rank;
  plan.seed = cfg.seed;
  plan.checkpoint_every = cfg.checkpoint_every;
  prepare_for_training(ckpt, plan);

  RowTrainer rt(rd, "baseline");
  OptimizerState state;
  const int64_t start = rt.maybe_resume(opt.resume, ckpt.params, state);
  const TrainResult r = run_training(ckpt, train_data, plan, rt.hooks, &state, start);

  save_checkpoint(ckpt, rd.subpath("checkpoints/baseline.mtpl"));
  rd.record_artifact("checkpoints/baseline.mtpl", "checkpoint/v1");
  report_training(out, "baseline", r);
}

void train_mtp_row(const Options& opt, std::ostream& out, const std::string& row,
                   const TrainPlan& plan_template, bool whs) {
  const RunConfig cfg = load_config(opt);
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> train_data = load_split(rd, "train");

  const Checkpoint base = load_base(rd);
  MtpConfig mcfg = cfg.mtp;
  mcfg.whs = whs;
  MtpModel m = init_mtp(base, mcfg, cfg.seed);

  TrainPlan plan = plan_template;
  plan.loss_balance = cfg.loss_balance;
  plan.whs = whs;
  plan.base_lr = finetune_lr_from(base);
  plan.epochs = cfg.epochs;
  plan.batch_size = cfg.batch_size;
  plan.adapter_rank = cfg.adapter_rank;
  plan.seed = cfg.seed;
  plan.checkpoint_every = cfg.checkpoint_every;
  if (plan.head_warmup && plan.warmup_path.empty()) {
    rd.require_artifact("checkpoints/heads_only.mtpl", "train-heads");
    plan.warmup_path = rd.subpath("checkpoints/heads_only.mtpl");
  }
  prepare_for_training(m, plan);

  RowTrainer rt(rd, row);
  OptimizerState state;
  const int64_t start = rt.maybe_resume(opt.resume, m.params, state);
  const TrainResult r = run_training(m, train_data, plan, rt.hooks, &state, start);

  fs::create_directories(rd.subpath("checkpoints"));
  save_mtp(m, rd.subpath("checkpoints/" + row + ".mtpl"));
  rd.record_artifact("checkpoints/" + row + ".mtpl", "checkpoint/v1");
  report_training(out, row, r);
}

void cmd_train_heads(const Options& opt, std::ostream& out) {
  TrainPlan plan;
  plan.mode = TrainMode::heads_only;
  train_mtp_row(opt, out, "heads_only", plan, /*whs=*/false);
}

struct Strategy {
  std::string row;
  bool warmup;
  bool diff_lr;
  bool whs;
};

Strategy parse_strategy(const std::string& name) {
  if (name == "none") return {"vanilla", false, false, false};
  if (name == "warmup") return {"warmup", true, false, false};
  if (name == "diff-lr") return {"diff_lr", false, true, false};
  if (name == "warmup+diff-lr") return {"warmup+diff_lr", true, true, false};
  if (name == "diff-lr+whs") return {"diff_lr+whs", false, true, true};
  throw ConfigError(
      "unknown strategy '" + name +
      "' (expected none|warmup|diff-lr|warmup+diff-lr|diff-lr+whs)");
}

void cmd_joint(const Options& opt, std::ostream& out) {
  const Strategy s = parse_strategy(opt.strategy);
  const RunConfig cfg = load_config(opt);
  TrainPlan plan;
  plan.mode = TrainMode::joint;
  plan.head_warmup = s.warmup;
  plan.warmup_path = opt.warmup_from;
  plan.diff_lr_multiplier = s.diff_lr ? cfg.diff_lr_multiplier : 1.0;
  train_mtp_row(opt, out, s.row, plan, s.whs);
}

void write_eval_row(RunDirectory& rd, const std::string& row, const EvalResult& r,
                    const nlohmann::json& extra, std::ostream& out) {
  nlohmann::json j = extra;
  j["next_top5"] = r.next_top5;
  j["second_top5"] = r.second_top5;
  j["n_positions"] = r.n_positions;
  rd.write_artifact("eval/" + row + ".json", j.dump(2) + "\n", "eval-summary/v1");
  out << "eval " << row << ": next_top5 " << r.next_top5 << ", second_top5 "
      << r.second_top5 << " over " << r.n_positions << " positions\n";
}

void cmd_eval_marginal(const Options& opt, std::ostream& out) {
  RunConfig cfg = load_config(opt);
  if (opt.top_p) cfg.marginal.top_p = *opt.top_p;
  cfg.marginal.validate();
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> eval_data = load_split(rd, "eval");

  const std::string row = opt.row.empty() ? "baseline" : opt.row;
  const std::string ckpt_rel = "checkpoints/" + (row == "baseline" ? "baseline" : row) + ".mtpl";
  rd.require_artifact(ckpt_rel, row == "baseline" ? "finetune-baseline" : "pretrain");
  const Checkpoint ckpt = load_checkpoint(rd.subpath(ckpt_rel));

  CheckpointPredictor predictor(ckpt);
  MarginalPairPredictor pair(predictor, cfg.marginal);
  EvalSpec spec = cfg.eval;
  spec.kind = PredictorKind::marginal;
  const EvalResult r = evaluate(pair, eval_data, spec);
  write_eval_row(rd, row, r,
                 {{"kind", "marginal"}, {"top_p", cfg.marginal.top_p}}, out);
}

void cmd_eval_heads(const Options& opt, std::ostream& out) {
  const RunConfig cfg = load_config(opt);
  if (opt.row.empty()) throw ConfigError("eval-heads needs --row <strategy row>");
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> eval_data = load_split(rd, "eval");

  const std::string ckpt_rel = "checkpoints/" + opt.row + ".mtpl";
  rd.require_artifact(ckpt_rel, opt.row == "heads_only" ? "train-heads"
                                                        : "joint --strategy ...");
  const MtpModel m = load_mtp(rd.subpath(ckpt_rel));
  HeadsPairPredictor pair(m);
  EvalSpec spec = cfg.eval;
  spec.kind = PredictorKind::mtp_heads;
  const EvalResult r = evaluate(pair, eval_data, spec);
  write_eval_row(rd, opt.row, r, {{"kind", "mtp_heads"}}, out);
}

Checkpoint load_probe_target(RunDirectory& rd, const std::string& row) {
  const std::string name = row.empty() ? "base" : row;
  const std::string rel = "checkpoints/" + name + ".mtpl";
  rd.require_artifact(rel, name == "base" ? "pretrain" : "finetune-baseline");
  return load_checkpoint(rd.subpath(rel));
}

void cmd_probe_kl(const Options& opt, std::ostream& out) {
  const RunConfig cfg = load_config(opt);
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> eval_data = load_split(rd, "eval");
  const Checkpoint ckpt = load_probe_target(rd, opt.row);

  const LayerProfile profile = kl_profile(ckpt, eval_data);
  fs::create_directories(rd.subpath("probes"));
  write_layer_profile_csv(profile, ckpt.config.layers, rd.subpath("probes/kl.csv"));
  rd.record_artifact("probes/kl.csv", "layer-profile-csv/v1");
  out << "probe-kl: " << profile.values.size() << " layers over " << profile.positions
      << " positions -> probes/kl.csv\n";
}

void cmd_probe_entropy(const Options& opt, std::ostream& out) {
  const RunConfig cfg = load_config(opt);
  RunDirectory rd(opt.run_dir);
  rd.snapshot_config(cfg);
  const std::vector<SequencePair> eval_data = load_split(rd, "eval");
  const Checkpoint ckpt = load_probe_target(rd, opt.row);

  const EntropySeries series = entropy_profile(ckpt, eval_data);
  fs::create_directories(rd.subpath("probes"));
  write_entropy_csv(series, rd.subpath("probes/entropy.csv"));
  rd.record_artifact("probes/entropy.csv", "entropy-csv/v1");
  out << "probe-entropy: mean " << series.mean << " nats over " << series.positions
      << " positions -> probes/entropy.csv\n";
}

void cmd_report(const Options& opt, std::ostream& out) {
  RunDirectory rd(opt.run_dir);
  report_matrix(rd.path(), rd.subpath("report.csv"));
  rd.record_artifact("report.csv", "report-csv/v1");
  out << "report -> " << rd.subpath("report.csv") << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"multi-token prediction laboratory"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* cmd, bool needs_run) {
    cmd->add_option("--config", opt.config, "experiment config (ini)");
    auto* run = cmd->add_option("--run", opt.run_dir, "run directory");
    if (needs_run) run->required();
    cmd->add_option("--seed", opt.seed, "override [run] seed");
    cmd->add_option("--ambiguity", opt.ambiguity, "override [corpus] ambiguity");
    return cmd;
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate train/eval corpus files");
  add_common(gen, false);
  gen->add_option("--out", opt.out_dir, "bare output directory (alternative to --run)");

  auto* pre = add_common(app.add_subcommand("pretrain", "train the base NTP model"), true);
  pre->add_flag("--resume", opt.resume, "continue from the last state snapshot");

  auto* ftb = add_common(
      app.add_subcommand("finetune-baseline", "low-rank-adapter NTP finetune"), true);
  ftb->add_flag("--resume", opt.resume, "continue from the last state snapshot");

  auto* th = add_common(
      app.add_subcommand("train-heads", "train MTP heads on a frozen backbone"), true);
  th->add_flag("--resume", opt.resume, "continue from the last state snapshot");

  auto* joint = add_common(app.add_subcommand("joint", "joint head+backbone finetune"), true);
  joint->add_option("--strategy", opt.strategy,
                    "none|warmup|diff-lr|warmup+diff-lr|diff-lr+whs")->required();
  joint->add_option("--warmup-from", opt.warmup_from,
                    "checkpoint whose heads seed this run");
  joint->add_flag("--resume", opt.resume, "continue from the last state snapshot");

  auto* evm = add_common(
      app.add_subcommand("eval-marginal", "marginalized 2nd-token evaluation"), true);
  evm->add_option("--row", opt.row, "checkpoint row (default baseline)");
  evm->add_option("--top-p", opt.top_p, "truncation mass override");

  auto* evh = add_common(app.add_subcommand("eval-heads", "MTP-head evaluation"), true);
  evh->add_option("--row", opt.row, "strategy row to evaluate")->required();

  auto* pkl = add_common(app.add_subcommand("probe-kl", "intermediate-layer KL profile"), true);
  pkl->add_option("--row", opt.row, "checkpoint row (default base)");

  auto* pen = add_common(
      app.add_subcommand("probe-entropy", "target-span entropy profile"), true);
  pen->add_option("--row", opt.row, "checkpoint row (default base)");

  auto* rep = add_common(app.add_subcommand("report", "aggregate the strategy matrix"), true);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen->parsed()) cmd_gen_corpus(opt, out);
    else if (pre->parsed()) cmd_pretrain(opt, out);
    else if (ftb->parsed()) cmd_finetune_baseline(opt, out);
    else if (th->parsed()) cmd_train_heads(opt, out);
    else if (joint->parsed()) cmd_joint(opt, out);
    else if (evm->parsed()) cmd_eval_marginal(opt, out);
    else if (evh->parsed()) cmd_eval_heads(opt, out);
    else if (pkl->parsed()) cmd_probe_kl(opt, out);
    else if (pen->parsed()) cmd_probe_entropy(opt, out);
    else if (rep->parsed()) cmd_report(opt, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace mtplab
