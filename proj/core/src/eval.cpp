#include "mtplab/eval.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mtplab/errors.hpp"

namespace mtplab {

void EvalSpec::validate() const {
  if (tokens_per_sequence < 1) throw ConfigError("eval: tokens_per_sequence must be >= 1");
  if (top_k < 1) throw ConfigError("eval: top_k must be >= 1");
  if (n_eval_sequences < 1) throw ConfigError("eval: n_eval_sequences must be >= 1");
}

PairPrediction MarginalPairPredictor::predict(const std::vector<int32_t>& ctx) {
  PairPrediction out;
  out.next = model_.next_dist(ctx);
  out.second = second_token_truncated(model_, ctx, spec_);
  return out;
}

PairPrediction HeadsPairPredictor::predict(const std::vector<int32_t>& ctx) {
  const std::vector<ProbDist> heads = mtp_forward(model_, ctx);
  PairPrediction out;
  out.next = heads[0];
  if (heads.size() > 1) out.second = heads[1];
  return out;
}

PairPrediction BaseNtpPairPredictor::predict(const std::vector<int32_t>& ctx) {
  PairPrediction out;
  out.next = next_token_dist(ckpt_, ctx);
  return out;
}

EvalResult evaluate(PairPredictor& predictor, const std::vector<SequencePair>& pairs,
                    const EvalSpec& spec, std::ostream* detail) {
  spec.validate();
  EvalResult result;
  int64_t next_hits = 0, second_hits = 0, second_total = 0;
  int64_t sequences = 0;
  for (size_t s = 0; s < pairs.size() && sequences < spec.n_eval_sequences; ++s) {
    const SequencePair& pair = pairs[s];
    const int64_t n = static_cast<int64_t>(pair.ids.size());
    // Judged contexts: the last tokens_per_sequence positions t with both
    // x_{t+1} and x_{t+2} inside the sequence and inside the target span.
    const int64_t t_hi = n - 3;  // ctx = ids[0..t], so t+2 <= n-1
    const int64_t t_lo = t_hi - spec.tokens_per_sequence + 1;
    if (t_lo < 0) continue;
    const int64_t first_target = n - pair.target_len;
    if (t_lo + 1 < first_target) continue;  // window leaks out of the target span
    ++sequences;
    for (int64_t t = t_lo; t <= t_hi; ++t) {
      const std::vector<int32_t> ctx(pair.ids.begin(), pair.ids.begin() + t + 1);
      const PairPrediction pred = predictor.predict(ctx);
      const int32_t next_ref = pair.ids[static_cast<size_t>(t + 1)];
      const int32_t second_ref = pair.ids[static_cast<size_t>(t + 2)];
      const bool next_hit = top_k_hit(pred.next, next_ref, spec.top_k);
      next_hits += next_hit ? 1 : 0;
      bool second_hit = false;
      if (pred.second) {
        second_hit = top_k_hit(*pred.second, second_ref, spec.top_k);
        second_hits += second_hit ? 1 : 0;
        ++second_total;
        result.has_second = true;
      }
      ++result.n_positions;
      if (detail) {
        nlohmann::json rec;
        rec["sequence"] = s;
        rec["context_pos"] = t;
        rec["next_hit"] = next_hit;
        if (pred.second) rec["second_hit"] = second_hit;
        *detail << rec.dump() << "\n";
      }
    }
  }
  if (result.n_positions == 0) {
    throw ConfigError("evaluate: no qualifying sequences (need target_len >= tokens_per_sequence + 1)");
  }
  result.next_top5 = static_cast<double>(next_hits) / static_cast<double>(result.n_positions);
  if (second_total > 0) {
    result.second_top5 = static_cast<double>(second_hits) / static_cast<double>(second_total);
  }
  return result;
}

const std::vector<std::string>& strategy_rows() {
  static const std::vector<std::string> rows = {
      "baseline", "heads_only", "vanilla", "warmup",
      "diff_lr",  "warmup+diff_lr", "diff_lr+whs"};
  return rows;
}

void report_matrix(const std::string& run_dir, const std::string& out_csv) {
  namespace fs = std::filesystem;
  std::ofstream out(out_csv, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + out_csv);
  out << "row,next_top5,second_top5,n_positions\n";
  double baseline_2nd = -1.0, heads_only_2nd = -1.0, best_joint_2nd = -1.0;
  for (const std::string& row : strategy_rows()) {
    const fs::path path = fs::path(run_dir) / "eval" / (row + ".json");
    if (!fs::exists(path)) {
      out << row << ",absent,absent,0\n";
      continue;
    }
    std::ifstream in(path);
    const nlohmann::json j = nlohmann::json::parse(in);
    const double next = j.at("next_top5").get<double>();
    const double second = j.at("second_top5").get<double>();
    out << row << "," << next << "," << second << ","
        << j.at("n_positions").get<int64_t>() << "\n";
    if (row == "baseline") baseline_2nd = second;
    else if (row == "heads_only") heads_only_2nd = second;
    else best_joint_2nd = std::max(best_joint_2nd, second);
  }
  if (baseline_2nd >= 0.0 && heads_only_2nd >= 0.0 && best_joint_2nd >= 0.0) {
    out << "ordering:baseline_ge_joint," << (baseline_2nd >= best_joint_2nd) << ",,\n";
    out << "ordering:joint_ge_heads_only," << (best_joint_2nd >= heads_only_2nd) << ",,\n";
  }
  if (!out) throw IoError("write failed: " + out_csv);
}

}  // namespace mtplab
