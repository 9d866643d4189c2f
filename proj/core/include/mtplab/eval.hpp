#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtplab/data.hpp"
#include "mtplab/dist.hpp"
#include "mtplab/marginal.hpp"
#include "mtplab/mtp.hpp"

namespace mtplab {

enum class PredictorKind { marginal, mtp_heads, base_ntp };

struct EvalSpec {
  int64_t n_eval_sequences = 50;
  int tokens_per_sequence = 20;
  int top_k = 5;
  PredictorKind kind = PredictorKind::marginal;

  void validate() const;
};

// Next-token plus (optionally) 2nd-token distribution from one teacher-forced
// context. All predictor kinds are scored through the same top_k_hit kernel.
struct PairPrediction {
  ProbDist next;
  std::optional<ProbDist> second;
};

class PairPredictor {
 public:
  virtual ~PairPredictor() = default;
  virtual PairPrediction predict(const std::vector<int32_t>& ctx) = 0;
};

// Truncated Eq.-style marginalization on top of any next-token model.
class MarginalPairPredictor : public PairPredictor {
 public:
  MarginalPairPredictor(NtpPredictor& model, MarginalSpec spec)
      : model_(model), spec_(spec) {}
  PairPrediction predict(const std::vector<int32_t>& ctx) override;

 private:
  NtpPredictor& model_;
  MarginalSpec spec_;
};

// Head-1 / head-2 distributions of an MTP model.
class HeadsPairPredictor : public PairPredictor {
 public:
  explicit HeadsPairPredictor(const MtpModel& model) : model_(model) {}
  PairPrediction predict(const std::vector<int32_t>& ctx) override;

 private:
  const MtpModel& model_;
};

// Next-token only.
class BaseNtpPairPredictor : public PairPredictor {
 public:
  explicit BaseNtpPairPredictor(const Checkpoint& ckpt) : ckpt_(ckpt) {}
  PairPrediction predict(const std::vector<int32_t>& ctx) override;

 private:
  const Checkpoint& ckpt_;
};

struct EvalResult {
  double next_top5 = 0.0;
  double second_top5 = 0.0;
  bool has_second = false;
  int64_t n_positions = 0;
};

// Teacher-forced scoring over the last tokens_per_sequence context positions
// of each qualifying eval pair: from context X_{<=t}, the next token x_{t+1}
// and the 2nd token x_{t+2} are both judged (same context, x_{t+1} unseen by
// the 2nd-token prediction). Requires target_len >= tokens_per_sequence + 1.
// `detail` (optional) receives one JSON line per scored position.
EvalResult evaluate(PairPredictor& predictor, const std::vector<SequencePair>& pairs,
                    const EvalSpec& spec, std::ostream* detail = nullptr);

// Table-shaped summary of the strategy matrix. Scans <run_dir>/eval/ for
// <row>.json summaries; missing rows are marked absent. Appends ordering
// flags (baseline >= joint >= heads_only on 2nd-token top-5).
void report_matrix(const std::string& run_dir, const std::string& out_csv);

// Canonical strategy row names, in table order.
const std::vector<std::string>& strategy_rows();

}  // namespace mtplab
