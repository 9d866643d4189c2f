#pragma once

#include <cstdint>
#include <vector>

#include "mtplab/dist.hpp"
#include "mtplab/model.hpp"

namespace mtplab {

struct MarginalSpec {
  int k = 2;             // tokens predicted jointly (2..3 supported)
  double top_p = 0.99;   // truncation mass; 1.0 selects exact mode
  bool renormalize = true;

  void validate() const;
};

// Counting wrapper around a next-token model: every marginalization forward
// pass goes through next_dist so the |S|+1 budget is observable.
class NtpPredictor {
 public:
  virtual ~NtpPredictor() = default;
  ProbDist next_dist(const std::vector<int32_t>& ids) {
    ++forward_calls_;
    return next_dist_impl(ids);
  }
  int64_t forward_calls() const { return forward_calls_; }
  void reset_counter() { forward_calls_ = 0; }

 protected:
  virtual ProbDist next_dist_impl(const std::vector<int32_t>& ids) = 0;

 private:
  int64_t forward_calls_ = 0;
};

class CheckpointPredictor : public NtpPredictor {
 public:
  explicit CheckpointPredictor(const Checkpoint& ckpt) : ckpt_(ckpt) {}

 protected:
  ProbDist next_dist_impl(const std::vector<int32_t>& ids) override {
    return next_token_dist(ckpt_, ids);
  }

 private:
  const Checkpoint& ckpt_;
};

// p(x_{t+2}|ctx) = sum_y p(x_{t+2}|ctx,y) p(y|ctx) over the full vocabulary.
// Sums to 1 by the law of total probability; no renormalization applied.
// Requires |V| <= 256 (cost is |V| forward passes).
ProbDist second_token_exact(NtpPredictor& model, const std::vector<int32_t>& ids);

// Same mixture restricted to the nucleus set of p(y|ctx); weights
// renormalized to the captured mass. top_p = 1.0 is exact mode and delegates
// to second_token_exact. Issues exactly |S|+1 forward passes otherwise.
ProbDist second_token_truncated(NtpPredictor& model, const std::vector<int32_t>& ids,
                                const MarginalSpec& spec);

// p(X_{t+1..t+K} = query | ctx) under the conditional-independence
// factorization: the product over k of the k-th marginal at query[k-1].
// Exact mode requires |V|^(K-1) <= 65536 intermediate sequences.
double k_token_joint(NtpPredictor& model, const std::vector<int32_t>& ids,
                     const MarginalSpec& spec, const std::vector<int32_t>& query);

// Marginal distribution of the k-th future token (k = 1..3), truncating the
// intermediate-token sums per level according to spec.
ProbDist kth_token_marginal(NtpPredictor& model, const std::vector<int32_t>& ids,
                            const MarginalSpec& spec, int k);

}  // namespace mtplab
