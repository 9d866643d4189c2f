#include "mtplab/marginal.hpp"

#include <algorithm>

#include "mtplab/errors.hpp"

namespace mtplab {

void MarginalSpec::validate() const {
  if (k < 2 || k > 3) throw ConfigError("marginal: k must be 2 or 3");
  if (!(top_p > 0.0) || top_p > 1.0) throw ConfigError("marginal: top_p must be in (0,1]");
}

ProbDist second_token_exact(NtpPredictor& model, const std::vector<int32_t>& ids) {
  const ProbDist p1 = model.next_dist(ids);
  if (p1.size() > 256) {
    throw ConfigError("second_token_exact: vocabulary too large for exact mode");
  }
  ProbDist out(p1.size(), 0.0);
  std::vector<int32_t> ext = ids;
  ext.push_back(0);
  for (size_t y = 0; y < p1.size(); ++y) {
    ext.back() = static_cast<int32_t>(y);
    const ProbDist p2 = model.next_dist(ext);
    const double w = p1[y];
    for (size_t v = 0; v < out.size(); ++v) out[v] += w * p2[v];
  }
  return out;
}

ProbDist second_token_truncated(NtpPredictor& model, const std::vector<int32_t>& ids,
                                const MarginalSpec& spec) {
  spec.validate();
  if (spec.top_p == 1.0) return second_token_exact(model, ids);  // exact mode
  const ProbDist p1 = model.next_dist(ids);
  std::vector<int32_t> candidates = nucleus_set(p1, spec.top_p);
  // Fixed assembly order regardless of probability ranking.
  std::sort(candidates.begin(), candidates.end());
  double captured = 0.0;
  ProbDist out(p1.size(), 0.0);
  std::vector<int32_t> ext = ids;
  ext.push_back(0);
  for (int32_t y : candidates) {
    ext.back() = y;
    const ProbDist p2 = model.next_dist(ext);
    const double w = p1[static_cast<size_t>(y)];
    captured += w;
    for (size_t v = 0; v < out.size(); ++v) out[v] += w * p2[v];
  }
  if (spec.renormalize && captured > 0.0) {
    for (double& v : out) v /= captured;
  }
  return out;
}

namespace {

// Weighted continuation contexts after expanding one truncated level.
struct WeightedContext {
  std::vector<int32_t> ids;
  double weight;
};

std::vector<WeightedContext> expand_level(NtpPredictor& model,
                                          const std::vector<WeightedContext>& frontier,
                                          const MarginalSpec& spec) {
  std::vector<WeightedContext> next;
  for (const WeightedContext& wc : frontier) {
    const ProbDist p = model.next_dist(wc.ids);
    std::vector<int32_t> candidates;
    if (spec.top_p == 1.0) {
      candidates.resize(p.size());
      for (size_t i = 0; i < p.size(); ++i) candidates[i] = static_cast<int32_t>(i);
    } else {
      candidates = nucleus_set(p, spec.top_p);
      std::sort(candidates.begin(), candidates.end());
    }
    double captured = 0.0;
    for (int32_t y : candidates) captured += p[static_cast<size_t>(y)];
    for (int32_t y : candidates) {
      WeightedContext child;
      child.ids = wc.ids;
      child.ids.push_back(y);
      double w = p[static_cast<size_t>(y)];
      if (spec.renormalize && spec.top_p != 1.0 && captured > 0.0) w /= captured;
      child.weight = wc.weight * w;
      next.push_back(std::move(child));
    }
  }
  return next;
}

}  // namespace

ProbDist kth_token_marginal(NtpPredictor& model, const std::vector<int32_t>& ids,
                            const MarginalSpec& spec, int k) {
  if (k < 1 || k > 3) throw ConfigError("kth_token_marginal: k must be 1..3");
  if (k == 1) return model.next_dist(ids);
  if (k == 2) return second_token_truncated(model, ids, spec);
  // k == 3: two truncated levels of intermediate tokens.
  const ProbDist probe = model.next_dist(ids);
  const int64_t v = static_cast<int64_t>(probe.size());
  if (spec.top_p == 1.0 && v * v > 65536) {
    throw ConfigError("kth_token_marginal: exact-mode budget exceeded (|V|^2 > 65536)");
  }
  std::vector<WeightedContext> frontier{{ids, 1.0}};
  frontier = expand_level(model, frontier, spec);  // over x_{t+1}
  frontier = expand_level(model, frontier, spec);  // over x_{t+2}
  ProbDist out(probe.size(), 0.0);
  for (const WeightedContext& wc : frontier) {
    const ProbDist p = model.next_dist(wc.ids);
    for (size_t i = 0; i < out.size(); ++i) out[i] += wc.weight * p[i];
  }
  return out;
}

double k_token_joint(NtpPredictor& model, const std::vector<int32_t>& ids,
                     const MarginalSpec& spec, const std::vector<int32_t>& query) {
  spec.validate();
  if (static_cast<int>(query.size()) != spec.k) {
    throw ConfigError("k_token_joint: query length must equal k");
  }
  double prob = 1.0;
  for (int k = 1; k <= spec.k; ++k) {
    const ProbDist marginal = kth_token_marginal(model, ids, spec, k);
    const int32_t q = query[static_cast<size_t>(k - 1)];
    if (q < 0 || static_cast<size_t>(q) >= marginal.size()) {
      throw ConfigError("k_token_joint: query token out of range");
    }
    prob *= marginal[static_cast<size_t>(q)];
  }
  return prob;
}

}  // namespace mtplab
