#include "mtplab/dist.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtplab/errors.hpp"

namespace mtplab {

void check_prob_dist(const ProbDist& d, double tol) {
  double sum = 0.0;
  for (double v : d) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw NumericError("ProbDist: negative or non-finite entry");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw NumericError("ProbDist: sums to " + std::to_string(sum));
  }
}

ProbDist dist_from_logits(const std::vector<float>& logits) {
  if (logits.empty()) throw ShapeError("dist_from_logits: empty logits");
  double mx = logits[0];
  for (float v : logits) {
    if (!std::isfinite(v)) throw NumericError("dist_from_logits: non-finite logit");
    mx = std::max(mx, static_cast<double>(v));
  }
  ProbDist out(logits.size());
  double denom = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

namespace {

// Token ids sorted by (probability desc, id asc).
std::vector<int32_t> rank_order(const ProbDist& d) {
  std::vector<int32_t> ids(d.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&d](int32_t a, int32_t b) {
    return d[static_cast<size_t>(a)] > d[static_cast<size_t>(b)];
  });
  return ids;
}

}  // namespace

std::vector<int32_t> nucleus_set(const ProbDist& d, double p) {
  if (!(p > 0.0) || p > 1.0) throw ConfigError("nucleus_set: p must be in (0,1]");
  const std::vector<int32_t> order = rank_order(d);
  std::vector<int32_t> out;
  double cum = 0.0;
  for (int32_t id : order) {
    out.push_back(id);
    cum += d[static_cast<size_t>(id)];
    if (cum >= p) break;
  }
  return out;
}

int64_t top_p_count(const ProbDist& d, double p) {
  return static_cast<int64_t>(nucleus_set(d, p).size());
}

bool top_k_hit(const ProbDist& d, int32_t token, int k) {
  if (token < 0 || static_cast<size_t>(token) >= d.size()) {
    throw ShapeError("top_k_hit: token id out of range");
  }
  if (k < 1) throw ConfigError("top_k_hit: k must be >= 1");
  const double pt = d[static_cast<size_t>(token)];
  int rank = 0;  // tokens strictly ahead of `token` under (prob desc, id asc)
  for (size_t i = 0; i < d.size(); ++i) {
    if (static_cast<int32_t>(i) == token) continue;
    if (d[i] > pt || (d[i] == pt && static_cast<int32_t>(i) < token)) ++rank;
  }
  return rank < k;
}

double entropy_nats(const ProbDist& d) {
  double h = 0.0;
  for (double v : d) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double kl_nats(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size()) throw ShapeError("kl_nats: size mismatch");
  constexpr double kFloor = 1e-12;
  double ps = 0.0, qs = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    ps += std::max(p[i], kFloor);
    qs += std::max(q[i], kFloor);
  }
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max(p[i], kFloor) / ps;
    const double qi = std::max(q[i], kFloor) / qs;
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

double total_variation(const ProbDist& a, const ProbDist& b) {
  if (a.size() != b.size()) throw ShapeError("total_variation: size mismatch");
  double l1 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) l1 += std::abs(a[i] - b[i]);
  return 0.5 * l1;
}

}  // namespace mtplab
