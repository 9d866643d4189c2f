#pragma once

#include <cstdint>
#include <vector>

namespace mtplab {

// Length-|V| probability vector. Entries >= 0, sum within 1e-6 of 1.
using ProbDist = std::vector<double>;

// Throws NumericError if `d` violates the ProbDist invariants.
void check_prob_dist(const ProbDist& d, double tol = 1e-6);

// Softmax of float logits computed in float64; always a valid ProbDist.
ProbDist dist_from_logits(const std::vector<float>& logits);

// Nucleus candidate set: smallest descending-probability prefix whose
// cumulative mass reaches p, including the crossing token. Ties broken by
// ascending token id. Returned ids are in descending-probability order.
// This is the single candidate-set implementation shared by the
// marginalization engine and the probes.
std::vector<int32_t> nucleus_set(const ProbDist& d, double p);

// |nucleus_set(d, p)|.
int64_t top_p_count(const ProbDist& d, double p);

// True iff `token` is among the k highest-probability entries; boundary ties
// broken by ascending token id.
bool top_k_hit(const ProbDist& d, int32_t token, int k);

// Shannon entropy in nats.
double entropy_nats(const ProbDist& d);

// KL(p||q) in nats with both sides floored at 1e-12 and renormalized, so the
// result is finite for any pair of ProbDists.
double kl_nats(const ProbDist& p, const ProbDist& q);

// Total variation distance, 0.5 * L1.
double total_variation(const ProbDist& a, const ProbDist& b);

}  // namespace mtplab
