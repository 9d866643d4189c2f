#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "mtplab/marginal.hpp"
#include "mtplab/rng.hpp"

using namespace mtplab;

namespace {

// Table-driven next-token model: distribution depends on the last token only
// (order-1 Markov), so joint probabilities can be enumerated by hand.
class TablePredictor : public NtpPredictor {
 public:
  TablePredictor(int64_t vocab, uint64_t seed) : vocab_(vocab) {
    Rng rng(seed);
    table_.resize(static_cast<size_t>(vocab));
    for (auto& row : table_) {
      row.resize(static_cast<size_t>(vocab));
      double total = 0.0;
      for (double& p : row) {
        p = 0.05 + rng.uniform();  // bounded away from zero
        total += p;
      }
      for (double& p : row) p /= total;
    }
  }

  const ProbDist& row(int32_t id) const { return table_[static_cast<size_t>(id)]; }

 protected:
  ProbDist next_dist_impl(const std::vector<int32_t>& ids) override {
    return table_[static_cast<size_t>(ids.back())];
  }

 private:
  int64_t vocab_;
  std::vector<ProbDist> table_;
};

// Deterministic chain: token i is always followed by (i+1) mod vocab.
class PointMassPredictor : public NtpPredictor {
 public:
  explicit PointMassPredictor(int64_t vocab) : vocab_(vocab) {}

 protected:
  ProbDist next_dist_impl(const std::vector<int32_t>& ids) override {
    ProbDist d(static_cast<size_t>(vocab_), 0.0);
    d[static_cast<size_t>((ids.back() + 1) % vocab_)] = 1.0;
    return d;
  }

 private:
  int64_t vocab_;
};

}  // namespace

TEST_CASE("exact second-token marginal matches the definition") {
  TablePredictor model(8, 3);
  const std::vector<int32_t> ctx = {2, 5};
  const ProbDist got = second_token_exact(model, ctx);
  // Hand mixture: sum_y p(y|last=5) * p(.|last=y).
  ProbDist want(8, 0.0);
  const ProbDist& first = model.row(5);
  for (int32_t y = 0; y < 8; ++y) {
    const ProbDist& next = model.row(y);
    for (size_t v = 0; v < 8; ++v) want[v] += first[static_cast<size_t>(y)] * next[v];
  }
  double mass = 0.0;
  for (size_t v = 0; v < 8; ++v) {
    CHECK(got[v] == doctest::Approx(want[v]).epsilon(1e-12));
    mass += got[v];
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("top_p = 1.0 truncated marginal is bitwise the exact one") {
  TablePredictor model(12, 9);
  MarginalSpec spec;
  spec.top_p = 1.0;
  for (int32_t last = 0; last < 12; ++last) {
    const std::vector<int32_t> ctx = {0, last};
    const ProbDist exact = second_token_exact(model, ctx);
    const ProbDist trunc = second_token_truncated(model, ctx, spec);
    REQUIRE(trunc.size() == exact.size());
    for (size_t v = 0; v < exact.size(); ++v) CHECK(trunc[v] == exact[v]);
  }
}

TEST_CASE("truncated marginal issues exactly |S|+1 forward passes") {
  TablePredictor model(16, 4);
  MarginalSpec spec;
  spec.top_p = 0.9;
  const std::vector<int32_t> ctx = {7};
  // |S| from the nucleus of the first-step distribution.
  const ProbDist first = model.row(7);
  const size_t s = nucleus_set(first, spec.top_p).size();
  model.reset_counter();
  second_token_truncated(model, ctx, spec);
  CHECK(model.forward_calls() == static_cast<int64_t>(s) + 1);
}

TEST_CASE("K=3 joint matches brute-force enumeration at |V| = 8") {
  TablePredictor model(8, 21);
  MarginalSpec spec;
  spec.k = 3;
  spec.top_p = 1.0;
  const std::vector<int32_t> ctx = {1, 6};

  // Brute force the three marginals of the factorized joint.
  std::vector<ProbDist> marg(3, ProbDist(8, 0.0));
  marg[0] = model.row(6);
  for (int32_t y = 0; y < 8; ++y) {
    for (size_t v = 0; v < 8; ++v)
      marg[1][v] += marg[0][static_cast<size_t>(y)] * model.row(y)[v];
  }
  for (int32_t y = 0; y < 8; ++y) {
    for (int32_t z = 0; z < 8; ++z) {
      const double path =
          marg[0][static_cast<size_t>(y)] * model.row(y)[static_cast<size_t>(z)];
      for (size_t v = 0; v < 8; ++v) marg[2][v] += path * model.row(z)[v];
    }
  }
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int32_t> query;
    for (int k = 0; k < 3; ++k)
      query.push_back(static_cast<int32_t>(rng.uniform_int(0, 7)));
    const double got = k_token_joint(model, ctx, spec, query);
    const double want = marg[0][static_cast<size_t>(query[0])] *
                        marg[1][static_cast<size_t>(query[1])] *
                        marg[2][static_cast<size_t>(query[2])];
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("kth_token_marginal is a distribution for k = 1..3") {
  TablePredictor model(10, 5);
  MarginalSpec spec;
  spec.top_p = 0.95;
  const std::vector<int32_t> ctx = {3, 8};
  for (int k = 1; k <= 3; ++k) {
    const ProbDist d = kth_token_marginal(model, ctx, spec, k);
    check_prob_dist(d);
  }
}

TEST_CASE("point-mass chains give joint probabilities in {0,1}") {
  PointMassPredictor model(6);
  MarginalSpec spec;
  spec.k = 2;
  spec.top_p = 1.0;
  const std::vector<int32_t> ctx = {0, 2};
  CHECK(k_token_joint(model, ctx, spec, {3, 4}) == doctest::Approx(1.0));
  CHECK(k_token_joint(model, ctx, spec, {3, 5}) == doctest::Approx(0.0));
  CHECK(k_token_joint(model, ctx, spec, {4, 5}) == doctest::Approx(0.0));
}

TEST_CASE("spec validation") {
  MarginalSpec spec;
  spec.k = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.k = 4;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.k = 2;
  spec.top_p = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.top_p = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
