#pragma once

#include <cstdint>
#include <vector>

#include "cofair/metrics.hpp"
#include "cofair/model.hpp"
#include "cofair/rng.hpp"

namespace cofair {

// A predictor G: embedding -> [0, 1] and the two group populations it is
// evaluated on.
struct TheoryProbe {
  Predictor predictor;
  Tensor2 group0;
  Tensor2 group1;
};

// sigmoid(<w, e> + b) with w, b drawn from `rng`; populations of random size
// and width, group 1 shifted by a random offset.
TheoryProbe random_probe(Rng& rng);

struct LemmaResult {
  double delta_dp = 0.0;           // |E_1[G] - E_0[G]|
  double constructed_loss = 0.0;   // max over D in {1 - G, G} of E_0[1 - D] + E_1[D]
  double gap = 0.0;                // constructed_loss - delta_dp
  double identity_error = 0.0;     // |constructed_loss - (delta_dp + 1)|
};

// Linear-form fairness loss E_0[1 - D] + E_1[D] for adversary outputs D.
double linear_fairness_loss(std::span<const double> d_group0, std::span<const double> d_group1);

LemmaResult lemma1_check(const TheoryProbe& probe);

struct LemmaSuite {
  std::size_t probes = 0;
  std::size_t passed = 0;
  double max_identity_error = 0.0;
  double tolerance = 1e-9;
  bool pass() const { return probes > 0 && passed == probes; }
};

LemmaSuite lemma1_suite(std::uint64_t seed, std::size_t probes = 1000, double tolerance = 1e-9);

struct MonotonicityAudit {
  double tau = 1e-3;
  std::vector<Index> users;
  std::vector<char> user_pass;         // every adjacent pair within slack
  std::vector<std::size_t> first_violation;  // 1-based t of the first failing pair (t, t+1), 0 if none
  double pass_fraction = 0.0;
  std::vector<double> dp;              // DP@K per level, empty when not computed
  bool dp_non_increasing = true;
  double threshold = 0.90;
  bool pass() const { return pass_fraction >= threshold; }
};

// L(t+1)(u) <= L(t)(u) + tau for every user row and adjacent pair.
bool row_monotone(std::span<const double> row, double tau);

// Throws ConfigError for tau < 0 and RangeError when fewer than two levels.
MonotonicityAudit audit_trajectory(const FairnessTrajectory& trajectory, double tau);

MonotonicityAudit monotonicity_audit(const CofairModel& model, const InteractionDataset& dataset,
                                     const SensitiveAttributes& attributes, double tau, std::size_t k = 10,
                                     Split split = Split::test);

}  // namespace cofair
