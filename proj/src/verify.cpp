#include "cofair/verify.hpp"

#include <cmath>

#include "cofair/diffmath.hpp"
#include "cofair/error.hpp"

namespace cofair {

TheoryProbe random_probe(Rng& rng) {
  const std::size_t width = 1 + rng.below(8);
  const std::size_t n0 = 1 + rng.below(60), n1 = 1 + rng.below(60);
  std::vector<double> w(width), shift(width);
  for (auto& x : w) x = rng.normal() * rng.uniform(0.1, 3.0);
  for (auto& x : shift) x = rng.normal();
  const double b = rng.normal();
  TheoryProbe probe;
  probe.group0 = Tensor2(n0, width);
  probe.group1 = Tensor2(n1, width);
  for (std::size_t i = 0; i < probe.group0.size(); ++i) probe.group0[i] = rng.normal();
  for (std::size_t r = 0; r < n1; ++r) {
    for (std::size_t c = 0; c < width; ++c) probe.group1(r, c) = rng.normal() + shift[c];
  }
  probe.predictor = [w, b](std::span<const double> e) {
    double z = b;
    for (std::size_t j = 0; j < e.size(); ++j) z += w[j] * e[j];
    return sigmoid(z);
  };
  return probe;
}

double linear_fairness_loss(std::span<const double> d_group0, std::span<const double> d_group1) {
  if (d_group0.empty() || d_group1.empty()) throw DataError("linear fairness loss: empty population");
  double s0 = 0.0, s1 = 0.0;
  for (double d : d_group0) s0 += 1.0 - d;
  for (double d : d_group1) s1 += d;
  return s0 / static_cast<double>(d_group0.size()) + s1 / static_cast<double>(d_group1.size());
}

LemmaResult lemma1_check(const TheoryProbe& probe) {
  if (probe.group0.rows() == 0 || probe.group1.rows() == 0) throw DataError("lemma check: empty population");
  if (probe.group0.cols() != probe.group1.cols()) throw ShapeError("lemma check: populations differ in width");
  std::vector<double> g0, g1;
  for (std::size_t r = 0; r < probe.group0.rows(); ++r) g0.push_back(probe.predictor(probe.group0.row(r)));
  for (std::size_t r = 0; r < probe.group1.rows(); ++r) g1.push_back(probe.predictor(probe.group1.row(r)));
  for (double g : g0) if (!(g >= 0.0 && g <= 1.0)) throw RangeError("lemma check: predictor left [0, 1]");
  for (double g : g1) if (!(g >= 0.0 && g <= 1.0)) throw RangeError("lemma check: predictor left [0, 1]");

  Tensor2 all(g0.size() + g1.size(), probe.group0.cols());
  std::vector<int> groups;
  for (std::size_t r = 0; r < probe.group0.rows(); ++r) {
    std::copy(probe.group0.row(r).begin(), probe.group0.row(r).end(), all.row(r).begin());
    groups.push_back(0);
  }
  for (std::size_t r = 0; r < probe.group1.rows(); ++r) {
    std::copy(probe.group1.row(r).begin(), probe.group1.row(r).end(), all.row(g0.size() + r).begin());
    groups.push_back(1);
  }
  LemmaResult out;
  out.delta_dp = score_gap_dp(probe.predictor, all, groups);

  std::vector<double> inv0, inv1;
  for (double g : g0) inv0.push_back(1.0 - g);
  for (double g : g1) inv1.push_back(1.0 - g);
  out.constructed_loss = std::max(linear_fairness_loss(inv0, inv1), linear_fairness_loss(g0, g1));
  out.gap = out.constructed_loss - out.delta_dp;
  out.identity_error = std::abs(out.constructed_loss - (out.delta_dp + 1.0));
  return out;
}

LemmaSuite lemma1_suite(std::uint64_t seed, std::size_t probes, double tolerance) {
  LemmaSuite suite;
  suite.tolerance = tolerance;
  for (std::size_t i = 0; i < probes; ++i) {
    Rng rng = Rng::derive(seed, Stream::probe, {i});
    const auto r = lemma1_check(random_probe(rng));
    ++suite.probes;
    if (r.identity_error < tolerance) ++suite.passed;
    suite.max_identity_error = std::max(suite.max_identity_error, r.identity_error);
  }
  return suite;
}

bool row_monotone(std::span<const double> row, double tau) {
  for (std::size_t t = 0; t + 1 < row.size(); ++t) {
    if (!(row[t + 1] <= row[t] + tau)) return false;
  }
  return true;
}

MonotonicityAudit audit_trajectory(const FairnessTrajectory& trajectory, double tau) {
  if (!(tau >= 0.0)) throw ConfigError("monotonicity slack tau must be >= 0");
  if (trajectory.levels() < 2) throw RangeError("monotonicity audit needs at least two fairness levels");
  MonotonicityAudit audit;
  audit.tau = tau;
  audit.users = trajectory.users;
  std::size_t passed = 0;
  for (std::size_t r = 0; r < trajectory.losses.rows(); ++r) {
    const auto row = trajectory.losses.row(r);
    std::size_t first = 0;
    for (std::size_t t = 0; t + 1 < row.size() && first == 0; ++t) {
      if (!(row[t + 1] <= row[t] + tau)) first = t + 1;
    }
    audit.user_pass.push_back(first == 0);
    audit.first_violation.push_back(first);
    if (first == 0) ++passed;
  }
  audit.pass_fraction = trajectory.losses.rows() == 0
                            ? 1.0
                            : static_cast<double>(passed) / static_cast<double>(trajectory.losses.rows());
  return audit;
}

MonotonicityAudit monotonicity_audit(const CofairModel& model, const InteractionDataset& dataset,
                                     const SensitiveAttributes& attributes, double tau, std::size_t k, Split split) {
  if (model.levels() < 2) throw RangeError("monotonicity audit needs a checkpoint with T >= 2");
  std::vector<Index> users(dataset.user_count);
  for (Index u = 0; u < users.size(); ++u) users[u] = u;
  auto audit = audit_trajectory(trajectory_eval(model, attributes, users), tau);
  const auto report = evaluate(model, dataset, attributes, k, split);
  for (const auto& m : report.levels) audit.dp.push_back(m.dp);
  for (std::size_t t = 0; t + 1 < audit.dp.size(); ++t) {
    if (!(audit.dp[t + 1] <= audit.dp[t] + tau)) audit.dp_non_increasing = false;
  }
  return audit;
}

}  // namespace cofair
