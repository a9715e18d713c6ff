#include <doctest.h>

#include <cmath>

#include "cofair/error.hpp"
#include "cofair/training.hpp"
#include "cofair/verify.hpp"
#include "helpers.hpp"

using namespace cofair;

namespace {

TheoryProbe fixed_probe(Predictor g) {
  TheoryProbe p;
  p.predictor = std::move(g);
  p.group0 = Tensor2(3, 2, std::vector<double>{0, 0, 0.1, 0, 0, 0.2});
  p.group1 = Tensor2(2, 2, std::vector<double>{1, 1, 1.2, 0.9});
  return p;
}

FairnessTrajectory trajectory_of(std::vector<std::vector<double>> rows) {
  FairnessTrajectory t;
  t.losses = Tensor2(rows.size(), rows[0].size());
  for (std::size_t u = 0; u < rows.size(); ++u) {
    t.users.push_back(u);
    for (std::size_t k = 0; k < rows[u].size(); ++k) t.losses(u, k) = rows[u][k];
  }
  return t;
}

}  // namespace

TEST_CASE("constant predictor: no gap in means, loss one") {
  const auto r = lemma1_check(fixed_probe([](std::span<const double>) { return 0.37; }));
  CHECK(r.delta_dp == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.constructed_loss == doctest::Approx(1.0));
  CHECK(r.gap == doctest::Approx(1.0));
}

TEST_CASE("separating predictor: dp one, loss two") {
  const auto r = lemma1_check(fixed_probe([](std::span<const double> e) { return e[0] > 0.5 ? 1.0 : 0.0; }));
  CHECK(r.delta_dp == 1.0);
  CHECK(r.constructed_loss == 2.0);
  const auto flipped = lemma1_check(fixed_probe([](std::span<const double> e) { return e[0] > 0.5 ? 0.0 : 1.0; }));
  CHECK(flipped.constructed_loss == 2.0);
}

TEST_CASE("linear loss arithmetic") {
  const double d0[] = {0.2, 0.4}, d1[] = {0.9};
  CHECK(linear_fairness_loss(d0, d1) == doctest::Approx((0.8 + 0.6) / 2.0 + 0.9));
  CHECK_THROWS(linear_fairness_loss({}, d1));
}

TEST_CASE("identity holds on every random probe") {
  const auto suite = lemma1_suite(7, 1000, 1e-9);
  CHECK(suite.probes == 1000);
  CHECK(suite.passed == 1000);
  CHECK(suite.max_identity_error < 1e-9);
  CHECK(suite.pass());

  // independent recomputation of a few probes
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng rng = Rng::derive(7, Stream::probe, {i});
    const auto probe = random_probe(rng);
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t r = 0; r < probe.group0.rows(); ++r) m0 += probe.predictor(probe.group0.row(r));
    for (std::size_t r = 0; r < probe.group1.rows(); ++r) m1 += probe.predictor(probe.group1.row(r));
    m0 /= static_cast<double>(probe.group0.rows());
    m1 /= static_cast<double>(probe.group1.rows());
    const auto res = lemma1_check(probe);
    CHECK(std::abs(res.delta_dp - std::abs(m1 - m0)) < 1e-12);
    // D = G gives 1 - m0 + m1, D = 1 - G gives 1 + m0 - m1
    CHECK(std::abs(res.constructed_loss - std::max(1.0 - m0 + m1, 1.0 + m0 - m1)) < 1e-12);
    CHECK(res.constructed_loss >= res.delta_dp);
  }
}

TEST_CASE("row monotonicity with slack") {
  const double down[] = {-1, -2, -3};
  const double bump[] = {-1, -0.9995, -2};
  CHECK(row_monotone(down, 0.0));
  CHECK_FALSE(row_monotone(bump, 0.0));
  CHECK(row_monotone(bump, 1e-3));
}

TEST_CASE("hand-built trajectory passes at zero slack") {
  const auto a = audit_trajectory(trajectory_of({{-1, -2, -3}, {-1, -1, -2}}), 0.0);
  CHECK(a.pass_fraction == 1.0);
  CHECK(a.pass());
  const auto b = audit_trajectory(trajectory_of({{-1, -2, -3}, {-1, -0.5, -2}, {-1, -1, -0.5}, {0, 0, 0}}), 1e-3);
  CHECK(b.pass_fraction == 0.5);
  CHECK(b.first_violation == std::vector<std::size_t>{0, 1, 2, 0});
  CHECK_FALSE(b.pass());
}

TEST_CASE("audit errors") {
  CHECK_THROWS_AS(audit_trajectory(trajectory_of({{-1, -2}}), -1e-3), ConfigError);
  CHECK_THROWS_AS(audit_trajectory(trajectory_of({{-1}}), 1e-3), RangeError);
}

TEST_CASE("audit is order-equivariant") {
  Rng rng(3);
  std::vector<std::vector<double>> rows(30, std::vector<double>(4));
  for (auto& r : rows) {
    double v = -0.5;
    for (auto& x : r) x = v -= rng.uniform(-0.1, 0.3);
  }
  const auto base = audit_trajectory(trajectory_of(rows), 1e-3);
  auto shuffled = rows;
  std::vector<std::size_t> perm(rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = rows[perm[i]];
  const auto moved = audit_trajectory(trajectory_of(shuffled), 1e-3);
  CHECK(moved.pass_fraction == base.pass_fraction);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(moved.user_pass[i] == base.user_pass[perm[i]]);
}

TEST_CASE("no_fca checkpoints pass trivially and a one-level model is rejected") {
  auto synth = synth_biased({.users = 40, .items = 30, .latent = 4, .bias = 2.0, .density = 0.2, .seed = 2});
  const auto ds = split(synth.dataset, {}, 1);
  TrainConfig c;
  c.latent = c.shared = c.adapter = c.adversary_hidden = 8;
  c.levels = 3;
  c.batch_size = 64;
  c.max_epochs = 2;
  c.ablation = Ablation::no_fca;
  const auto ckpt = train(c, ds, synth.attributes);
  const auto audit = monotonicity_audit(ckpt.model, ds, synth.attributes, 0.0);
  CHECK(audit.pass_fraction == 1.0);
  CHECK(audit.users.size() == 40);
  REQUIRE(audit.dp.size() == 3);
  CHECK(audit.dp_non_increasing);

  c.levels = 1;
  c.ablation = Ablation::full;
  const auto one = train(c, ds, synth.attributes);
  CHECK_THROWS_AS(monotonicity_audit(one.model, ds, synth.attributes, 1e-3), RangeError);
}
