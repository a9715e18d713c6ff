#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "cofair/diffmath.hpp"
#include "cofair/error.hpp"
#include "cofair/metrics.hpp"
#include "cofair/training.hpp"
#include "helpers.hpp"

using namespace cofair;

namespace {

using Lists = std::vector<std::vector<Index>>;

// TV distance between normalised count maps, by enumeration.
double tv_oracle(const std::map<Index, double>& a, const std::map<Index, double>& b) {
  double ta = 0.0, tb = 0.0;
  for (auto [i, c] : a) ta += c;
  for (auto [i, c] : b) tb += c;
  std::map<Index, std::pair<double, double>> joint;
  for (auto [i, c] : a) joint[i].first = c / ta;
  for (auto [i, c] : b) joint[i].second = c / tb;
  double s = 0.0;
  for (auto [i, p] : joint) s += std::abs(p.first - p.second);
  return 0.5 * s;
}

}  // namespace

TEST_CASE("ranking metrics examples") {
  const Lists one{{4, 1, 2}};
  const Lists rel_first{{4}};
  auto r = ranking_metrics(one, rel_first, 3);
  CHECK(r.recall == 1.0);
  CHECK(r.ndcg == 1.0);

  const Lists abc{{0, 1, 2}};
  const Lists bd{{1, 3}};
  CHECK(ranking_metrics(abc, bd, 3).recall == 0.5);

  const Lists b{{1}};
  CHECK(ranking_metrics(abc, b, 3).ndcg == doctest::Approx(0.6309298).epsilon(1e-7));

  // ideal ordering always scores 1
  const Lists ideal{{7, 3, 9, 0}};
  const Lists rel{{3, 7, 9}};
  CHECK(ranking_metrics(ideal, rel, 3).ndcg == doctest::Approx(1.0));
  CHECK(ranking_metrics(ideal, rel, 10).ndcg == doctest::Approx(1.0));
}

TEST_CASE("ranking metrics skip users without relevant items and cut at k") {
  const Lists lists{{0, 1}, {2, 3}};
  const Lists rel{{}, {3}};
  const auto r = ranking_metrics(lists, rel, 2);
  CHECK(r.users == 1);
  CHECK(r.recall == 1.0);
  CHECK(ranking_metrics(lists, rel, 1).recall == 0.0);
  // hand DCG: hits at ranks 1 and 3 out of 2 relevant, k = 3
  const Lists l2{{5, 6, 7}};
  const Lists r2{{5, 7}};
  const double dcg = 1.0 + 1.0 / std::log2(4.0);
  const double idcg = 1.0 + 1.0 / std::log2(3.0);
  CHECK(ranking_metrics(l2, r2, 3).ndcg == doctest::Approx(dcg / idcg).epsilon(1e-12));
}

TEST_CASE("dp examples") {
  const Lists same{{0, 1}, {0, 1}, {0, 1}};
  const std::vector<int> g3{0, 1, 1};
  CHECK(dp_at_k(same, g3, 2, 4) == 0.0);

  const Lists disjoint{{0, 1}, {2, 3}};
  const std::vector<int> g2{0, 1};
  CHECK(dp_at_k(disjoint, g2, 2, 4) == 1.0);

  // A=0 B=1 C=2
  const Lists mixed{{0, 1}, {0, 2}, {0, 1}, {0, 1}};
  const std::vector<int> g4{0, 0, 1, 1};
  CHECK(dp_at_k(mixed, g4, 2, 3) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("dp and eopp match enumeration, are symmetric and relabel invariant") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t users = 4 + rng.below(6), items = 8, k = 3;
    Lists lists(users), rel(users);
    std::vector<int> groups(users);
    for (std::size_t u = 0; u < users; ++u) {
      groups[u] = static_cast<int>(u % 2);
      std::vector<Index> perm(items);
      std::iota(perm.begin(), perm.end(), 0);
      shuffle(perm.begin(), perm.end(), rng);
      lists[u].assign(perm.begin(), perm.begin() + k);
      for (Index i = 0; i < items; ++i) {
        if (rng.bernoulli(0.4)) rel[u].push_back(i);
      }
    }
    std::map<Index, double> exp[2], hit[2];
    for (std::size_t u = 0; u < users; ++u) {
      for (Index i : lists[u]) {
        exp[groups[u]][i] += 1.0;
        if (std::find(rel[u].begin(), rel[u].end(), i) != rel[u].end()) hit[groups[u]][i] += 1.0;
      }
    }
    CHECK(std::abs(dp_at_k(lists, groups, k, items) - tv_oracle(exp[0], exp[1])) < 1e-12);
    const double eo = eopp_at_k(lists, rel, groups, k, items);
    if (!hit[0].empty() && !hit[1].empty()) CHECK(std::abs(eo - tv_oracle(hit[0], hit[1])) < 1e-12);

    auto flipped = groups;
    for (auto& g : flipped) g = 1 - g;
    CHECK(dp_at_k(lists, flipped, k, items) == doctest::Approx(dp_at_k(lists, groups, k, items)).epsilon(1e-14));
    CHECK(eopp_at_k(lists, rel, flipped, k, items) == doctest::Approx(eo).epsilon(1e-14));

    Lists relabeled = lists, rel2 = rel;
    for (auto* ls : {&relabeled, &rel2}) {
      for (auto& l : *ls) {
        for (auto& i : l) i = items - 1 - i;
      }
    }
    CHECK(dp_at_k(relabeled, groups, k, items) == doctest::Approx(dp_at_k(lists, groups, k, items)).epsilon(1e-14));
    CHECK(eopp_at_k(relabeled, rel2, groups, k, items) == doctest::Approx(eo).epsilon(1e-14));
    CHECK(eo >= 0.0);
    CHECK(eo <= 1.0);
  }
}

TEST_CASE("eopp examples and degenerate rules") {
  const Lists lists{{0, 1}, {0, 1}};
  const std::vector<int> g{0, 1};
  const Lists all_rel{{0, 1}, {0, 1}};
  CHECK(eopp_at_k(lists, all_rel, g, 2, 3) == 0.0);
  const Lists one_side{{0}, {2}};
  CHECK(eopp_at_k(lists, one_side, g, 2, 3) == 1.0);
  const Lists none{{2}, {2}};
  CHECK(eopp_at_k(lists, none, g, 2, 3) == 0.0);

  // four users: hits G0 {0}, {1}; G1 {0}, {0}
  const Lists l4{{0, 2}, {1, 2}, {0, 2}, {0, 1}};
  const Lists r4{{0}, {1}, {0}, {0}};
  const std::vector<int> g4{0, 0, 1, 1};
  CHECK(eopp_at_k(l4, r4, g4, 2, 3) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("group metric errors") {
  const Lists lists{{0}, {1}};
  const std::vector<int> only0{0, 0};
  CHECK_THROWS_AS(dp_at_k(lists, only0, 1, 2), DataError);
  CHECK_THROWS_AS(eopp_at_k(lists, lists, only0, 1, 2), DataError);
  const std::vector<int> bad{0, 3};
  CHECK_THROWS_AS(dp_at_k(lists, bad, 1, 2), DataError);
  const std::vector<int> short_groups{0};
  CHECK_THROWS_AS(dp_at_k(lists, short_groups, 1, 2), ShapeError);
}

TEST_CASE("score gap") {
  Rng rng(1);
  Tensor2 e(50, 3);
  for (auto& x : e.values()) x = rng.normal();
  std::vector<int> g(50);
  for (std::size_t u = 0; u < 50; ++u) g[u] = static_cast<int>(rng.below(2));
  g[0] = 0;
  g[1] = 1;
  CHECK(score_gap_dp([](std::span<const double>) { return 0.3; }, e, g) < 1e-15);

  Tensor2 labels(50, 1);
  for (std::size_t u = 0; u < 50; ++u) labels[u] = g[u];
  CHECK(score_gap_dp([](std::span<const double> v) { return v[0]; }, labels, g) == 1.0);

  const double w[] = {0.4, -1.1, 0.7};
  auto G = [&](std::span<const double> v) { return sigmoid(w[0] * v[0] + w[1] * v[1] + w[2] * v[2]); };
  double s[2] = {0, 0}, n[2] = {0, 0};
  for (std::size_t u = 0; u < 50; ++u) {
    s[g[u]] += G(e.row(u));
    n[g[u]] += 1;
  }
  CHECK(std::abs(score_gap_dp(G, e, g) - std::abs(s[1] / n[1] - s[0] / n[0])) < 1e-12);
  const std::vector<int> one(50, 1);
  CHECK_THROWS_AS(score_gap_dp(G, e, one), DataError);
}

TEST_CASE("trajectory values") {
  ModelDims d;
  d.users = 6;
  d.items = 5;
  d.latent = 4;
  d.shared = 3;
  d.adapter = 3;
  d.adversary_hidden = 4;
  d.levels = 3;
  SensitiveAttributes attrs{{0, 1, 0, 1, 0, 1}};
  const std::vector<Index> users{0, 1, 2, 3, 4, 5};

  auto zero = CofairModel(d, 1);
  zero.adversary = CofairModel::zeros(d).adversary;
  const auto flat = trajectory_eval(zero, attrs, users);
  for (double x : flat.losses.values()) CHECK(x == doctest::Approx(-std::log(2.0)).epsilon(1e-14));

  auto shared = d;
  shared.shared_adapter = true;
  CofairModel fca(shared, 2);
  const auto rows = trajectory_eval(fca, attrs, users);
  for (std::size_t u = 0; u < 6; ++u) {
    for (std::size_t t = 1; t < 3; ++t) CHECK(rows.losses(u, t) == rows.losses(u, 0));
  }

  CofairModel m(d, 3);
  Rng rng(3);
  for (auto* t : {&m.adversary.hidden.bias, &m.adversary.output.bias, &m.head.output.bias}) {
    for (auto& x : t->values()) x = rng.normal();
  }
  const auto tr = trajectory_eval(m, attrs, users);
  Rng unused(0);
  for (Index u : users) {
    for (std::size_t t = 1; t <= 3; ++t) {
      const auto e = level_embedding(m, u, t).vector;
      const double p = adversary_prob(m.adversary, e, Mode::eval, unused, 0.2);
      const double want = attrs.value[u] ? std::log(p) : std::log(1.0 - p);
      CHECK(std::abs(tr.losses(u, t - 1) - want) < 1e-12);
    }
  }
  const std::vector<Index> bad{9};
  CHECK_THROWS(trajectory_eval(m, attrs, bad));
}

TEST_CASE("exclusion masks by split") {
  const auto ds = testing::toy_dataset(5, {{0, 1}}, {{2}}, {{3}});
  CHECK(exclusion_mask(ds, 0, Split::train) == std::vector<char>{0, 0, 0, 0, 0});
  CHECK(exclusion_mask(ds, 0, Split::validation) == std::vector<char>{1, 1, 0, 0, 0});
  CHECK(exclusion_mask(ds, 0, Split::test) == std::vector<char>{1, 1, 1, 0, 0});
}

TEST_CASE("evaluate reports one record per level with bounded values") {
  auto synth = synth_biased({.users = 40, .items = 30, .latent = 4, .bias = 1.0, .density = 0.2, .seed = 2});
  const auto ds = split(synth.dataset, {}, 1);
  ModelDims d;
  d.users = 40;
  d.items = 30;
  d.latent = 8;
  d.shared = 8;
  d.adapter = 8;
  d.adversary_hidden = 8;
  d.levels = 4;
  CofairModel m(d, 5);
  const auto report = evaluate(m, ds, synth.attributes, 5, Split::test);
  REQUIRE(report.levels.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) {
    const auto& l = report.levels[t];
    CHECK(l.level == t + 1);
    for (double v : {l.recall, l.ndcg, l.dp, l.eopp}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(report.group_sizes[0] + report.group_sizes[1] == evaluated_users(ds, Split::test).size());

  // independent recomputation of one level through recommend()
  const auto users = evaluated_users(ds, Split::test);
  const auto recs = recommend(m, ds, users, 2, 5, Split::test);
  Lists lists, rel;
  std::vector<int> groups;
  for (std::size_t k = 0; k < users.size(); ++k) {
    lists.push_back(recs[k].items);
    rel.push_back(ds.test[users[k]]);
    groups.push_back(synth.attributes.value[users[k]]);
    for (Index i : recs[k].items) {
      CHECK_FALSE(ds.is_train_positive(users[k], i));
      CHECK(std::find(ds.validation[users[k]].begin(), ds.validation[users[k]].end(), i) ==
            ds.validation[users[k]].end());
    }
  }
  const auto rm = ranking_metrics(lists, rel, 5);
  CHECK(report.levels[1].recall == doctest::Approx(rm.recall).epsilon(1e-14));
  CHECK(report.levels[1].ndcg == doctest::Approx(rm.ndcg).epsilon(1e-14));
  CHECK(report.levels[1].dp == doctest::Approx(dp_at_k(lists, groups, 5, 30)).epsilon(1e-14));

  const std::size_t one_level[] = {3};
  const auto single = evaluate(m, ds, synth.attributes, 5, Split::test, one_level);
  REQUIRE(single.levels.size() == 1);
  CHECK(single.levels[0].ndcg == report.levels[2].ndcg);

  m.reset_shared_forward_count();
  evaluate(m, ds, synth.attributes, 5, Split::test);
  CHECK(m.shared_forward_count() == users.size());
}

TEST_CASE("number formatting and curve csv") {
  CHECK(format_sig10(0.1234567890123) == "0.123456789");
  CHECK(format_sig10(2.0) == "2");
  CHECK(round_sig10(1.0 / 3.0) == 0.3333333333);
  MetricsReport r;
  r.k = 10;
  r.levels = {{1, 0.5, 0.25, 1.0 / 3.0, 0.0}, {2, 0.4, 0.2, 0.1, 0.05}};
  const auto csv = curve_csv(r);
  CHECK(csv == "t,recall@10,ndcg@10,dp@10,eopp@10\n1,0.5,0.25,0.3333333333,0\n2,0.4,0.2,0.1,0.05\n");
}
