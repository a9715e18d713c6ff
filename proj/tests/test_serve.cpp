#include <doctest.h>

#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cofair/metrics.hpp"
#include "cofair/serve.hpp"
#include "cofair/verify.hpp"
#include "helpers.hpp"

using namespace cofair;
using nlohmann::json;

namespace {

struct Bundle {
  Checkpoint ckpt;
  InteractionDataset dataset;
  SensitiveAttributes attributes;
};

Bundle trained(Ablation mode, std::size_t items = 30) {
  Bundle b;
  auto synth = synth_biased({.users = 30, .items = items, .latent = 4, .bias = 2.0, .density = 0.5, .seed = 8});
  b.dataset = split(synth.dataset, {}, 1);
  b.attributes = synth.attributes;
  TrainConfig c;
  c.latent = c.shared = c.adapter = c.adversary_hidden = 8;
  c.levels = 5;
  c.batch_size = 64;
  c.max_epochs = 3;
  c.patience = 0;
  c.ablation = mode;
  c.lr = 1e-2;
  b.ckpt = train(c, b.dataset, b.attributes);
  return b;
}

ServeState state_of(const Bundle& b, ServeOptions opt = {}) {
  return ServeState(b.ckpt, b.dataset, b.attributes, "00000000deadbeef", opt);
}

json body(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST_CASE("levels descriptor is stable") {
  const auto b = trained(Ablation::full);
  const auto s = state_of(b);
  const auto r = s.levels();
  CHECK(r.status == 200);
  const auto j = body(r);
  CHECK(j["T"] == 5);
  CHECK(j["lambdas"].size() == 5);
  CHECK(j["checkpoint_hash"] == "00000000deadbeef");
  CHECK(s.levels().body == r.body);
}

TEST_CASE("no_awl lambdas all equal lambda0") {
  const auto s = state_of(trained(Ablation::no_awl));
  for (const auto& l : body(s.levels())["lambdas"]) CHECK(l.get<double>() == 0.1);
}

TEST_CASE("recommend validates its query") {
  const auto s = state_of(trained(Ablation::full));
  CHECK(s.recommend({{"t", "1"}}).status == 400);
  CHECK(s.recommend({{"user", "nobody"}, {"t", "1"}}).status == 404);
  CHECK(s.recommend({{"user", "u0"}, {"t", "0"}}).status == 400);
  CHECK(s.recommend({{"user", "u0"}, {"t", "6"}}).status == 400);
  CHECK(s.recommend({{"user", "u0"}, {"t", "x"}}).status == 400);
  CHECK(s.recommend({{"user", "u0"}}).status == 400);
  CHECK(s.recommend({{"user", "u0"}, {"t", "2"}, {"k", "0"}}).status == 400);
  const auto ok = s.recommend({{"user", "u0"}, {"t", "2"}, {"k", "4"}});
  CHECK(ok.status == 200);
  CHECK(body(ok)["items"].size() == 4);
  CHECK(s.recommend({{"user", "u0"}, {"t", "2"}, {"k", "4"}}).body == ok.body);
  CHECK(body(s.recommend({{"user", "u0"}, {"t", "2"}}))["items"].size() == 10);
}

TEST_CASE("recommend on six items equals a brute-force sort") {
  const auto b = trained(Ablation::full, 6);
  const auto s = state_of(b);
  for (Index u = 0; u < b.dataset.user_count; ++u) {
    const std::string raw = b.dataset.user_ids.raw(u);
    const auto j = body(s.recommend({{"user", raw}, {"t", "3"}, {"k", "3"}}));
    std::vector<std::pair<double, Index>> cand;
    for (Index i = 0; i < 6; ++i) {
      const auto& tr = b.dataset.train[u];
      const auto& va = b.dataset.validation[u];
      if (std::find(tr.begin(), tr.end(), i) != tr.end() || std::find(va.begin(), va.end(), i) != va.end()) continue;
      cand.push_back({score(b.ckpt.model, u, i, 3), i});
    }
    std::sort(cand.begin(), cand.end(), [](auto& x, auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
    cand.resize(std::min<std::size_t>(3, cand.size()));
    REQUIRE(j["items"].size() == cand.size());
    for (std::size_t r = 0; r < cand.size(); ++r) {
      CHECK(j["items"][r]["item"] == b.dataset.item_ids.raw(cand[r].second));
      CHECK(j["items"][r]["score"].get<double>() == round_sig10(cand[r].first));
    }
  }
}

TEST_CASE("no_fca lists agree across levels") {
  const auto s = state_of(trained(Ablation::no_fca));
  CHECK(body(s.recommend({{"user", "u3"}, {"t", "1"}}))["items"] == body(s.recommend({{"user", "u3"}, {"t", "5"}}))["items"]);
  for (const auto& x : body(s.trajectory({{"user", "u3"}}))["fair_loss"]) {
    CHECK(x == body(s.trajectory({{"user", "u3"}}))["fair_loss"][0]);
  }
  CHECK(body(s.trajectory({{"user", "u3"}}))["monotone"] == true);
}

TEST_CASE("metrics match the curve computation") {
  const auto b = trained(Ablation::full);
  const auto s = state_of(b);
  CHECK(s.metrics({{"k", "5"}}).status == 400);
  const auto r = s.metrics({{"k", "10"}});
  CHECK(r.status == 200);
  const auto j = body(r);
  REQUIRE(j.size() == 5);
  const auto report = evaluate(b.ckpt.model, b.dataset, b.attributes, 10, Split::test);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(j[t]["t"] == t + 1);
    CHECK(j[t]["recall"].get<double>() == round_sig10(report.levels[t].recall));
    CHECK(j[t]["dp"].get<double>() == round_sig10(report.levels[t].dp));
    for (const char* key : {"recall", "ndcg", "dp", "eopp"}) {
      CHECK(j[t][key].get<double>() >= 0.0);
      CHECK(j[t][key].get<double>() <= 1.0);
    }
  }
  CHECK(s.metrics({}).body == r.body);
}

TEST_CASE("trajectory rows") {
  auto b = trained(Ablation::full);
  {
    const auto s = state_of(b);
    CHECK(s.trajectory({{"user", "ghost"}}).status == 404);
    CHECK(s.trajectory({}).status == 400);
    const std::vector<Index> users{4};
    const auto tr = trajectory_eval(b.ckpt.model, b.attributes, users);
    const auto j = body(s.trajectory({{"user", b.dataset.user_ids.raw(4)}}));
    REQUIRE(j["fair_loss"].size() == 5);
    for (std::size_t t = 0; t < 5; ++t) CHECK(std::abs(j["fair_loss"][t].get<double>() - tr.losses(0, t)) < 1e-9);
    CHECK(j["monotone"] == row_monotone(tr.losses.row(0), 1e-3));
  }
  b.ckpt.model.adversary = CofairModel::zeros(b.ckpt.model.dims()).adversary;
  const auto zero = state_of(b);
  const auto j = body(zero.trajectory({{"user", "u1"}}));
  for (const auto& x : j["fair_loss"]) CHECK(std::abs(x.get<double>() + std::log(2.0)) < 1e-9);
  CHECK(j["monotone"] == true);
}

TEST_CASE("live server answers, sets CORS and serves static files") {
  const auto b = trained(Ablation::full);
  testing::TempDir dir("static");
  testing::write_file(dir / "index.html", "<html>panel</html>");
  ServeOptions opt;
  opt.port = 0;
  opt.static_dir = dir.path().string();
  const auto s = state_of(b, opt);
  Server server(s, opt);
  const int port = server.start();
  REQUIRE(port > 0);

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/api/levels");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == s.levels().body);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(res->get_header_value("Content-Type").find("application/json") != std::string::npos);

  res = client.Get("/api/recommend?user=u2&t=4&k=3");
  REQUIRE(res);
  CHECK(res->body == s.recommend({{"user", "u2"}, {"t", "4"}, {"k", "3"}}).body);
  res = client.Get("/api/recommend?user=nobody&t=1");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = client.Get("/api/metrics?k=7");
  REQUIRE(res);
  CHECK(res->status == 400);
  res = client.Get("/api/trajectory?user=u2");
  REQUIRE(res);
  CHECK(res->status == 200);

  res = client.Options("/api/levels");
  REQUIRE(res);
  CHECK(res->status == 204);

  res = client.Get("/index.html");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == "<html>panel</html>");

  // concurrent identical requests see identical bodies
  std::vector<std::string> bodies(8);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      if (auto r = c.Get("/api/metrics")) bodies[i] = r->body;
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& x : bodies) CHECK(x == s.metrics({}).body);
  server.stop();
}

TEST_CASE("cors can be turned off") {
  const auto b = trained(Ablation::full);
  ServeOptions opt;
  opt.port = 0;
  opt.cors = false;
  const auto s = state_of(b, opt);
  Server server(s, opt);
  const int port = server.start();
  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/api/levels");
  REQUIRE(res);
  CHECK_FALSE(res->has_header("Access-Control-Allow-Origin"));
  server.stop();
}
