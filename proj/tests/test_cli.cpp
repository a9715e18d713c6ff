#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "cofair/cli.hpp"
#include "cofair/training.hpp"
#include "helpers.hpp"

using namespace cofair;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), {"--log-level", "error"});
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// A synthetic dataset plus a small config file in a fresh directory.
struct Workspace {
  testing::TempDir dir{"cli"};
  std::string data, attrs, config;

  Workspace() {
    REQUIRE(cli({"synth", "--users", "40", "--items", "30", "--latent", "4", "--bias", "2", "--density", "0.2",
                 "--seed", "3", "--out", dir.path().string()})
                .code == 0);
    data = (dir / "interactions.tsv").string();
    attrs = (dir / "attributes.tsv").string();
    config = (dir / "c.json").string();
    testing::write_file(config, R"({"latent": 8, "shared": 8, "adapter": 8, "adversary_hidden": 8,
      "levels": 5, "batch_size": 64, "max_epochs": 3, "patience": 0, "lr": 0.01})");
  }

  std::string train(const std::string& name, std::vector<std::string> extra = {}) {
    const auto out = (dir / name).string();
    std::vector<std::string> args{"train", "--config", config, "--data", data, "--attrs", attrs, "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = cli(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return out;
  }
};

}  // namespace

TEST_CASE("synth is deterministic") {
  testing::TempDir a("s1"), b("s2");
  for (auto* d : {&a, &b}) {
    CHECK(cli({"synth", "--users", "200", "--items", "100", "--bias", "0", "--seed", "1", "--out", d->path().string()})
              .code == 0);
  }
  CHECK(testing::read_file(a / "interactions.tsv") == testing::read_file(b / "interactions.tsv"));
  CHECK(testing::read_file(a / "attributes.tsv") == testing::read_file(b / "attributes.tsv"));
  CHECK_FALSE(testing::read_file(a / "interactions.tsv").empty());
  CHECK(cli({"synth", "--users", "2", "--out", a.path().string()}).code == 2);
}

TEST_CASE("train writes a loadable checkpoint and a history file") {
  Workspace w;
  const auto ckpt = w.train("m.cf");
  const auto loaded = load_checkpoint(ckpt);
  CHECK(loaded.config.levels == 5);
  CHECK(loaded.history.size() == 3);
  save_checkpoint(loaded, w.dir / "again.cf");
  CHECK(testing::read_file(ckpt) == testing::read_file(w.dir / "again.cf"));
  const auto history = lines(testing::read_file(ckpt + ".history.csv"));
  REQUIRE(history.size() == 4);
  CHECK(history[0].rfind("epoch,total,reg,adversary_bce,val_mean_ndcg,rec_1,", 0) == 0);
  CHECK(history[0].find("lambda_5") != std::string::npos);
}

TEST_CASE("train argument errors exit with 2") {
  Workspace w;
  auto r = cli({"train", "--config", w.config, "--data", w.data, "--attrs", (w.dir / "nope.tsv").string(), "--out",
                (w.dir / "x.cf").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("nope.tsv") != std::string::npos);
  CHECK(cli({"train", "--data", w.data, "--attrs", w.attrs}).code == 2);
  CHECK(cli({"train", "--config", w.config, "--data", w.data, "--attrs", w.attrs, "--out", "x.cf", "--levels", "0"})
            .code == 2);
  CHECK(cli({"train", "--config", w.config, "--data", w.data, "--attrs", w.attrs, "--out", "x.cf", "--ablation",
             "bogus"})
            .code == 2);
  testing::write_file(w.dir / "bad.json", R"({"learning_rate": 0.1})");
  CHECK(cli({"train", "--config", (w.dir / "bad.json").string(), "--data", w.data, "--attrs", w.attrs, "--out",
             "x.cf"})
            .code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({}).code == 2);
}

TEST_CASE("flags override the config file") {
  Workspace w;
  const auto ckpt = w.train("o.cf", {"--levels", "2", "--max-epochs", "1", "--beta", "0.25"});
  const auto c = load_checkpoint(ckpt);
  CHECK(c.config.levels == 2);
  CHECK(c.config.beta == 0.25);
  CHECK(c.config.latent == 8);
  CHECK(c.history.size() == 1);
}

TEST_CASE("no_awl history shows a constant lambda vector") {
  Workspace w;
  const auto ckpt = w.train("awl.cf", {"--ablation", "no_awl", "--lambda0", "0.2"});
  const auto history = lines(testing::read_file(ckpt + ".history.csv"));
  std::vector<std::string> header;
  {
    std::istringstream h(history[0]);
    for (std::string f; std::getline(h, f, ',');) header.push_back(f);
  }
  for (std::size_t row = 1; row < history.size(); ++row) {
    std::istringstream in(history[row]);
    std::vector<std::string> f;
    for (std::string x; std::getline(in, x, ',');) f.push_back(x);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c].rfind("lambda_", 0) == 0) CHECK(f[c] == "0.2");
    }
  }
}

TEST_CASE("curve gives one row per level; no_fca rows are identical") {
  Workspace w;
  const auto full = w.train("full.cf");
  auto r = cli({"curve", "--ckpt", full});
  REQUIRE(r.code == 0);
  auto rows = lines(r.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "t,recall@10,ndcg@10,dp@10,eopp@10");
  CHECK(rows[5].rfind("5,", 0) == 0);

  r = cli({"curve", "--ckpt", full, "--k", "5", "--split", "val"});
  CHECK(lines(r.out)[0] == "t,recall@5,ndcg@5,dp@5,eopp@5");

  const auto fca = w.train("fca.cf", {"--ablation", "no_fca"});
  rows = lines(cli({"curve", "--ckpt", fca}).out);
  REQUIRE(rows.size() == 6);
  for (std::size_t t = 2; t <= 5; ++t) CHECK(rows[t].substr(2) == rows[1].substr(2));

  const auto csv = (w.dir / "c.csv").string();
  CHECK(cli({"curve", "--ckpt", full, "--out", csv}).code == 0);
  CHECK(lines(testing::read_file(csv)).size() == 6);
}

TEST_CASE("curve and eval failures") {
  Workspace w;
  CHECK(cli({"curve", "--ckpt", (w.dir / "missing.cf").string()}).code == 2);
  testing::write_file(w.dir / "junk.cf", "COFAIR01garbage");
  auto r = cli({"curve", "--ckpt", (w.dir / "junk.cf").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("checkpoint") != std::string::npos);
  const auto ckpt = w.train("m.cf");
  CHECK(cli({"eval", "--ckpt", ckpt, "--t", "6"}).code == 2);
  CHECK(cli({"eval", "--ckpt", ckpt, "--t", "0"}).code == 2);
  CHECK(cli({"curve", "--ckpt", ckpt, "--split", "everything"}).code == 2);
}

TEST_CASE("eval writes a single-level report matching the curve") {
  Workspace w;
  const auto ckpt = w.train("m.cf");
  const auto r = cli({"eval", "--ckpt", ckpt, "--t", "3"});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  REQUIRE(j["levels"].size() == 1);
  CHECK(j["levels"][0]["t"] == 3);
  CHECK(j["k"] == 10);
  CHECK(j["split"] == "test");
  CHECK(j["checkpoint_hash"] == file_hash(ckpt));
  const auto row = lines(cli({"curve", "--ckpt", ckpt}).out)[3];
  std::istringstream in(row);
  std::vector<double> v;
  for (std::string x; std::getline(in, x, ',');) v.push_back(std::stod(x));
  CHECK(j["levels"][0]["recall"].get<double>() == v[1]);
  CHECK(j["levels"][0]["dp"].get<double>() == v[3]);
}

TEST_CASE("curve reads data through overrides after files move") {
  Workspace w;
  const auto ckpt = w.train("m.cf");
  const auto base = cli({"curve", "--ckpt", ckpt}).out;
  const auto moved_i = (w.dir / "moved_i.tsv").string(), moved_a = (w.dir / "moved_a.tsv").string();
  std::filesystem::rename(w.data, moved_i);
  std::filesystem::rename(w.attrs, moved_a);
  CHECK(cli({"curve", "--ckpt", ckpt}).code != 0);
  const auto r = cli({"curve", "--ckpt", ckpt, "--data", moved_i, "--attrs", moved_a});
  CHECK(r.code == 0);
  CHECK(r.out == base);
}

TEST_CASE("verify lemma and trajectory files") {
  auto r = cli({"verify", "--lemma", "--seed", "7"});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["lemma"]["probes"] == 1000);
  CHECK(j["lemma"]["passed"] == 1000);
  CHECK(j["pass"] == true);

  testing::TempDir dir("traj");
  testing::write_file(dir / "flat.csv", "user,t1,t2,t3\nu1,-0.5,-0.5,-0.5\nu2,-0.1,-0.1,-0.1\n");
  r = cli({"verify", "--monotonicity", "--trajectory", (dir / "flat.csv").string()});
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["monotonicity"]["pass_fraction"] == 1.0);

  testing::write_file(dir / "bad.csv", "a -1 -2\nb -1 0\n");
  r = cli({"verify", "--monotonicity", "--trajectory", (dir / "bad.csv").string()});
  CHECK(r.code == 1);
  j = json::parse(r.out);
  CHECK(j["monotonicity"]["pass_fraction"] == 0.5);
  CHECK(j["monotonicity"]["failing_users"][0]["first_violation"] == 1);

  CHECK(cli({"verify", "--monotonicity", "--trajectory", (dir / "flat.csv").string(), "--tau", "-1"}).code == 2);
  CHECK(cli({"verify", "--monotonicity"}).code == 2);
  CHECK(cli({"verify"}).code == 2);
}

TEST_CASE("verify monotonicity on a checkpoint reports every user") {
  Workspace w;
  const auto ckpt = w.train("fca.cf", {"--ablation", "no_fca"});
  const auto out = (w.dir / "report.json").string();
  const auto r = cli({"verify", "--monotonicity", "--ckpt", ckpt, "--out", out});
  CHECK(r.code == 0);
  const auto j = json::parse(testing::read_file(out));
  CHECK(j["monotonicity"]["users"] == 40);
  CHECK(j["monotonicity"]["pass_fraction"] == 1.0);
  CHECK(j["monotonicity"]["dp"].size() == 5);
}
