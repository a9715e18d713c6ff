#include "cofair/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cofair/config.hpp"
#include "cofair/error.hpp"
#include "cofair/log.hpp"
#include "cofair/metrics.hpp"
#include "cofair/serve.hpp"
#include "cofair/training.hpp"
#include "cofair/verify.hpp"

namespace cofair {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Flags that mirror config keys. Values are kept as text and merged over the
// config file once parsing is done.
struct Overrides {
  std::map<std::string, std::string> values;
  std::set<std::string> strings;

  void add(CLI::App* app, const std::string& key, const std::string& help, bool is_string = false) {
    std::string flag = "--" + key;
    for (auto& c : flag) c = c == '_' ? '-' : c;
    if (is_string) strings.insert(key);
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }

  void add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                const std::string& help) {
    app->add_flag_callback(flag, [this, key, value] { values[key] = value; }, help);
  }

  json to_json() const {
    json out = json::object();
    for (const auto& [key, text] : values) {
      if (strings.count(key)) {
        out[key] = text;
        continue;
      }
      json parsed = json::parse(text, nullptr, false);
      if (parsed.is_discarded() || parsed.is_object() || parsed.is_array()) {
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (text.empty() || *end != '\0') throw UsageError("--" + key + ": '" + text + "' is not a valid value");
        parsed = v;
      }
      out[key] = parsed;
    }
    return out;
  }
};

void add_train_keys(CLI::App* app, Overrides& o) {
  o.add(app, "latent", "latent width d");
  o.add(app, "shared", "shared layer width");
  o.add(app, "adapter", "adapter width");
  o.add(app, "adversary_hidden", "adversary hidden width");
  o.add(app, "levels", "number of fairness levels T");
  o.add(app, "lambda0", "initial fairness weight");
  o.add(app, "eta", "lambda update rate");
  o.add(app, "lambda_max", "upper clamp for lambda");
  o.add(app, "beta", "user-level regularizer weight");
  o.add(app, "lr", "generator learning rate");
  o.add(app, "adversary_lr", "adversary learning rate");
  o.add(app, "batch_size", "triples per batch");
  o.add(app, "max_epochs", "epoch budget");
  o.add(app, "patience", "early stopping patience (0 disables)");
  o.add(app, "seed", "training seed");
  o.add(app, "adversary_steps", "adversary updates per generator update");
  o.add(app, "ablation", "full | no_srl | no_fca | no_awl | no_url", true);
  o.add(app, "dropout", "adversary dropout rate");
  o.add(app, "eval_k", "cutoff for the validation metric");
  o.add_flag(app, "--freeze-backbone", "freeze_backbone", "true", "keep backbone embeddings fixed");
}

void add_data_keys(CLI::App* app, Overrides& o) {
  o.add(app, "data", "interactions TSV", true);
  o.add(app, "attrs", "sensitive attribute TSV", true);
  o.add(app, "rating_threshold", "drop ratings <= threshold");
  o.add(app, "val_ratio", "validation share per user");
  o.add(app, "test_ratio", "test share per user");
  o.add(app, "split_seed", "seed of the per-user split");
}

RunConfig resolve(const std::string& config_path, const Overrides& o) {
  RunConfig rc;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path);
    rc = load_run_config(config_path);
  }
  return run_config_from_json(o.to_json(), rc);
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing " + what + " path");
  if (!fs::is_regular_file(path)) throw UsageError(what + " file not found: " + path);
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("io", "cannot write " + path);
  file << text;
  if (!file) throw Error("io", "failed writing " + path);
}

std::string history_csv(const Checkpoint& ckpt) {
  std::ostringstream out;
  const std::size_t levels = ckpt.config.levels;
  out << "epoch,total,reg,adversary_bce,val_mean_ndcg";
  for (const char* prefix : {"rec_", "fair_", "lambda_", "val_ndcg_"}) {
    for (std::size_t t = 1; t <= levels; ++t) out << ',' << prefix << t;
  }
  out << '\n';
  for (const auto& r : ckpt.history) {
    out << r.epoch << ',' << format_sig10(r.loss.total) << ',' << format_sig10(r.loss.reg) << ','
        << format_sig10(r.adversary_bce) << ',' << format_sig10(r.val_mean_ndcg);
    for (const auto* v : {&r.loss.rec, &r.loss.fair, &r.lambdas, &r.val_ndcg}) {
      for (double x : *v) out << ',' << format_sig10(x);
    }
    out << '\n';
  }
  return out.str();
}

std::string absolute_path(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

int cmd_train(const RunConfig& rc, const std::string& history_path, std::ostream& out) {
  require_file(rc.data, "interactions");
  require_file(rc.attrs, "attributes");
  if (rc.out.empty()) throw UsageError("missing --out checkpoint path");
  rc.train.validate();

  auto dataset = split(load_interactions(rc.data, rc.rating_threshold), rc.ratios, rc.split_seed);
  const auto attributes = load_attributes(rc.attrs, dataset, rc.attr_map);
  log::info("train: " + std::to_string(dataset.user_count) + " users, " + std::to_string(dataset.item_count) +
            " items, " + std::to_string(dataset.interaction_count()) + " interactions");

  auto fill_ref = [&](Checkpoint& ckpt) {
    ckpt.data.interactions = absolute_path(rc.data);
    ckpt.data.attributes = absolute_path(rc.attrs);
    ckpt.data.attribute_symbols = rc.attr_map;
    ckpt.data.rating_threshold = rc.rating_threshold;
    ckpt.data.ratios = rc.ratios;
    ckpt.data.split_seed = rc.split_seed;
  };
  const std::string history = history_path.empty() ? rc.out + ".history.csv" : history_path;

  TrainMonitor monitor;
  monitor.on_epoch = [](const EpochRecord& r) {
    log::debug("epoch " + std::to_string(r.epoch) + ": loss " + format_sig10(r.loss.total) + ", val ndcg " +
               format_sig10(r.val_mean_ndcg));
  };
  Checkpoint ckpt;
  try {
    ckpt = train(rc.train, dataset, attributes, &monitor);
  } catch (const TrainingDiverged& e) {
    Checkpoint last = e.last_good();
    fill_ref(last);
    save_checkpoint(last, rc.out);
    write_text(history, history_csv(last), out);
    throw;
  }
  fill_ref(ckpt);
  save_checkpoint(ckpt, rc.out);
  write_text(history, history_csv(ckpt), out);
  log::info("train: " + std::to_string(ckpt.history.size()) + " epochs, best epoch " +
            std::to_string(ckpt.best_epoch) + ", wrote " + rc.out);
  return 0;
}

struct Loaded {
  Checkpoint ckpt;
  RestoredData data;
  std::string hash;
};

Loaded load_all(const std::string& ckpt_path, const std::string& data, const std::string& attrs) {
  require_file(ckpt_path, "checkpoint");
  if (!data.empty()) require_file(data, "interactions");
  if (!attrs.empty()) require_file(attrs, "attributes");
  Loaded l;
  l.hash = file_hash(ckpt_path);
  l.ckpt = load_checkpoint(ckpt_path);
  l.data = restore_data(l.ckpt.data, data, attrs);
  return l;
}

json report_json(const MetricsReport& report) {
  json levels = json::array();
  for (const auto& m : report.levels) {
    levels.push_back({{"t", m.level},
                      {"recall", round_sig10(m.recall)},
                      {"ndcg", round_sig10(m.ndcg)},
                      {"dp", round_sig10(m.dp)},
                      {"eopp", round_sig10(m.eopp)}});
  }
  return json{{"k", report.k},
              {"split", split_name(report.split)},
              {"group_sizes", report.group_sizes},
              {"levels", std::move(levels)}};
}

// One user per line: a label followed by T losses, separated by commas or
// whitespace. A first line whose values are not numbers is a header.
FairnessTrajectory read_trajectory(const std::string& path) {
  require_file(path, "trajectory");
  std::ifstream in(path);
  FairnessTrajectory tr;
  std::vector<double> values;
  std::size_t width = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    for (auto& c : line) {
      if (c == ',' || c == '\t' || c == '\r') c = ' ';
    }
    std::istringstream fields(line);
    std::string label, token;
    if (!(fields >> label) || label[0] == '#') continue;
    std::vector<double> row;
    bool numeric = true;
    while (fields >> token) {
      char* end = nullptr;
      const double v = std::strtod(token.c_str(), &end);
      if (*end != '\0') numeric = false;
      row.push_back(v);
    }
    if (!numeric) {
      if (rows == 0 && values.empty()) continue;
      throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric loss");
    }
    if (width == 0) width = row.size();
    if (row.size() != width || width == 0) throw DataError(path + ":" + std::to_string(line_no) + ": ragged row");
    values.insert(values.end(), row.begin(), row.end());
    tr.users.push_back(rows++);
  }
  if (rows == 0) throw DataError("trajectory file " + path + " has no rows");
  tr.losses = Tensor2(rows, width, std::move(values));
  return tr;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fairness-controllable recommender: one training run, T selectable fairness levels"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug | info | warn | error | off");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a checkpoint");
  std::string train_config, history_path;
  Overrides train_o;
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_cmd->add_option("--history", history_path, "per-epoch history CSV (default <out>.history.csv)");
  add_train_keys(train_cmd, train_o);
  add_data_keys(train_cmd, train_o);
  train_o.add(train_cmd, "out", "checkpoint path", true);

  // curve
  auto* curve_cmd = app.add_subcommand("curve", "per-level metrics CSV from one checkpoint");
  std::string ckpt_path, data_path, attrs_path, out_path, split_text = "test";
  std::size_t k = 10;
  curve_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  curve_cmd->add_option("--k", k, "cutoff")->check(CLI::PositiveNumber);
  curve_cmd->add_option("--split", split_text, "val | test");
  curve_cmd->add_option("--out", out_path, "output CSV (stdout when omitted)");
  curve_cmd->add_option("--data", data_path, "override the interactions path");
  curve_cmd->add_option("--attrs", attrs_path, "override the attributes path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "metrics of one level as JSON");
  std::size_t level = 0;
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval_cmd->add_option("--t", level, "fairness level")->required();
  eval_cmd->add_option("--k", k, "cutoff")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--split", split_text, "val | test");
  eval_cmd->add_option("--out", out_path, "output JSON (stdout when omitted)");
  eval_cmd->add_option("--data", data_path, "override the interactions path");
  eval_cmd->add_option("--attrs", attrs_path, "override the attributes path");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "theory checks");
  bool lemma = false, monotonicity = false;
  std::uint64_t seed = 7;
  std::size_t probes = 1000;
  double tolerance = 1e-9, tau = 1e-3, threshold = 0.90;
  std::string trajectory_path;
  verify_cmd->add_flag("--lemma", lemma, "constructive DP bound identity on random probes");
  verify_cmd->add_flag("--monotonicity", monotonicity, "per-user progressive fairness audit");
  verify_cmd->add_option("--ckpt", ckpt_path, "checkpoint (monotonicity)");
  verify_cmd->add_option("--trajectory", trajectory_path, "audit a trajectory file instead of a checkpoint");
  verify_cmd->add_option("--seed", seed, "probe seed");
  verify_cmd->add_option("--probes", probes, "number of lemma probes");
  verify_cmd->add_option("--tolerance", tolerance, "lemma identity tolerance");
  verify_cmd->add_option("--tau", tau, "monotonicity slack");
  verify_cmd->add_option("--threshold", threshold, "required pass fraction");
  verify_cmd->add_option("--k", k, "cutoff for the DP sequence")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--split", split_text, "val | test");
  verify_cmd->add_option("--out", out_path, "report JSON (stdout when omitted)");
  verify_cmd->add_option("--data", data_path, "override the interactions path");
  verify_cmd->add_option("--attrs", attrs_path, "override the attributes path");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write a bias-controlled synthetic dataset");
  SynthOptions synth_opt;
  std::string synth_dir = ".";
  synth_cmd->add_option("--users", synth_opt.users, "user count");
  synth_cmd->add_option("--items", synth_opt.items, "item count");
  synth_cmd->add_option("--latent", synth_opt.latent, "latent dimension of the generator");
  synth_cmd->add_option("--bias", synth_opt.bias, "group offset strength");
  synth_cmd->add_option("--density", synth_opt.density, "positives per user / items");
  synth_cmd->add_option("--seed", synth_opt.seed, "seed");
  synth_cmd->add_option("--out", synth_dir, "output directory (interactions.tsv, attributes.tsv)");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API over a frozen checkpoint");
  ServeOptions serve_opt;
  bool no_cors = false;
  serve_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  serve_cmd->add_option("--port", serve_opt.port, "port (0 picks one)");
  serve_cmd->add_option("--host", serve_opt.host, "bind address");
  serve_cmd->add_option("--static", serve_opt.static_dir, "directory served at /");
  serve_cmd->add_option("--k", serve_opt.k, "metrics cutoff")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--split", split_text, "val | test");
  serve_cmd->add_option("--tau", serve_opt.tau, "monotonicity slack");
  serve_cmd->add_flag("--no-cors", no_cors, "omit permissive CORS headers");
  serve_cmd->add_option("--data", data_path, "override the interactions path");
  serve_cmd->add_option("--attrs", attrs_path, "override the attributes path");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    static const std::map<std::string, log::Level> levels = {{"debug", log::Level::debug},
                                                              {"info", log::Level::info},
                                                              {"warn", log::Level::warn},
                                                              {"error", log::Level::error},
                                                              {"off", log::Level::off}};
    if (!levels.count(log_level)) throw UsageError("unknown log level '" + log_level + "'");
    log::set_level(levels.at(log_level));
    const Split split_choice = parse_split(split_text);

    if (train_cmd->parsed()) {
      return cmd_train(resolve(train_config, train_o), history_path, out);
    }

    if (curve_cmd->parsed()) {
      const auto l = load_all(ckpt_path, data_path, attrs_path);
      const auto report = evaluate(l.ckpt.model, l.data.dataset, l.data.attributes, k, split_choice);
      write_text(out_path, curve_csv(report), out);
      return 0;
    }

    if (eval_cmd->parsed()) {
      require_file(ckpt_path, "checkpoint");
      auto l = load_all(ckpt_path, data_path, attrs_path);
      if (level < 1 || level > l.ckpt.model.levels()) {
        throw UsageError("level " + std::to_string(level) + " outside [1, " + std::to_string(l.ckpt.model.levels()) +
                         "]");
      }
      const std::size_t wanted[] = {level};
      const auto report = evaluate(l.ckpt.model, l.data.dataset, l.data.attributes, k, split_choice, wanted);
      json j = report_json(report);
      j["checkpoint_hash"] = l.hash;
      write_text(out_path, j.dump(2) + "\n", out);
      return 0;
    }

    if (verify_cmd->parsed()) {
      if (!lemma && !monotonicity) throw UsageError("verify needs --lemma and/or --monotonicity");
      if (!(tau >= 0.0)) throw UsageError("--tau must be >= 0");
      if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
      if (!(tolerance > 0.0)) throw UsageError("--tolerance must be > 0");
      if (monotonicity && ckpt_path.empty() && trajectory_path.empty()) {
        throw UsageError("--monotonicity needs --ckpt (or --trajectory)");
      }
      json report = json::object();
      bool pass = true;
      if (lemma) {
        const auto suite = lemma1_suite(seed, probes, tolerance);
        report["lemma"] = {{"seed", seed},
                           {"probes", suite.probes},
                           {"passed", suite.passed},
                           {"max_identity_error", suite.max_identity_error},
                           {"tolerance", suite.tolerance},
                           {"pass", suite.pass()}};
        pass = pass && suite.pass();
      }
      if (monotonicity) {
        MonotonicityAudit audit;
        std::vector<std::string> labels;
        if (!trajectory_path.empty()) {
          const auto tr = read_trajectory(trajectory_path);
          audit = audit_trajectory(tr, tau);
          for (Index u : tr.users) labels.push_back(std::to_string(u));
        } else {
          const auto l = load_all(ckpt_path, data_path, attrs_path);
          audit = monotonicity_audit(l.ckpt.model, l.data.dataset, l.data.attributes, tau, k, split_choice);
          labels = l.ckpt.data.user_ids;
          report["checkpoint_hash"] = l.hash;
        }
        audit.threshold = threshold;
        json failing = json::array();
        for (std::size_t r = 0; r < audit.user_pass.size(); ++r) {
          if (!audit.user_pass[r]) failing.push_back({{"user", labels.at(r)}, {"first_violation", audit.first_violation[r]}});
        }
        report["monotonicity"] = {{"tau", tau},
                                  {"users", audit.user_pass.size()},
                                  {"pass_fraction", round_sig10(audit.pass_fraction)},
                                  {"threshold", threshold},
                                  {"dp", json::array()},
                                  {"dp_non_increasing", audit.dp_non_increasing},
                                  {"failing_users", std::move(failing)},
                                  {"pass", audit.pass()}};
        for (double d : audit.dp) report["monotonicity"]["dp"].push_back(round_sig10(d));
        pass = pass && audit.pass();
      }
      report["pass"] = pass;
      write_text(out_path, report.dump(2) + "\n", out);
      return pass ? 0 : 1;
    }

    if (synth_cmd->parsed()) {
      const auto data = synth_biased(synth_opt);
      fs::create_directories(synth_dir);
      write_interactions(data.dataset, fs::path(synth_dir) / "interactions.tsv");
      write_attributes(data.dataset, data.attributes, fs::path(synth_dir) / "attributes.tsv");
      log::info("synth: wrote " + std::to_string(data.dataset.interaction_count()) + " interactions to " + synth_dir);
      return 0;
    }

    if (serve_cmd->parsed()) {
      serve_opt.split = split_choice;
      serve_opt.cors = !no_cors;
      if (serve_opt.port < 0 || serve_opt.port > 65535) throw UsageError("--port must lie in [0, 65535]");
      if (!(serve_opt.tau >= 0.0)) throw UsageError("--tau must be >= 0");
      if (!serve_opt.static_dir.empty() && !fs::is_directory(serve_opt.static_dir)) {
        throw UsageError("static directory not found: " + serve_opt.static_dir);
      }
      auto l = load_all(ckpt_path, data_path, attrs_path);
      const ServeState state(std::move(l.ckpt), std::move(l.data.dataset), std::move(l.data.attributes), l.hash,
                             serve_opt);
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      Server server(state, serve_opt);
      const int port = server.start();
      out << "listening on " << serve_opt.host << ':' << port << std::endl;
      int received = 0;
      sigwait(&signals, &received);
      server.stop();
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << " (last good checkpoint written)\n";
    return 1;
  } catch (const Error& e) {
    err << "error [" << e.kind() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cofair
