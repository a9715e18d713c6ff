#include "cofair/config.hpp"

#include <fstream>
#include <set>

#include "cofair/error.hpp"

namespace cofair {

using nlohmann::json;

namespace {

const std::set<std::string> kTrainKeys = {
    "latent", "shared", "adapter", "adversary_hidden", "levels", "lambda0", "eta", "lambda_max", "beta", "lr",
    "adversary_lr", "batch_size", "max_epochs", "patience", "seed", "adversary_steps", "ablation",
    "freeze_backbone", "dropout", "eval_k"};

const std::set<std::string> kRunKeys = {"data", "attrs", "out", "rating_threshold", "val_ratio", "test_ratio",
                                        "split_seed", "k", "split", "port", "static", "tau", "attr_map", "cors"};

template <typename T>
void read(const json& object, const char* key, T& out) {
  auto it = object.find(key);
  if (it == object.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_unsigned()) {
        if (it->is_number_integer() && it->template get<std::int64_t>() >= 0) {
          out = static_cast<T>(it->template get<std::int64_t>());
          return;
        }
        throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(std::string("config key '") + key + "' must be true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
    }
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& object, const std::set<std::string>& a, const std::set<std::string>& b) {
  if (!object.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = object.begin(); it != object.end(); ++it) {
    if (!a.count(it.key()) && !b.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  }
}

void apply_train(const json& o, TrainConfig& c) {
  read(o, "latent", c.latent);
  read(o, "shared", c.shared);
  read(o, "adapter", c.adapter);
  read(o, "adversary_hidden", c.adversary_hidden);
  read(o, "levels", c.levels);
  read(o, "lambda0", c.lambda0);
  read(o, "eta", c.eta);
  read(o, "lambda_max", c.lambda_max);
  read(o, "beta", c.beta);
  read(o, "lr", c.lr);
  read(o, "adversary_lr", c.adversary_lr);
  read(o, "batch_size", c.batch_size);
  read(o, "max_epochs", c.max_epochs);
  read(o, "patience", c.patience);
  read(o, "seed", c.seed);
  read(o, "adversary_steps", c.adversary_steps);
  std::string ablation = ablation_name(c.ablation);
  read(o, "ablation", ablation);
  c.ablation = parse_ablation(ablation);
  read(o, "freeze_backbone", c.freeze_backbone);
  read(o, "dropout", c.dropout);
  read(o, "eval_k", c.eval_k);
}

}  // namespace

json to_json(const TrainConfig& c) {
  return json{{"latent", c.latent},
              {"shared", c.shared},
              {"adapter", c.adapter},
              {"adversary_hidden", c.adversary_hidden},
              {"levels", c.levels},
              {"lambda0", c.lambda0},
              {"eta", c.eta},
              {"lambda_max", c.lambda_max},
              {"beta", c.beta},
              {"lr", c.lr},
              {"adversary_lr", c.adversary_lr},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"seed", c.seed},
              {"adversary_steps", c.adversary_steps},
              {"ablation", ablation_name(c.ablation)},
              {"freeze_backbone", c.freeze_backbone},
              {"dropout", c.dropout},
              {"eval_k", c.eval_k}};
}

TrainConfig train_config_from_json(const json& object) {
  reject_unknown(object, kTrainKeys, {});
  TrainConfig c;
  apply_train(object, c);
  return c;
}

json to_json(const RunConfig& c) {
  json j = to_json(c.train);
  j["data"] = c.data;
  j["attrs"] = c.attrs;
  j["out"] = c.out;
  j["rating_threshold"] = c.rating_threshold;
  j["val_ratio"] = c.ratios.validation;
  j["test_ratio"] = c.ratios.test;
  j["split_seed"] = c.split_seed;
  j["k"] = c.k;
  j["split"] = split_name(c.split);
  j["port"] = c.port;
  j["static"] = c.static_dir;
  j["tau"] = c.tau;
  j["attr_map"] = c.attr_map;
  j["cors"] = c.cors;
  return j;
}

RunConfig run_config_from_json(const json& object, RunConfig c) {
  reject_unknown(object, kTrainKeys, kRunKeys);
  apply_train(object, c.train);
  read(object, "data", c.data);
  read(object, "attrs", c.attrs);
  read(object, "out", c.out);
  read(object, "rating_threshold", c.rating_threshold);
  read(object, "val_ratio", c.ratios.validation);
  read(object, "test_ratio", c.ratios.test);
  c.ratios.train = 1.0 - c.ratios.validation - c.ratios.test;
  read(object, "split_seed", c.split_seed);
  read(object, "k", c.k);
  std::string split = split_name(c.split);
  read(object, "split", split);
  c.split = parse_split(split);
  if (auto it = object.find("port"); it != object.end()) {
    if (!it->is_number_integer()) throw ConfigError("config key 'port' must be an integer");
    c.port = it->get<int>();
  }
  read(object, "static", c.static_dir);
  read(object, "tau", c.tau);
  read(object, "cors", c.cors);
  if (auto it = object.find("attr_map"); it != object.end()) {
    if (!it->is_object()) throw ConfigError("config key 'attr_map' must map symbols to 0 or 1");
    AttributeMap map;
    for (auto e = it->begin(); e != it->end(); ++e) {
      if (!e->is_number_integer() || (e->get<int>() != 0 && e->get<int>() != 1)) {
        throw ConfigError("attr_map value for '" + e.key() + "' must be 0 or 1");
      }
      map[e.key()] = e->get<int>();
    }
    c.attr_map = std::move(map);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json object;
  try {
    object = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(object, std::move(base));
}

}  // namespace cofair
