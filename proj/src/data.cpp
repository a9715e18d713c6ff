#include "cofair/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cofair/error.hpp"
#include "cofair/log.hpp"
#include "cofair/rng.hpp"

namespace cofair {

Index IdMap::intern(const std::string& raw) {
  auto [it, inserted] = dense_.try_emplace(raw, raw_.size());
  if (inserted) raw_.push_back(raw);
  return it->second;
}

std::optional<Index> IdMap::find(const std::string& raw) const {
  auto it = dense_.find(raw);
  if (it == dense_.end()) return std::nullopt;
  return it->second;
}

void IdMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write id map '" + path.string() + "'");
  for (Index i = 0; i < raw_.size(); ++i) out << raw_[i] << '\t' << i << '\n';
  if (!out) throw DataError("failed writing id map '" + path.string() + "'");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::ifstream open_input(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string("cannot open ") + what + " file '" + path.string() + "'");
  return in;
}

}  // namespace

IdMap IdMap::load(const std::filesystem::path& path) {
  auto in = open_input(path, "id map");
  IdMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2 || fields[0].empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected raw_id<TAB>dense_id");
    }
    std::size_t dense = 0;
    try {
      dense = std::stoull(fields[1]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad dense id '" + fields[1] + "'");
    }
    if (dense != map.size() || map.find(fields[0])) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": dense ids must be 0..n-1 in order");
    }
    map.intern(fields[0]);
  }
  return map;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val" || name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::size_t InteractionDataset::interaction_count() const {
  std::size_t n = 0;
  for (const auto& p : positives) n += p.size();
  return n;
}

std::size_t InteractionDataset::count(Split split) const {
  std::size_t n = 0;
  for (const auto& p : lists(split)) n += p.size();
  return n;
}

const std::vector<std::vector<Index>>& InteractionDataset::lists(Split split) const {
  switch (split) {
    case Split::train: return train;
    case Split::validation: return validation;
    case Split::test: return test;
  }
  return train;
}

bool InteractionDataset::is_train_positive(Index user, Index item) const {
  const auto& items = train.at(user);
  return std::binary_search(items.begin(), items.end(), item);
}

double InteractionDataset::sparsity() const {
  const double cells = static_cast<double>(user_count) * static_cast<double>(item_count);
  return cells == 0.0 ? 0.0 : 1.0 - static_cast<double>(interaction_count()) / cells;
}

std::size_t SensitiveAttributes::group_size(int g) const {
  return static_cast<std::size_t>(std::count(value.begin(), value.end(), g));
}

std::vector<Index> SensitiveAttributes::group(int g) const {
  std::vector<Index> out;
  for (Index u = 0; u < value.size(); ++u) {
    if (value[u] == g) out.push_back(u);
  }
  return out;
}

InteractionDataset load_interactions(const std::filesystem::path& path, double rating_threshold,
                                     const IdMap* user_map, const IdMap* item_map) {
  auto in = open_input(path, "interactions");
  InteractionDataset ds;
  if (user_map) ds.user_ids = *user_map;
  if (item_map) ds.item_ids = *item_map;

  std::vector<std::pair<Index, Index>> pairs;
  std::string line;
  std::size_t line_no = 0;
  std::size_t non_empty = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    ++non_empty;
    const auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > 4 || fields[0].empty() || fields[1].empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed line, expected user_id<TAB>item_id[<TAB>rating[<TAB>timestamp]]");
    }
    if (fields.size() >= 3) {
      double rating = 0.0;
      std::size_t used = 0;
      try {
        rating = std::stod(fields[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != fields[2].size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad rating '" + fields[2] + "'");
      }
      if (rating <= rating_threshold) continue;
    }
    pairs.emplace_back(ds.user_ids.intern(fields[0]), ds.item_ids.intern(fields[1]));
  }
  if (non_empty == 0) throw DataError("interactions file '" + path.string() + "' is empty");
  if (pairs.empty()) throw DataError("no interactions above rating threshold in '" + path.string() + "'");

  ds.user_count = ds.user_ids.size();
  ds.item_count = ds.item_ids.size();
  ds.positives.assign(ds.user_count, {});
  for (const auto& [u, i] : pairs) ds.positives[u].push_back(i);
  for (auto& items : ds.positives) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
  }
  ds.train = ds.positives;
  ds.validation.assign(ds.user_count, {});
  ds.test.assign(ds.user_count, {});
  return ds;
}

InteractionDataset split(const InteractionDataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.validation <= 0.0 || ratios.test <= 0.0) {
    throw ConfigError("split ratios must all be positive");
  }
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  InteractionDataset out = dataset;
  out.train.assign(out.user_count, {});
  out.validation.assign(out.user_count, {});
  out.test.assign(out.user_count, {});
  for (Index u = 0; u < out.user_count; ++u) {
    std::vector<Index> items = dataset.positives[u];
    const std::size_t n = items.size();
    if (n < 3) {
      out.train[u] = std::move(items);
      continue;
    }
    Rng rng = Rng::derive(seed, Stream::split, {u});
    shuffle(items.begin(), items.end(), rng);
    const auto nd = static_cast<double>(n);
    auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(nd * ratios.validation)));
    auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(nd * ratios.test)));
    while (n_val + n_test > n - 1) {
      if (n_test >= n_val && n_test > 1) {
        --n_test;
      } else if (n_val > 1) {
        --n_val;
      } else {
        break;
      }
    }
    out.test[u].assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.validation[u].assign(items.begin() + static_cast<std::ptrdiff_t>(n_test),
                             items.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    out.train[u].assign(items.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), items.end());
    std::sort(out.test[u].begin(), out.test[u].end());
    std::sort(out.validation[u].begin(), out.validation[u].end());
    std::sort(out.train[u].begin(), out.train[u].end());
  }
  out.is_split = true;
  return out;
}

std::vector<TrainingTriple> sample_negatives(const InteractionDataset& dataset, std::uint64_t epoch_seed) {
  std::vector<TrainingTriple> triples;
  triples.reserve(dataset.count(Split::train));
  std::size_t nonempty = 0;
  for (Index u = 0; u < dataset.user_count; ++u) {
    const auto& pos = dataset.train[u];
    if (pos.empty()) continue;
    ++nonempty;
    if (pos.size() >= dataset.item_count) {
      log::warn("user '" + dataset.user_ids.raw(u) + "' has interacted with every item; no negatives, skipped");
      continue;
    }
    Rng rng = Rng::derive(epoch_seed, Stream::negatives, {u});
    const bool dense = pos.size() * 2 > dataset.item_count;
    std::vector<Index> complement;
    if (dense) {
      complement.reserve(dataset.item_count - pos.size());
      for (Index j = 0; j < dataset.item_count; ++j) {
        if (!std::binary_search(pos.begin(), pos.end(), j)) complement.push_back(j);
      }
    }
    for (Index i : pos) {
      Index j = 0;
      if (dense) {
        j = complement[rng.below(complement.size())];
      } else {
        do {
          j = rng.below(dataset.item_count);
        } while (std::binary_search(pos.begin(), pos.end(), j));
      }
      triples.push_back({u, i, j});
    }
  }
  if (nonempty == 0) throw DataError("sample_negatives: train split is empty");
  return triples;
}

AttributeMap default_attribute_map() { return {{"0", 0}, {"1", 1}, {"M", 0}, {"F", 1}}; }

SensitiveAttributes load_attributes(const std::filesystem::path& path, const InteractionDataset& dataset,
                                    const AttributeMap& symbols) {
  auto in = open_input(path, "attributes");
  SensitiveAttributes attrs;
  attrs.value.assign(dataset.user_count, -1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 2 || fields[0].empty()) throw DataError(where + ": expected user_id<TAB>attribute");
    const auto sym = symbols.find(fields[1]);
    if (sym == symbols.end() || (sym->second != 0 && sym->second != 1)) {
      throw DataError(where + ": unknown attribute symbol '" + fields[1] + "'");
    }
    const auto u = dataset.user_ids.find(fields[0]);
    if (!u) throw DataError(where + ": user '" + fields[0] + "' has attributes but no interactions");
    attrs.value[*u] = sym->second;
  }
  for (Index u = 0; u < dataset.user_count; ++u) {
    if (attrs.value[u] < 0) throw DataError("attributes file '" + path.string() + "' is missing user '" +
                                            dataset.user_ids.raw(u) + "'");
  }
  const auto g0 = attrs.group_size(0), g1 = attrs.group_size(1);
  if (g0 == 0 || g1 == 0) {
    throw DataError("attribute group " + std::string(g0 == 0 ? "0" : "1") + " is empty in '" + path.string() + "'");
  }
  log::info("attributes: group 0 = " + std::to_string(g0) + " users, group 1 = " + std::to_string(g1) + " users");
  return attrs;
}

SynthData synth_biased(const SynthOptions& opt) {
  if (opt.users < 4 || opt.items < 4) throw ConfigError("synth: need at least 4 users and 4 items");
  if (opt.latent < 1) throw ConfigError("synth: latent dimension must be >= 1");
  if (!(opt.bias >= 0.0)) throw ConfigError("synth: bias strength must be >= 0");
  if (!(opt.density > 0.0 && opt.density < 1.0)) throw ConfigError("synth: density must lie in (0, 1)");
  const auto per_user = static_cast<std::size_t>(std::llround(opt.density * static_cast<double>(opt.items)));
  if (per_user < 3) throw ConfigError("synth: density yields fewer than 3 positives per user");
  if (per_user >= opt.items) throw ConfigError("synth: density leaves no negative items");

  Rng rng = Rng::derive(opt.seed, Stream::synth);
  const std::size_t k = opt.latent;
  std::vector<double> direction(k);
  double norm = 0.0;
  for (auto& x : direction) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : direction) x /= norm;

  std::vector<double> user_latent(opt.users * k), item_latent(opt.items * k);
  for (auto& x : user_latent) x = rng.normal();
  for (auto& x : item_latent) x = rng.normal();

  SynthData out;
  auto& ds = out.dataset;
  out.attributes.value.resize(opt.users);
  for (Index u = 0; u < opt.users; ++u) {
    out.attributes.value[u] = static_cast<int>(u % 2);
    ds.user_ids.intern("u" + std::to_string(u));
    if (out.attributes.value[u] == 1) {
      for (std::size_t c = 0; c < k; ++c) user_latent[u * k + c] += opt.bias * direction[c];
    }
  }
  for (Index i = 0; i < opt.items; ++i) ds.item_ids.intern("i" + std::to_string(i));

  ds.user_count = opt.users;
  ds.item_count = opt.items;
  ds.positives.assign(opt.users, {});
  std::vector<std::pair<double, Index>> keyed(opt.items);
  for (Index u = 0; u < opt.users; ++u) {
    for (Index i = 0; i < opt.items; ++i) {
      double score = 0.0;
      for (std::size_t c = 0; c < k; ++c) score += user_latent[u * k + c] * item_latent[i * k + c];
      // Gumbel-top-n: sampling without replacement proportional to exp(score).
      double v = rng.uniform();
      if (v == 0.0) v = 0x1.0p-54;
      const double gumbel = -std::log(-std::log(v));
      keyed[i] = {score + gumbel, i};
    }
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(per_user), keyed.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    auto& items = ds.positives[u];
    for (std::size_t r = 0; r < per_user; ++r) items.push_back(keyed[r].second);
    std::sort(items.begin(), items.end());
  }
  ds.train = ds.positives;
  ds.validation.assign(opt.users, {});
  ds.test.assign(opt.users, {});
  return out;
}

void write_interactions(const InteractionDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write interactions '" + path.string() + "'");
  for (Index u = 0; u < dataset.user_count; ++u) {
    for (Index i : dataset.positives[u]) out << dataset.user_ids.raw(u) << '\t' << dataset.item_ids.raw(i) << "\t1\n";
  }
  if (!out) throw DataError("failed writing interactions '" + path.string() + "'");
}

void write_attributes(const InteractionDataset& dataset, const SensitiveAttributes& attributes,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write attributes '" + path.string() + "'");
  for (Index u = 0; u < dataset.user_count; ++u) out << dataset.user_ids.raw(u) << '\t' << attributes.value.at(u) << '\n';
  if (!out) throw DataError("failed writing attributes '" + path.string() + "'");
}

}  // namespace cofair
