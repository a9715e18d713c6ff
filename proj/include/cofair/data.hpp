#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cofair {

using Index = std::size_t;

// Raw identifier <-> dense index, in order of first appearance.
class IdMap {
 public:
  Index intern(const std::string& raw);
  std::optional<Index> find(const std::string& raw) const;
  const std::string& raw(Index dense) const { return raw_.at(dense); }
  std::size_t size() const noexcept { return raw_.size(); }

  // Two-column TSV `raw_id<TAB>dense_id`.
  void save(const std::filesystem::path& path) const;
  static IdMap load(const std::filesystem::path& path);

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.raw_ == b.raw_; }

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, Index> dense_;
};

enum class Split { train, validation, test };
const char* split_name(Split split);
Split parse_split(const std::string& name);

// Positive (user, item) interactions. Before split() everything sits in
// `positives`; afterwards train/validation/test partition it per user. Every
// per-user list is sorted ascending and duplicate free.
struct InteractionDataset {
  std::size_t user_count = 0;
  std::size_t item_count = 0;
  std::vector<std::vector<Index>> positives;
  std::vector<std::vector<Index>> train;
  std::vector<std::vector<Index>> validation;
  std::vector<std::vector<Index>> test;
  IdMap user_ids;
  IdMap item_ids;
  bool is_split = false;

  std::size_t interaction_count() const;
  std::size_t count(Split split) const;
  const std::vector<std::vector<Index>>& lists(Split split) const;
  bool is_train_positive(Index user, Index item) const;
  double sparsity() const;
};

struct SensitiveAttributes {
  std::vector<int> value;  // a_u in {0, 1}, indexed by dense user id

  std::size_t group_size(int group) const;
  std::vector<Index> group(int group) const;
};

struct TrainingTriple {
  Index user;
  Index positive;
  Index negative;
};

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Lines `user<TAB>item[<TAB>rating[<TAB>timestamp]]`. Rows whose rating is
// <= threshold are dropped; rows without a rating column are kept. When
// `user_map`/`item_map` are supplied, ids are resolved through them (and new
// ids appended), which makes reload after saving the maps idempotent.
InteractionDataset load_interactions(const std::filesystem::path& path, double rating_threshold = 0.0,
                                     const IdMap* user_map = nullptr, const IdMap* item_map = nullptr);

// Per-user random partition. Users with fewer than 3 positives keep all of
// them in train.
InteractionDataset split(const InteractionDataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

// One triple per train positive, negatives uniform over the user's non-train
// items. Each user draws from its own (epoch_seed, user) stream, so output
// does not depend on iteration order.
std::vector<TrainingTriple> sample_negatives(const InteractionDataset& dataset, std::uint64_t epoch_seed);

using AttributeMap = std::map<std::string, int>;
AttributeMap default_attribute_map();

SensitiveAttributes load_attributes(const std::filesystem::path& path, const InteractionDataset& dataset,
                                    const AttributeMap& symbols = default_attribute_map());

struct SynthOptions {
  std::size_t users = 200;
  std::size_t items = 100;
  std::size_t latent = 8;
  double bias = 0.0;
  double density = 0.1;
  std::uint64_t seed = 1;
};

struct SynthData {
  InteractionDataset dataset;  // not yet split
  SensitiveAttributes attributes;
};

// Group-dependent preferences: group-1 users get latent offset bias * w for a
// fixed random unit direction w; each user's positives are drawn without
// replacement with probability proportional to exp(score).
SynthData synth_biased(const SynthOptions& options);

void write_interactions(const InteractionDataset& dataset, const std::filesystem::path& path);
void write_attributes(const InteractionDataset& dataset, const SensitiveAttributes& attributes,
                      const std::filesystem::path& path);

}  // namespace cofair
