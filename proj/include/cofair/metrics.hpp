#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cofair/data.hpp"
#include "cofair/model.hpp"
#include "cofair/objective.hpp"

namespace cofair {

struct RankingScores {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;  // users with at least one relevant item
};

// Users whose relevant set is empty are skipped. Only the first k entries of
// each list count. NDCG uses binary gains, 1/log2(rank + 1) discounts and an
// ideal DCG truncated at min(k, |relevant|).
RankingScores ranking_metrics(std::span<const std::vector<Index>> lists,
                              std::span<const std::vector<Index>> relevant, std::size_t k);

// Total-variation distance between the two groups' item-exposure
// distributions over their top-k lists.
double dp_at_k(std::span<const std::vector<Index>> lists, std::span<const int> groups, std::size_t k,
               std::size_t items);

// Total-variation distance between the groups' hit distributions (items that
// are both recommended and relevant). One group without hits gives 1, both 0.
double eopp_at_k(std::span<const std::vector<Index>> lists, std::span<const std::vector<Index>> relevant,
                 std::span<const int> groups, std::size_t k, std::size_t items);

using Predictor = std::function<double(std::span<const double>)>;

// |mean_{group 1} G(e) - mean_{group 0} G(e)| over the rows of `embeddings`.
double score_gap_dp(const Predictor& predictor, const Tensor2& embeddings, std::span<const int> groups);

// Per-user -bce of the eval-mode adversary at every level.
FairnessTrajectory trajectory_eval(const CofairModel& model, const SensitiveAttributes& attributes,
                                   std::span<const Index> users);

struct LevelMetrics {
  std::size_t level = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  double dp = 0.0;
  double eopp = 0.0;
};

struct MetricsReport {
  std::size_t k = 10;
  Split split = Split::test;
  std::vector<LevelMetrics> levels;
  std::array<std::size_t, 2> group_sizes{};  // evaluated users per group
};

// Items a user may not be recommended when evaluating `split`: train
// positives, plus validation positives for the test split.
std::vector<char> exclusion_mask(const InteractionDataset& dataset, Index user, Split split);

// Top-k lists, indexed [level position][user position], for the given
// levels. The shared layer runs once per user chunk.
std::vector<std::vector<std::vector<Index>>> level_topk_lists(const CofairModel& model,
                                                              const InteractionDataset& dataset,
                                                              std::span<const Index> users,
                                                              std::span<const std::size_t> levels, std::size_t k,
                                                              Split split);

// Users with at least one positive in `split`, ascending.
std::vector<Index> evaluated_users(const InteractionDataset& dataset, Split split);

// Full-ranking evaluation. `levels` empty means every level; the shared layer
// runs once per user chunk regardless of how many levels are requested.
MetricsReport evaluate(const CofairModel& model, const InteractionDataset& dataset,
                       const SensitiveAttributes& attributes, std::size_t k, Split split,
                       std::span<const std::size_t> levels = {});

// Top-k lists for `users` at one level under the split's exclusion rule.
std::vector<TopK> recommend(const CofairModel& model, const InteractionDataset& dataset,
                            std::span<const Index> users, std::size_t level, std::size_t k, Split split);

// `%.10g`
std::string format_sig10(double value);
// Rounds to 10 significant digits (the value `format_sig10` would print).
double round_sig10(double value);

// Header `t,recall@K,ndcg@K,dp@K,eopp@K`, one row per level.
std::string curve_csv(const MetricsReport& report);

}  // namespace cofair
