#include "cofair/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cofair/diffmath.hpp"
#include "cofair/error.hpp"

namespace cofair {

RankingScores ranking_metrics(std::span<const std::vector<Index>> lists,
                              std::span<const std::vector<Index>> relevant, std::size_t k) {
  if (lists.size() != relevant.size()) {
    throw ShapeError("ranking_metrics: " + std::to_string(lists.size()) + " lists for " +
                     std::to_string(relevant.size()) + " relevant sets");
  }
  RankingScores out;
  double recall_sum = 0.0, ndcg_sum = 0.0;
  for (std::size_t u = 0; u < lists.size(); ++u) {
    const auto& rel = relevant[u];
    if (rel.empty()) continue;
    const std::size_t depth = std::min(k, lists[u].size());
    std::size_t hits = 0;
    double dcg = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (std::find(rel.begin(), rel.end(), lists[u][r]) != rel.end()) {
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      }
    }
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, rel.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    recall_sum += static_cast<double>(hits) / static_cast<double>(rel.size());
    ndcg_sum += dcg / idcg;
    ++out.users;
  }
  if (out.users > 0) {
    out.recall = recall_sum / static_cast<double>(out.users);
    out.ndcg = ndcg_sum / static_cast<double>(out.users);
  }
  return out;
}

namespace {

void check_groups(std::span<const std::vector<Index>> lists, std::span<const int> groups) {
  if (lists.size() != groups.size()) {
    throw ShapeError("group metric: " + std::to_string(lists.size()) + " lists for " +
                     std::to_string(groups.size()) + " group labels");
  }
  std::size_t n[2] = {0, 0};
  for (int g : groups) {
    if (g != 0 && g != 1) throw DataError("group metric: label " + std::to_string(g) + " outside {0, 1}");
    ++n[g];
  }
  if (n[0] == 0 || n[1] == 0) {
    throw DataError("group metric: group " + std::string(n[0] == 0 ? "0" : "1") + " has no evaluated users");
  }
}

double total_variation(const std::vector<double>& a, double a_total, const std::vector<double>& b, double b_total) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] / a_total - b[i] / b_total);
  return 0.5 * sum;
}

}  // namespace

double dp_at_k(std::span<const std::vector<Index>> lists, std::span<const int> groups, std::size_t k,
               std::size_t items) {
  check_groups(lists, groups);
  std::vector<double> exposure[2] = {std::vector<double>(items, 0.0), std::vector<double>(items, 0.0)};
  double total[2] = {0.0, 0.0};
  for (std::size_t u = 0; u < lists.size(); ++u) {
    const std::size_t depth = std::min(k, lists[u].size());
    for (std::size_t r = 0; r < depth; ++r) {
      const Index item = lists[u][r];
      if (item >= items) throw RangeError("dp_at_k: item " + std::to_string(item) + " out of range");
      exposure[groups[u]][item] += 1.0;
      total[groups[u]] += 1.0;
    }
  }
  if (total[0] == 0.0 && total[1] == 0.0) return 0.0;
  if (total[0] == 0.0 || total[1] == 0.0) return 1.0;
  return total_variation(exposure[0], total[0], exposure[1], total[1]);
}

double eopp_at_k(std::span<const std::vector<Index>> lists, std::span<const std::vector<Index>> relevant,
                 std::span<const int> groups, std::size_t k, std::size_t items) {
  check_groups(lists, groups);
  if (relevant.size() != lists.size()) throw ShapeError("eopp_at_k: relevant sets do not match lists");
  std::vector<double> hits[2] = {std::vector<double>(items, 0.0), std::vector<double>(items, 0.0)};
  double total[2] = {0.0, 0.0};
  for (std::size_t u = 0; u < lists.size(); ++u) {
    const std::size_t depth = std::min(k, lists[u].size());
    const auto& rel = relevant[u];
    for (std::size_t r = 0; r < depth; ++r) {
      const Index item = lists[u][r];
      if (item >= items) throw RangeError("eopp_at_k: item " + std::to_string(item) + " out of range");
      if (std::find(rel.begin(), rel.end(), item) == rel.end()) continue;
      hits[groups[u]][item] += 1.0;
      total[groups[u]] += 1.0;
    }
  }
  if (total[0] == 0.0 && total[1] == 0.0) return 0.0;
  if (total[0] == 0.0 || total[1] == 0.0) return 1.0;
  return total_variation(hits[0], total[0], hits[1], total[1]);
}

double score_gap_dp(const Predictor& predictor, const Tensor2& embeddings, std::span<const int> groups) {
  if (groups.size() != embeddings.rows()) {
    throw ShapeError("score_gap_dp: " + std::to_string(groups.size()) + " labels for " +
                     std::to_string(embeddings.rows()) + " embeddings");
  }
  double sum[2] = {0.0, 0.0};
  std::size_t n[2] = {0, 0};
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    const int g = groups[r];
    if (g != 0 && g != 1) throw DataError("score_gap_dp: label outside {0, 1}");
    sum[g] += predictor(embeddings.row(r));
    ++n[g];
  }
  if (n[0] == 0 || n[1] == 0) throw DataError("score_gap_dp: empty group");
  return std::abs(sum[1] / static_cast<double>(n[1]) - sum[0] / static_cast<double>(n[0]));
}

FairnessTrajectory trajectory_eval(const CofairModel& model, const SensitiveAttributes& attributes,
                                   std::span<const Index> users) {
  for (Index u : users) {
    model.check_user(u);
    if (u >= attributes.value.size()) throw RangeError("no attribute for user " + std::to_string(u));
  }
  FairnessTrajectory out;
  out.users.assign(users.begin(), users.end());
  out.losses = Tensor2(users.size(), model.levels());
  if (users.empty()) return out;
  std::vector<int> attrs;
  for (Index u : users) attrs.push_back(attributes.value[u]);
  const auto tape = head_forward(model, gather_rows(model.backbone.user_embedding, users));
  for (std::size_t k = 0; k < tape.level.size(); ++k) {
    const auto adv = adversary_forward(model.adversary, tape.level[k], nullptr);
    const auto fair = fairness_loss(adv.probs.values(), attrs);
    for (std::size_t r = 0; r < users.size(); ++r) out.losses(r, k) = fair.per_user[r];
  }
  return out;
}

std::vector<char> exclusion_mask(const InteractionDataset& dataset, Index user, Split split) {
  std::vector<char> mask(dataset.item_count, 0);
  if (split == Split::train) return mask;
  for (Index i : dataset.train.at(user)) mask[i] = 1;
  if (split == Split::test) {
    for (Index i : dataset.validation.at(user)) mask[i] = 1;
  }
  return mask;
}

namespace {
constexpr std::size_t kEvalChunk = 256;
}  // namespace

std::vector<Index> evaluated_users(const InteractionDataset& dataset, Split split) {
  std::vector<Index> users;
  const auto& lists = dataset.lists(split);
  for (Index u = 0; u < dataset.user_count; ++u) {
    if (!lists[u].empty()) users.push_back(u);
  }
  return users;
}

std::vector<TopK> recommend(const CofairModel& model, const InteractionDataset& dataset,
                            std::span<const Index> users, std::size_t level, std::size_t k, Split split) {
  std::vector<TopK> out;
  out.reserve(users.size());
  for (std::size_t start = 0; start < users.size(); start += kEvalChunk) {
    const auto chunk = users.subspan(start, std::min(kEvalChunk, users.size() - start));
    const Tensor2 scores = score_matrix(model, chunk, level);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      out.push_back(topk_from_scores(scores.row(r), k, exclusion_mask(dataset, chunk[r], split)));
    }
  }
  return out;
}

std::vector<std::vector<std::vector<Index>>> level_topk_lists(const CofairModel& model,
                                                              const InteractionDataset& dataset,
                                                              std::span<const Index> users,
                                                              std::span<const std::size_t> levels, std::size_t k,
                                                              Split split) {
  if (k == 0) throw RangeError("top-K needs K >= 1");
  if (dataset.item_count != model.dims().items || dataset.user_count != model.dims().users) {
    throw DataError("dataset shape (" + std::to_string(dataset.user_count) + " users, " +
                    std::to_string(dataset.item_count) + " items) does not match the model");
  }
  for (std::size_t t : levels) model.adapter_index(t);
  std::vector<std::vector<std::vector<Index>>> lists(levels.size(), std::vector<std::vector<Index>>(users.size()));
  for (std::size_t start = 0; start < users.size(); start += kEvalChunk) {
    const auto chunk = users.subspan(start, std::min(kEvalChunk, users.size() - start));
    for (Index u : chunk) model.check_user(u);
    const auto input = gather_rows(model.backbone.user_embedding, chunk);
    const bool single = levels.size() == 1;
    const auto tape = single ? head_forward(model, input, levels.front()) : head_forward(model, input);
    std::vector<std::vector<char>> masks;
    for (Index u : chunk) masks.push_back(exclusion_mask(dataset, u, split));
    for (std::size_t w = 0; w < levels.size(); ++w) {
      const std::size_t pos = single ? 0 : levels[w] - 1;
      const Tensor2 scores = matmul_nt(tape.level[pos], model.backbone.item_embedding);
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        lists[w][start + r] = topk_from_scores(scores.row(r), k, masks[r]).items;
      }
    }
  }
  return lists;
}

MetricsReport evaluate(const CofairModel& model, const InteractionDataset& dataset,
                       const SensitiveAttributes& attributes, std::size_t k, Split split,
                       std::span<const std::size_t> levels) {
  std::vector<std::size_t> wanted(levels.begin(), levels.end());
  if (wanted.empty()) {
    for (std::size_t t = 1; t <= model.levels(); ++t) wanted.push_back(t);
  }
  const auto users = evaluated_users(dataset, split);
  std::vector<std::vector<Index>> relevant;
  std::vector<int> groups;
  for (Index u : users) {
    relevant.push_back(dataset.lists(split)[u]);
    if (u >= attributes.value.size()) throw DataError("no attribute for user " + std::to_string(u));
    const int g = attributes.value[u];
    if (g != 0 && g != 1) throw DataError("attribute of user " + std::to_string(u) + " outside {0, 1}");
    groups.push_back(g);
  }
  const auto lists = level_topk_lists(model, dataset, users, wanted, k, split);

  MetricsReport report;
  report.k = k;
  report.split = split;
  for (int g : groups) ++report.group_sizes[static_cast<std::size_t>(g)];
  for (std::size_t w = 0; w < wanted.size(); ++w) {
    LevelMetrics m;
    m.level = wanted[w];
    const auto ranking = ranking_metrics(lists[w], relevant, k);
    m.recall = ranking.recall;
    m.ndcg = ranking.ndcg;
    m.dp = dp_at_k(lists[w], groups, k, dataset.item_count);
    m.eopp = eopp_at_k(lists[w], relevant, groups, k, dataset.item_count);
    report.levels.push_back(m);
  }
  return report;
}

std::string format_sig10(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

double round_sig10(double value) { return std::strtod(format_sig10(value).c_str(), nullptr); }

std::string curve_csv(const MetricsReport& report) {
  std::ostringstream out;
  const auto k = std::to_string(report.k);
  out << "t,recall@" << k << ",ndcg@" << k << ",dp@" << k << ",eopp@" << k << '\n';
  for (const auto& m : report.levels) {
    out << m.level << ',' << format_sig10(m.recall) << ',' << format_sig10(m.ndcg) << ',' << format_sig10(m.dp) << ','
        << format_sig10(m.eopp) << '\n';
  }
  return out.str();
}

}  // namespace cofair
