#include "cofair/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cofair/diffmath.hpp"
#include "cofair/error.hpp"
#include "cofair/log.hpp"

namespace cofair {

double bpr_loss(std::span<const ScorePair> pairs) {
  if (pairs.empty()) {
    log::warn("bpr_loss: empty batch");
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& p : pairs) sum += softplus(p.negative - p.positive);
  return sum / static_cast<double>(pairs.size());
}

std::vector<double> bpr_loss_grad(std::span<const ScorePair> pairs) {
  std::vector<double> g(pairs.size());
  const double inv = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) g[k] = -sigmoid(pairs[k].negative - pairs[k].positive) * inv;
  return g;
}

FairnessLoss fairness_loss(std::span<const double> probs, std::span<const int> attributes) {
  if (probs.size() != attributes.size()) {
    throw ShapeError("fairness_loss: " + std::to_string(probs.size()) + " probabilities for " +
                     std::to_string(attributes.size()) + " attributes");
  }
  FairnessLoss out;
  out.per_user.resize(probs.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (attributes[k] != 0 && attributes[k] != 1) {
      throw DataError("fairness_loss: attribute " + std::to_string(attributes[k]) + " outside {0, 1}");
    }
    out.per_user[k] = -bce(probs[k], static_cast<double>(attributes[k]));
    sum += out.per_user[k];
  }
  out.aggregate = probs.empty() ? 0.0 : sum / static_cast<double>(probs.size());
  return out;
}

double user_reg(const Tensor2& trajectory) {
  const std::size_t users = trajectory.rows(), levels = trajectory.cols();
  if (levels < 2 || users == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t t = 0; t + 1 < levels; ++t) sum += softplus(trajectory(u, t + 1) - trajectory(u, t));
  }
  return sum / static_cast<double>(users);
}

Tensor2 user_reg_grad(const Tensor2& trajectory) {
  const std::size_t users = trajectory.rows(), levels = trajectory.cols();
  Tensor2 g(users, levels);
  if (levels < 2 || users == 0) return g;
  const double inv = 1.0 / static_cast<double>(users);
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t t = 0; t + 1 < levels; ++t) {
      const double s = sigmoid(trajectory(u, t + 1) - trajectory(u, t)) * inv;
      g(u, t + 1) += s;
      g(u, t) -= s;
    }
  }
  return g;
}

FairnessSchedule FairnessSchedule::initial(std::size_t levels, double lambda0, double eta, double lambda_max,
                                           double beta) {
  FairnessSchedule s;
  s.eta = eta;
  s.lambda_max = lambda_max;
  s.beta = beta;
  s.lambdas.resize(levels);
  if (levels > 0) s.lambdas[0] = std::clamp(lambda0, 0.0, lambda_max);
  for (std::size_t t = 1; t < levels; ++t) s.lambdas[t] = std::clamp(s.lambdas[t - 1] + eta, 0.0, lambda_max);
  s.validate();
  return s;
}

void FairnessSchedule::validate() const {
  if (lambdas.empty()) throw ConfigError("schedule: need at least one level");
  if (!(eta >= 0.0)) throw ConfigError("schedule: eta must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("schedule: beta must be >= 0");
  if (!(lambda_max >= 0.0)) throw ConfigError("schedule: lambda_max must be >= 0");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= lambda_max)) throw ConfigError("schedule: lambda outside [0, lambda_max]");
  }
}

FairnessSchedule update_lambdas(const FairnessSchedule& schedule, std::span<const double> level_losses) {
  if (level_losses.size() != schedule.levels()) {
    throw ShapeError("update_lambdas: " + std::to_string(level_losses.size()) + " losses for " +
                     std::to_string(schedule.levels()) + " levels");
  }
  FairnessSchedule next = schedule;
  for (std::size_t t = 0; t + 1 < next.levels(); ++t) {
    const double current = level_losses[t];
    if (std::abs(current) < 1e-12) {
      log::warn("update_lambdas: fairness loss at level " + std::to_string(t + 1) +
                " is ~0; keeping lambda_" + std::to_string(t + 2));
      continue;
    }
    const double improvement = (current - level_losses[t + 1]) / current;
    next.lambdas[t + 1] = std::clamp(next.lambdas[t] + schedule.eta * (1.0 - improvement), 0.0, schedule.lambda_max);
  }
  return next;
}

LossBreakdown total_objective(std::span<const double> rec, std::span<const double> fair, double reg,
                              const FairnessSchedule& schedule) {
  const std::size_t levels = schedule.levels();
  if (rec.size() != levels || fair.size() != levels) {
    throw ShapeError("total_objective: expected " + std::to_string(levels) + " values per level");
  }
  LossBreakdown out;
  out.rec.assign(rec.begin(), rec.end());
  out.fair.assign(fair.begin(), fair.end());
  out.reg = reg;
  double level_sum = 0.0;
  for (std::size_t t = 0; t < levels; ++t) level_sum += rec[t] + schedule.lambdas[t] * fair[t];
  out.total = level_sum / static_cast<double>(levels) + schedule.beta * reg;
  return out;
}

}  // namespace cofair
