#pragma once

#include <span>
#include <vector>

#include "cofair/data.hpp"
#include "cofair/tensor.hpp"

namespace cofair {

struct ScorePair {
  double positive;
  double negative;
};

// Mean over pairs of -ln sigmoid(positive - negative); 0 (with a warning) for
// an empty batch.
double bpr_loss(std::span<const ScorePair> pairs);
// d bpr_loss / d positive for each pair; the negative's derivative is the negation.
std::vector<double> bpr_loss_grad(std::span<const ScorePair> pairs);

struct FairnessLoss {
  double aggregate = 0.0;        // mean of per_user
  std::vector<double> per_user;  // -bce(p_u, a_u) <= 0
};

FairnessLoss fairness_loss(std::span<const double> probs, std::span<const int> attributes);

// Per-user losses across levels: row = user, column = level (t - 1).
struct FairnessTrajectory {
  std::vector<Index> users;
  Tensor2 losses;

  std::size_t levels() const { return losses.cols(); }
};

// (1 / users) * sum_u sum_{t<T} softplus(L(t+1)(u) - L(t)(u)); 0 when T = 1.
double user_reg(const Tensor2& trajectory);
inline double user_reg(const FairnessTrajectory& trajectory) { return user_reg(trajectory.losses); }
// Gradient of user_reg with respect to every trajectory entry.
Tensor2 user_reg_grad(const Tensor2& trajectory);

struct FairnessSchedule {
  std::vector<double> lambdas;  // lambda_1..lambda_T
  double eta = 0.0;
  double lambda_max = 10.0;
  double beta = 0.0;

  std::size_t levels() const { return lambdas.size(); }
  // lambda_1 = lambda_0 and lambda_{t+1} = clamp(lambda_t + eta), i.e. the
  // recurrence evaluated for levels that have not yet shown any improvement.
  static FairnessSchedule initial(std::size_t levels, double lambda0, double eta, double lambda_max, double beta);
  void validate() const;
};

// lambda_{t+1} = clamp(lambda_t + eta * [1 - (L(t) - L(t+1)) / L(t)], 0, lambda_max),
// chained left to right over already-updated values; lambda_1 is kept.
// Steps with |L(t)| < 1e-12 are skipped with a warning.
FairnessSchedule update_lambdas(const FairnessSchedule& schedule, std::span<const double> level_losses);

struct LossBreakdown {
  std::vector<double> rec;   // L_rec^(t)
  std::vector<double> fair;  // L_fair^(t)
  double reg = 0.0;
  double total = 0.0;
};

// total = (1/T) sum_t [rec_t + lambda_t fair_t] + beta * reg
LossBreakdown total_objective(std::span<const double> rec, std::span<const double> fair, double reg,
                              const FairnessSchedule& schedule);

}  // namespace cofair
