#pragma once

#include "atlab/models.hpp"

#include <span>
#include <string>

namespace atlab {

enum class ConsistencyKind { mse, kl };

ConsistencyKind parse_consistency_kind(const std::string& name);
std::string to_string(ConsistencyKind kind);

/// Floor applied to probabilities before taking logs in the KL terms.
inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over rows of ||p_s - p_t||^2.
Tensor consistency_mse(const Tensor& p_s, const Tensor& p_t);

/// Mean over rows of KL(p || q) = sum p * (ln p - ln q), with both
/// probabilities floored at kProbabilityFloor inside the logs.
Tensor consistency_kl(const Tensor& p, const Tensor& q);

/// Consistency between student probabilities (on the tape) and detached
/// teacher probabilities. KL is taken as KL(teacher || student).
Tensor consistency(const Tensor& student_probs, const Tensor& teacher_probs, ConsistencyKind kind);

/// CE(f(x), y) + beta * KL(f(x) || f(x_adv)); both forwards go through `params`.
Tensor trades_loss(const BoundParams& params, const Tensor& x, const Tensor& x_adv, std::span<const int> y,
                   double beta);

/// CE(f(x_adv; student), y) + lambda * L_cons(f(x_adv; student), f(x; teacher)).
/// The teacher forward is detached; lambda == 0 omits the consistency term.
Tensor mt_loss(const BoundParams& student, const BoundParams& teacher, const Tensor& x, const Tensor& x_adv,
               std::span<const int> y, double lambda, ConsistencyKind kind);

/// Same objective with precomputed teacher probabilities on clean inputs.
Tensor mt_loss(const BoundParams& student, const Matrix& teacher_probs, const Tensor& x_adv, std::span<const int> y,
               double lambda, ConsistencyKind kind);

/// Loss value with its gradient with respect to the model being trained.
struct LossAndGrad {
  double value = 0;
  ModelParams grad;
};

LossAndGrad cross_entropy_objective(const ModelParams& params, const Matrix& x, std::span<const int> y);
LossAndGrad trades_objective(const ModelParams& params, const Matrix& x, const Matrix& x_adv,
                             std::span<const int> y, double beta);
LossAndGrad mt_objective(const ModelParams& student, const ModelParams& teacher, const Matrix& x, const Matrix& x_adv,
                         std::span<const int> y, double lambda, ConsistencyKind kind);
/// trades loss on the student plus lambda times the teacher consistency term.
LossAndGrad trades_mt_objective(const ModelParams& student, const ModelParams& teacher, const Matrix& x,
                                const Matrix& x_adv, std::span<const int> y, double beta, double lambda,
                                ConsistencyKind kind);

struct RampupConfig {
  double lambda_max = 30.0;
  int start_epoch = 30;
  int ramp_len = 20;

  void validate() const;
};

/// Gaussian ramp-up: 0 before start_epoch, then lambda_max * exp(-5 (1 - p)^2)
/// with p = min(1, (epoch - start_epoch + 1) / ramp_len).
double rampup_weight(int epoch, const RampupConfig& cfg);

}  // namespace atlab
