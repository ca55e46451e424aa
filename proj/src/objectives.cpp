#include "atlab/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace atlab {

ConsistencyKind parse_consistency_kind(const std::string& name) {
  if (name == "mse") return ConsistencyKind::mse;
  if (name == "kl") return ConsistencyKind::kl;
  throw std::invalid_argument("unknown consistency kind '" + name + "' (expected mse or kl)");
}

std::string to_string(ConsistencyKind kind) { return kind == ConsistencyKind::mse ? "mse" : "kl"; }

namespace {

double batch_scale(const Tensor& p) { return 1.0 / static_cast<double>(p.value().rows()); }

}  // namespace

Tensor consistency_mse(const Tensor& p_s, const Tensor& p_t) {
  ad::detail::require_same_shape(p_s, p_t, "consistency_mse");
  return ad::scale(ad::sum(ad::square(p_s - p_t)), batch_scale(p_s));
}

Tensor consistency_kl(const Tensor& p, const Tensor& q) {
  ad::detail::require_same_shape(p, q, "consistency_kl");
  auto log_p = ad::log(ad::clamp_min(p, kProbabilityFloor));
  auto log_q = ad::log(ad::clamp_min(q, kProbabilityFloor));
  return ad::scale(ad::sum(ad::multiply(p, log_p - log_q)), batch_scale(p));
}

Tensor consistency(const Tensor& student_probs, const Tensor& teacher_probs, ConsistencyKind kind) {
  if (kind == ConsistencyKind::mse) return consistency_mse(student_probs, teacher_probs);
  return consistency_kl(teacher_probs, student_probs);
}

Tensor trades_loss(const BoundParams& params, const Tensor& x, const Tensor& x_adv, std::span<const int> y,
                   double beta) {
  if (beta < 0) throw std::invalid_argument("trades_loss: beta must be non-negative");
  auto clean_logits = forward(params, x);
  auto ce = ad::softmax_cross_entropy(clean_logits, y);
  if (beta == 0) return ce;
  auto p_clean = ad::softmax(clean_logits);
  auto p_adv = ad::softmax(forward(params, x_adv));
  return ce + ad::scale(consistency_kl(p_clean, p_adv), beta);
}

Tensor mt_loss(const BoundParams& student, const BoundParams& teacher, const Tensor& x, const Tensor& x_adv,
               std::span<const int> y, double lambda, ConsistencyKind kind) {
  if (student.size() != teacher.size()) throw std::invalid_argument("mt_loss: architecture mismatch");
  for (std::size_t l = 0; l < student.size(); ++l)
    if (!(student[l].weight.shape() == teacher[l].weight.shape()))
      throw std::invalid_argument("mt_loss: architecture mismatch");
  // Copied out of the tape: recording more nodes may reallocate its storage.
  const Matrix teacher_probs = ad::detach(ad::softmax(forward(teacher, x))).value();
  return mt_loss(student, teacher_probs, x_adv, y, lambda, kind);
}

Tensor mt_loss(const BoundParams& student, const Matrix& teacher_probs, const Tensor& x_adv, std::span<const int> y,
               double lambda, ConsistencyKind kind) {
  if (lambda < 0) throw std::invalid_argument("mt_loss: lambda must be non-negative");
  auto adv_logits = forward(student, x_adv);
  auto ce = ad::softmax_cross_entropy(adv_logits, y);
  if (lambda == 0) return ce;
  auto& tape = x_adv.tape();
  auto cons = consistency(ad::softmax(adv_logits), tape.constant(teacher_probs), kind);
  return ce + ad::scale(cons, lambda);
}

namespace {

template <class Build>
LossAndGrad run_objective(const ModelParams& params, Build&& build) {
  Tape tape;
  auto bound = bind(tape, params, true);
  Tensor loss = build(tape, bound);
  tape.backward(loss);
  return {loss.item(), gradients(bound, params)};
}

}  // namespace

LossAndGrad cross_entropy_objective(const ModelParams& params, const Matrix& x, std::span<const int> y) {
  return run_objective(params, [&](Tape& tape, const BoundParams& bound) {
    return ad::softmax_cross_entropy(forward(bound, tape.constant(x)), y);
  });
}

LossAndGrad trades_objective(const ModelParams& params, const Matrix& x, const Matrix& x_adv,
                             std::span<const int> y, double beta) {
  return run_objective(params, [&](Tape& tape, const BoundParams& bound) {
    return trades_loss(bound, tape.constant(x), tape.constant(x_adv), y, beta);
  });
}

LossAndGrad mt_objective(const ModelParams& student, const ModelParams& teacher, const Matrix& x, const Matrix& x_adv,
                         std::span<const int> y, double lambda, ConsistencyKind kind) {
  require_same_arch(student, teacher, "mt_loss");
  const Matrix teacher_probs = ad::softmax_rows<double>(logits(teacher, x));
  return run_objective(student, [&](Tape& tape, const BoundParams& bound) {
    return mt_loss(bound, teacher_probs, tape.constant(x_adv), y, lambda, kind);
  });
}

LossAndGrad trades_mt_objective(const ModelParams& student, const ModelParams& teacher, const Matrix& x,
                                const Matrix& x_adv, std::span<const int> y, double beta, double lambda,
                                ConsistencyKind kind) {
  require_same_arch(student, teacher, "trades_mt_loss");
  if (lambda < 0) throw std::invalid_argument("trades_mt_loss: lambda must be non-negative");
  const Matrix teacher_probs = ad::softmax_rows<double>(logits(teacher, x));
  return run_objective(student, [&](Tape& tape, const BoundParams& bound) {
    auto xa = tape.constant(x_adv);
    auto loss = trades_loss(bound, tape.constant(x), xa, y, beta);
    if (lambda == 0) return loss;
    auto cons = consistency(ad::softmax(forward(bound, xa)), tape.constant(teacher_probs), kind);
    return loss + ad::scale(cons, lambda);
  });
}

void RampupConfig::validate() const {
  if (!(lambda_max >= 0)) throw std::invalid_argument("rampup.lambda_max must be >= 0");
  if (ramp_len < 1) throw std::invalid_argument("rampup.ramp_len must be >= 1");
  if (start_epoch < 0) throw std::invalid_argument("rampup.start_epoch must be >= 0");
}

double rampup_weight(int epoch, const RampupConfig& cfg) {
  if (epoch < cfg.start_epoch) return 0.0;
  const double p = std::min(1.0, static_cast<double>(epoch - cfg.start_epoch + 1) / cfg.ramp_len);
  if (p >= 1.0) return cfg.lambda_max;
  return cfg.lambda_max * std::exp(-5.0 * (1.0 - p) * (1.0 - p));
}

}  // namespace atlab
