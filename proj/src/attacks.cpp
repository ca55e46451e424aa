#include "atlab/attacks.hpp"

#include <limits>
#include <stdexcept>

namespace atlab {

void AttackConfig::validate() const {
  if (!(epsilon >= 0)) throw std::invalid_argument("attack.epsilon must be >= 0");
  if (steps < 0) throw std::invalid_argument("attack.steps must be >= 0");
  if (steps > 0 && !(step_size > 0)) throw std::invalid_argument("attack.step_size must be > 0 when steps > 0");
  if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("attack.clamp_lo must be < clamp_hi");
}

Matrix random_init(const Matrix& x, double epsilon, double lo, double hi, Rng& rng) {
  if (epsilon < 0) throw std::invalid_argument("random_init: epsilon must be >= 0");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] + epsilon * u(rng);
  return out.cwiseMax(lo).cwiseMin(hi);
}

Matrix project_linf(const Matrix& x_adv, const Matrix& x, double epsilon, double lo, double hi) {
  if (x_adv.rows() != x.rows() || x_adv.cols() != x.cols())
    throw ad::ShapeError("project_linf: shape mismatch");
  Matrix out = x_adv.array().max(x.array() - epsilon).min(x.array() + epsilon).matrix();
  return out.cwiseMax(lo).cwiseMin(hi);
}

Matrix sign(const Matrix& g) {
  return g.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor margin_loss(const Tensor& logits, std::span<const int> y) {
  return ad::mean(ad::max_excluding(logits, y) - ad::index_select(logits, y));
}

Eigen::VectorXd margins(const ModelParams& params, const Matrix& x, std::span<const int> y) {
  const Matrix z = logits(params, x);
  Eigen::VectorXd m(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      if (j != y[i]) best = std::max(best, z(i, j));
    m(i) = best - z(i, y[i]);
  }
  return m;
}

namespace {

void check_batch(const ModelParams& params, const Matrix& x, std::span<const int> y) {
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) throw ad::ShapeError("attack: label count != batch size");
  if (x.cols() != params.input_dim()) throw ad::ShapeError("attack: input dimension mismatch");
}

/// Shared PGD loop; `objective` builds the scalar to ascend from (bound params, x').
template <class Objective>
Matrix pgd_loop(const ModelParams& params, const Matrix& x, const AttackConfig& cfg, Rng& rng, Objective&& objective) {
  cfg.validate();
  Matrix x_adv = cfg.random_init ? random_init(x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi, rng)
                                 : project_linf(x, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
  for (int k = 0; k < cfg.steps; ++k) {
    Tape tape;
    auto bound = bind(tape, params, false);
    auto xt = tape.variable(x_adv);
    Tensor loss = objective(bound, xt);
    tape.backward(loss);
    x_adv = project_linf(x_adv + cfg.step_size * sign(xt.grad()), x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
  }
  return x_adv;
}

Tensor base_objective(const AttackLoss& loss, const Tensor& logits, std::span<const int> y) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, CrossEntropyLoss>) {
          return ad::softmax_cross_entropy(logits, y);
        } else if constexpr (std::is_same_v<L, MarginLoss>) {
          return margin_loss(logits, y);
        } else {
          auto& tape = logits.tape();
          return consistency_kl(tape.constant(l.clean_probs), ad::softmax(logits));
        }
      },
      loss);
}

}  // namespace

Matrix pgd_attack(const ModelParams& params, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                  const AttackLoss& loss, Rng& rng) {
  check_batch(params, x, y);
  if (const auto* t = std::get_if<TradesKlLoss>(&loss))
    if (t->clean_probs.rows() != x.rows() || t->clean_probs.cols() != params.num_classes())
      throw ad::ShapeError("pgd_attack: clean probabilities do not match the batch");
  return pgd_loop(params, x, cfg, rng, [&](const BoundParams& bound, const Tensor& xt) {
    return base_objective(loss, forward(bound, xt), y);
  });
}

Matrix pgd_mt_attack(const ModelParams& student, const ModelParams& teacher, const Matrix& x, std::span<const int> y,
                     const AttackConfig& cfg, double lambda, ConsistencyKind kind, Rng& rng,
                     const AttackLoss& base) {
  require_same_arch(student, teacher, "pgd_mt_attack");
  if (!(lambda >= 0)) throw std::invalid_argument("pgd_mt_attack: lambda must be >= 0");
  if (lambda == 0) return pgd_attack(student, x, y, cfg, base, rng);
  check_batch(student, x, y);
  const Matrix teacher_probs = ad::softmax_rows<double>(logits(teacher, x));
  return pgd_loop(student, x, cfg, rng, [&](const BoundParams& bound, const Tensor& xt) {
    auto z = forward(bound, xt);
    auto& tape = xt.tape();
    auto cons = consistency(ad::softmax(z), tape.constant(teacher_probs), kind);
    return base_objective(base, z, y) + ad::scale(cons, lambda);
  });
}

Matrix cw_inf_attack(const ModelParams& params, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                     Rng& rng) {
  if (params.num_classes() < 2) throw std::invalid_argument("cw_inf_attack: needs at least two classes");
  return pgd_attack(params, x, y, cfg, MarginLoss{}, rng);
}

}  // namespace atlab
