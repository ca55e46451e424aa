#pragma once

#include "atlab/models.hpp"
#include "atlab/objectives.hpp"
#include "atlab/random.hpp"

#include <span>
#include <variant>

namespace atlab {

/// L-infinity threat model and PGD loop settings. Inputs live in [clamp_lo, clamp_hi].
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 10;
  bool random_init = true;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const;

  /// PGD-10 with step 2/255, the training attack.
  static AttackConfig training() { return {}; }
  /// Evaluation PGD with step epsilon / 4 and random start.
  static AttackConfig evaluation(int steps, double epsilon = 8.0 / 255.0) {
    return {epsilon, epsilon / 4.0, steps, true, 0.0, 1.0};
  }
};

/// Loss maximized by the inner loop.
struct CrossEntropyLoss {};
/// Carlini-Wagner margin max_{j != y} Z_j - Z_y with kappa = 0.
struct MarginLoss {};
/// KL(p_clean || f(x')) against fixed clean probabilities.
struct TradesKlLoss {
  Matrix clean_probs;
};
using AttackLoss = std::variant<CrossEntropyLoss, MarginLoss, TradesKlLoss>;

/// clamp(x + epsilon * u), u ~ Uniform(-1, 1) per coordinate.
Matrix random_init(const Matrix& x, double epsilon, double lo, double hi, Rng& rng);

/// Projection onto the epsilon ball around x intersected with the box [lo, hi].
Matrix project_linf(const Matrix& x_adv, const Matrix& x, double epsilon, double lo, double hi);

/// Elementwise sign with sign(0) = 0.
Matrix sign(const Matrix& g);

/// Batch-mean margin loss on the tape.
Tensor margin_loss(const Tensor& logits, std::span<const int> y);

Matrix pgd_attack(const ModelParams& params, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                  const AttackLoss& loss, Rng& rng);

/// PGD on base + lambda * L_cons(f(x; teacher), f(x'; student)); the teacher's
/// clean probabilities are computed once. lambda == 0 follows pgd_attack exactly.
Matrix pgd_mt_attack(const ModelParams& student, const ModelParams& teacher, const Matrix& x, std::span<const int> y,
                     const AttackConfig& cfg, double lambda, ConsistencyKind kind, Rng& rng,
                     const AttackLoss& base = CrossEntropyLoss{});

Matrix cw_inf_attack(const ModelParams& params, const Matrix& x, std::span<const int> y, const AttackConfig& cfg,
                     Rng& rng);

/// Per-sample margin max_{j != y} Z_j - Z_y, no tape.
Eigen::VectorXd margins(const ModelParams& params, const Matrix& x, std::span<const int> y);

}  // namespace atlab
