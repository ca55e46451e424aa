#pragma once

#include "atlab/attacks.hpp"
#include "atlab/data_io.hpp"
#include "atlab/metrics.hpp"
#include "atlab/objectives.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace atlab {

enum class Method { pgd_at, trades, pgd_at_mt, trades_mt };

Method parse_method(const std::string& name);
std::string to_string(Method method);
bool uses_mean_teacher(Method method);
bool uses_trades(Method method);

/// Step schedule: initial / factor^(number of decay epochs <= epoch).
struct LrSchedule {
  double initial = 0.1;
  std::vector<int> decay_epochs{30, 45};
  double factor = 10.0;
};

double lr_at(int epoch, const LrSchedule& schedule);

struct TrainConfig {
  Method method = Method::pgd_at;
  int epochs = 60;
  int batch_size = 128;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta = 6.0;
  AttackConfig attack = AttackConfig::training();
  /// Attack used for the per-epoch robust accuracies.
  AttackConfig eval_attack = AttackConfig::evaluation(10);
  ConsistencyKind consistency = ConsistencyKind::mse;
  RampupConfig rampup;
  double ema_decay = 0.999;
  std::vector<int> hidden{256, 256};
  std::uint64_t seed = 0;
  /// Evaluation worker cap; results do not depend on it.
  int threads = 1;

  void validate() const;
};

/// theta_t <- eta * theta_t + (1 - eta) * theta_s
ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double eta);

/// One momentum SGD update in place. `velocity` is updated alongside.
/// Throws when a gradient tensor is missing or mis-shaped, naming it.
void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr, double momentum,
              double weight_decay);

/// Momentum SGD with L2 weight decay folded into the gradient:
/// v <- momentum * v + (g + wd * p); p <- p - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ModelParams& params, const ModelParams& grads, double lr);
  const std::optional<ModelParams>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::optional<ModelParams> velocity_;
};

/// Per-step view handed to a training observer before the parameter update.
struct StepInfo {
  int epoch;
  int batch;
  const ModelParams& student;
  const ModelParams& teacher;
  const Matrix& x;
  const Labels& y;
  const Matrix& x_adv;
  double lambda;
  double loss;
};
using StepObserver = std::function<void(const StepInfo&)>;
using EpochObserver = std::function<void(const MetricsRecord&)>;

struct TrainedModel {
  ModelParams student;
  ModelParams teacher;
  History history;
  int best_epoch = 0;
  ModelParams best;

  /// The model reported by evaluation: teacher for mean-teacher methods.
  const ModelParams& reported(Method method) const { return uses_mean_teacher(method) ? teacher : student; }
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int epoch, int batch);
  int epoch;
  int batch;
};

TrainedModel train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                   const StepObserver& on_step = {}, const EpochObserver& on_epoch = {});

}  // namespace atlab
