#include "atlab/trainer.hpp"

#include "atlab/diagnostics.hpp"
#include "atlab/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace atlab {

Method parse_method(const std::string& name) {
  if (name == "pgd_at") return Method::pgd_at;
  if (name == "trades") return Method::trades;
  if (name == "pgd_at_mt") return Method::pgd_at_mt;
  if (name == "trades_mt") return Method::trades_mt;
  throw std::invalid_argument("unknown method '" + name + "' (expected pgd_at, trades, pgd_at_mt or trades_mt)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::pgd_at: return "pgd_at";
    case Method::trades: return "trades";
    case Method::pgd_at_mt: return "pgd_at_mt";
    case Method::trades_mt: return "trades_mt";
  }
  return "?";
}

bool uses_mean_teacher(Method method) { return method == Method::pgd_at_mt || method == Method::trades_mt; }
bool uses_trades(Method method) { return method == Method::trades || method == Method::trades_mt; }

double lr_at(int epoch, const LrSchedule& schedule) {
  const auto passed = std::count_if(schedule.decay_epochs.begin(), schedule.decay_epochs.end(),
                                    [epoch](int d) { return epoch >= d; });
  return schedule.initial / std::pow(schedule.factor, static_cast<double>(passed));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr.initial > 0)) throw std::invalid_argument("lr.initial must be > 0");
  if (!(lr.factor > 0)) throw std::invalid_argument("lr.factor must be > 0");
  for (std::size_t i = 1; i < lr.decay_epochs.size(); ++i)
    if (lr.decay_epochs[i] <= lr.decay_epochs[i - 1])
      throw std::invalid_argument("lr.decay_epochs must be strictly increasing");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(beta >= 0)) throw std::invalid_argument("beta must be >= 0");
  if (!(ema_decay >= 0 && ema_decay < 1)) throw std::invalid_argument("ema_decay must be in [0, 1)");
  if (rampup.start_epoch > epochs) throw std::invalid_argument("rampup.start_epoch must be <= epochs");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("hidden layer sizes must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  attack.validate();
  eval_attack.validate();
  rampup.validate();
}

ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double eta) {
  require_same_arch(teacher, student, "ema_update");
  if (!(eta >= 0 && eta < 1)) throw std::invalid_argument("ema_update: eta must be in [0, 1)");
  return param_linear_comb(teacher, student, eta, 1.0 - eta);
}

void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr, double momentum,
              double weight_decay) {
  if (!(lr > 0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  require_same_arch(params, velocity, "sgd_step velocity");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    if (l >= grads.layers.size() || grads.layers[l].weight.rows() != p.weight.rows() ||
        grads.layers[l].weight.cols() != p.weight.cols())
      throw std::invalid_argument(fmt::format("sgd_step: missing gradient for layer {} weight", l));
    if (grads.layers[l].bias.cols() != p.bias.cols() || grads.layers[l].bias.rows() != 1)
      throw std::invalid_argument(fmt::format("sgd_step: missing gradient for layer {} bias", l));
    auto& v = velocity.layers[l];
    v.weight = momentum * v.weight + (grads.layers[l].weight + weight_decay * p.weight);
    v.bias = momentum * v.bias + (grads.layers[l].bias + weight_decay * p.bias);
    p.weight -= lr * v.weight;
    p.bias -= lr * v.bias;
  }
}

void SgdMomentum::step(ModelParams& params, const ModelParams& grads, double lr) {
  if (!velocity_) velocity_ = zeros_like(params);
  sgd_step(params, grads, *velocity_, lr, momentum_, weight_decay_);
}

NonFiniteLoss::NonFiniteLoss(int e, int b)
    : std::runtime_error(fmt::format("non-finite loss at epoch {} batch {}", e, b)), epoch(e), batch(b) {}

TrainedModel train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                   const StepObserver& on_step, const EpochObserver& on_epoch) {
  cfg.validate();
  train_set.validate();
  test_set.validate();
  if (train_set.size() == 0 || test_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (train_set.dim() != test_set.dim()) throw std::invalid_argument("train: train/test feature dimensions differ");
  const int classes = std::max(train_set.num_classes, test_set.num_classes);

  std::vector<int> arch{static_cast<int>(train_set.dim())};
  arch.insert(arch.end(), cfg.hidden.begin(), cfg.hidden.end());
  arch.push_back(classes);

  const bool mean_teacher = uses_mean_teacher(cfg.method);
  ModelParams student = mlp_init(arch, derive_seed(cfg.seed, Stream::init));
  ModelParams teacher = student;
  SgdMomentum optimizer(cfg.momentum, cfg.weight_decay);

  TrainedModel result;
  double best_rob = -1;
  const auto n = static_cast<int>(train_set.size());
  std::vector<int> order(n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.lr);
    const double lambda = mean_teacher ? rampup_weight(epoch, cfg.rampup) : 0.0;
    const bool mt_phase = mean_teacher && epoch >= cfg.rampup.start_epoch;

    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, Stream::shuffle, {static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    int batches = 0;
    for (int start = 0, b = 0; start < n; start += cfg.batch_size, ++b) {
      const int count = std::min(cfg.batch_size, n - start);
      const Dataset batch = take(train_set, std::vector<int>(order.begin() + start, order.begin() + start + count));
      Rng attack_rng =
          make_rng(cfg.seed, Stream::attack, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)});

      AttackLoss base = CrossEntropyLoss{};
      if (uses_trades(cfg.method)) base = TradesKlLoss{ad::softmax_rows<double>(logits(student, batch.x))};
      const Matrix x_adv = mt_phase ? pgd_mt_attack(student, teacher, batch.x, batch.y, cfg.attack, lambda,
                                                    cfg.consistency, attack_rng, base)
                                    : pgd_attack(student, batch.x, batch.y, cfg.attack, base, attack_rng);

      LossAndGrad objective;
      switch (cfg.method) {
        case Method::pgd_at:
          objective = cross_entropy_objective(student, x_adv, batch.y);
          break;
        case Method::trades:
          objective = trades_objective(student, batch.x, x_adv, batch.y, cfg.beta);
          break;
        case Method::pgd_at_mt:
          objective = mt_phase ? mt_objective(student, teacher, batch.x, x_adv, batch.y, lambda, cfg.consistency)
                               : cross_entropy_objective(student, x_adv, batch.y);
          break;
        case Method::trades_mt:
          objective = mt_phase ? trades_mt_objective(student, teacher, batch.x, x_adv, batch.y, cfg.beta, lambda,
                                                     cfg.consistency)
                               : trades_objective(student, batch.x, x_adv, batch.y, cfg.beta);
          break;
      }
      if (!std::isfinite(objective.value) || !all_finite(objective.grad)) throw NonFiniteLoss(epoch, b);
      if (on_step) on_step(StepInfo{epoch, b, student, teacher, batch.x, batch.y, x_adv, lambda, objective.value});

      optimizer.step(student, objective.grad, lr);
      teacher = mt_phase ? ema_update(teacher, student, cfg.ema_decay) : student;
      loss_sum += objective.value;
      ++batches;
    }

    const ModelParams& evaluated = mean_teacher ? teacher : student;
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.lambda = lambda;
    rec.train_loss = loss_sum / batches;
    rec.nat_train = natural_accuracy(evaluated, train_set);
    rec.nat_test = natural_accuracy(evaluated, test_set);
    const auto e = static_cast<std::uint64_t>(epoch);
    rec.rob_train = robust_accuracy(evaluated, train_set, cfg.eval_attack, EvalLoss::cross_entropy,
                                    derive_seed(cfg.seed, Stream::evaluation, {e, 0}), cfg.threads);
    rec.rob_test = robust_accuracy(evaluated, test_set, cfg.eval_attack, EvalLoss::cross_entropy,
                                   derive_seed(cfg.seed, Stream::evaluation, {e, 1}), cfg.threads);
    rec.gap = rec.rob_train - rec.rob_test;

    const Dataset probe = slice(train_set, 0, std::min<Eigen::Index>(cfg.batch_size, train_set.size()));
    Rng probe_rng = make_rng(cfg.seed, Stream::probe, {e});
    const Matrix probe_adv = pgd_attack(student, probe.x, probe.y, cfg.attack, CrossEntropyLoss{}, probe_rng);
    const GradNorms norms = grad_norms(student, teacher, probe.x, probe_adv, probe.y, cfg.consistency);
    rec.gnorm_ce = norms.ce;
    rec.gnorm_cons = norms.cons;

    if (rec.rob_test > best_rob) {
      best_rob = rec.rob_test;
      result.best_epoch = epoch;
      result.best = evaluated;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  result.student = std::move(student);
  result.teacher = std::move(teacher);
  return result;
}

}  // namespace atlab
