// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "atlab/diagnostics.hpp"
#include "atlab/run_config.hpp"
#include "atlab/trainer.hpp"
#include "oracles.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace atlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!same_arch(a, b)) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (std::memcmp(a.layers[l].weight.data(), b.layers[l].weight.data(), sizeof(double) * a.layers[l].weight.size()))
      return false;
    if (std::memcmp(a.layers[l].bias.data(), b.layers[l].bias.data(), sizeof(double) * a.layers[l].bias.size()))
      return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Gradient oracle

/// Reduces any tensor to a scalar through a fixed random weighting so the
/// whole Jacobian is exercised, not just its column sums.
Tensor weigh(const Tensor& t, const Matrix& weights) {
  auto w = t.tape().leaf(weights.topLeftCorner(t.value().rows(), t.value().cols()), t.rank(), false);
  return ad::sum(ad::multiply(t, w));
}

Outcome gradient_oracle() {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kInstances = 100;
  constexpr double kTol = 1e-4;
  std::mt19937_64 rng(2024);
  std::vector<std::pair<std::string, double>> worst;

  auto away_from = [](Matrix m, double center, double gap) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double& v = m.data()[i];
      if (std::abs(v - center) < gap) v = center + (v >= center ? gap : -gap);
    }
    return m;
  };

  using Op = std::function<double(std::mt19937_64&)>;
  std::vector<std::pair<std::string, Op>> ops;
  auto unary = [&](const std::string& name, std::function<Tensor(const Tensor&)> f,
                   std::function<Matrix(std::mt19937_64&)> sample) {
    ops.emplace_back(name, [f, sample](std::mt19937_64& g) {
      const Matrix x = sample(g);
      const Matrix w = oracle::random_matrix(8, 8, g);
      return ad::grad_check<double>([&](const Tensor& t) { return weigh(f(t), w); }, x, 1e-6);
    });
  };
  auto plain = [](std::mt19937_64& g) { return oracle::random_matrix(4, 5, g); };
  auto second = [](const Tensor& t, std::uint64_t salt) {
    std::mt19937_64 g(salt);
    return t.tape().constant(oracle::random_matrix(t.value().rows(), t.value().cols(), g));
  };

  unary("add", [&](const Tensor& t) { return ad::add(t, second(t, 1)); }, plain);
  unary("add(rhs)", [&](const Tensor& t) { return ad::add(second(t, 1), t); }, plain);
  unary("subtract", [&](const Tensor& t) { return ad::subtract(t, second(t, 2)); }, plain);
  unary("subtract(rhs)", [&](const Tensor& t) { return ad::subtract(second(t, 2), t); }, plain);
  unary("multiply", [&](const Tensor& t) { return ad::multiply(t, second(t, 3)); }, plain);
  unary("multiply(self)", [](const Tensor& t) { return ad::multiply(t, t); }, plain);
  unary("scale", [](const Tensor& t) { return ad::scale(t, -2.5); }, plain);
  unary("square", [](const Tensor& t) { return ad::square(t); }, plain);
  unary("relu", [](const Tensor& t) { return ad::relu(t); },
        [&](std::mt19937_64& g) { return away_from(oracle::random_matrix(4, 5, g), 0.0, 0.05); });
  unary("exp", [](const Tensor& t) { return ad::exp(t); }, plain);
  unary("log", [](const Tensor& t) { return ad::log(t); },
        [](std::mt19937_64& g) { return oracle::random_matrix(4, 5, g, 0.1, 3.0); });
  unary("clamp_min", [](const Tensor& t) { return ad::clamp_min(t, 0.2); },
        [&](std::mt19937_64& g) { return away_from(oracle::random_matrix(4, 5, g), 0.2, 0.05); });
  unary("sum", [](const Tensor& t) { return ad::scale(ad::sum(t), 1.0); }, plain);
  unary("mean", [](const Tensor& t) { return ad::mean(t); }, plain);
  unary("sum_rows", [](const Tensor& t) { return ad::sum_rows(t); }, plain);
  unary("logsumexp", [](const Tensor& t) { return ad::logsumexp(t); }, plain);
  const std::vector<int> labels{0, 3, 1, 4};
  unary("index_select", [&](const Tensor& t) { return ad::index_select(t, labels); }, plain);
  unary("max_excluding", [&](const Tensor& t) { return ad::max_excluding(t, labels); }, plain);
  unary("matmul(lhs)", [&](const Tensor& t) {
    std::mt19937_64 g(4);
    return ad::matmul(t, t.tape().constant(oracle::random_matrix(5, 3, g)));
  }, plain);
  unary("matmul(rhs)", [&](const Tensor& t) {
    std::mt19937_64 g(5);
    return ad::matmul(t.tape().constant(oracle::random_matrix(3, 4, g)), t);
  }, plain);
  unary("affine(x)", [&](const Tensor& t) {
    std::mt19937_64 g(6);
    auto& tape = t.tape();
    return ad::affine(t, tape.constant(oracle::random_matrix(5, 3, g)), tape.vector(oracle::random_matrix(1, 3, g), false));
  }, plain);
  unary("affine(W)", [&](const Tensor& t) {
    std::mt19937_64 g(7);
    auto& tape = t.tape();
    return ad::affine(tape.constant(oracle::random_matrix(3, 4, g)), t, tape.vector(oracle::random_matrix(1, 5, g), false));
  }, plain);
  ops.emplace_back("affine(b)", [](std::mt19937_64& g) {
    const Matrix b = oracle::random_matrix(1, 5, g);
    const Matrix x = oracle::random_matrix(3, 4, g), w = oracle::random_matrix(4, 5, g);
    const Matrix r = oracle::random_matrix(8, 8, g);
    return ad::grad_check<double>(
        [&](const Tensor& t) {
          auto& tape = t.tape();
          return weigh(ad::affine(tape.constant(x), tape.constant(w), t), r);
        },
        b, 1e-6, 1);
  });
  unary("log_softmax", [](const Tensor& t) { return ad::log_softmax(t); }, plain);
  unary("softmax", [](const Tensor& t) { return ad::softmax(t); }, plain);
  unary("operator+-*", [&](const Tensor& t) { return 0.5 * (t + second(t, 8)) - t; }, plain);
  ops.emplace_back("softmax_cross_entropy", [&](std::mt19937_64& g) {
    const Matrix z = oracle::random_matrix(4, 5, g, -3, 3);
    return ad::grad_check<double>([&](const Tensor& t) { return ad::softmax_cross_entropy(t, labels); }, z, 1e-6);
  });
  for (auto kind : {ConsistencyKind::mse, ConsistencyKind::kl}) {
    ops.emplace_back("consistency_" + to_string(kind) + "(logits)", [kind](std::mt19937_64& g) {
      const Matrix teacher = oracle::random_distribution(4, 5, g);
      const Matrix z = oracle::random_matrix(4, 5, g, -3, 3);
      return ad::grad_check<double>(
          [&](const Tensor& t) { return consistency(ad::softmax(t), t.tape().constant(teacher), kind); }, z, 1e-6);
    });
  }

  // Composite objectives: analytic parameter gradients against central
  // differences of the plain-loop oracle values.
  auto composite = [&](const std::string& name,
                       std::function<LossAndGrad(const ModelParams&, const ModelParams&, const Matrix&, const Matrix&,
                                                 const Labels&)>
                           analytic,
                       std::function<double(const ModelParams&, const ModelParams&, const Matrix&, const Matrix&,
                                            const Labels&)>
                           value) {
    ops.emplace_back(name, [analytic, value](std::mt19937_64& g) {
      const ModelParams s = mlp_init({3, 6, 4}, g());
      const ModelParams t = mlp_init({3, 6, 4}, g());
      const Matrix x = oracle::random_matrix(4, 3, g, 0, 1);
      const Matrix xa = x + oracle::random_matrix(4, 3, g, -0.1, 0.1);
      const Labels y = oracle::random_labels(4, 4, g);
      const LossAndGrad lg = analytic(s, t, x, xa, y);
      const double direct = value(s, t, x, xa, y);
      const ModelParams numeric =
          oracle::fd_param_gradient([&](const ModelParams& p) { return value(p, t, x, xa, y); }, s, 1e-6);
      const double value_err = std::abs(lg.value - direct) / std::max(1.0, std::abs(direct));
      return std::max(value_err, oracle::max_rel_error(oracle::flatten(lg.grad), oracle::flatten(numeric)));
    });
  };
  auto ce = [](const ModelParams& p, const Matrix& x, const Labels& y) {
    return oracle::cross_entropy(oracle::mlp_logits(p, x), y);
  };
  auto trades_value = [ce](const ModelParams& p, const Matrix& x, const Matrix& xa, const Labels& y, double beta) {
    return ce(p, x, y) + beta * oracle::kl(oracle::softmax(oracle::mlp_logits(p, x)),
                                           oracle::softmax(oracle::mlp_logits(p, xa)));
  };
  auto cons_value = [](const ModelParams& s, const ModelParams& t, const Matrix& x, const Matrix& xa,
                       ConsistencyKind kind) {
    const Matrix ps = oracle::softmax(oracle::mlp_logits(s, xa));
    const Matrix pt = oracle::softmax(oracle::mlp_logits(t, x));
    return kind == ConsistencyKind::mse ? oracle::mse(ps, pt) : oracle::kl(pt, ps);
  };
  composite("objective:ce",
            [](auto& s, auto&, auto&, auto& xa, auto& y) { return cross_entropy_objective(s, xa, y); },
            [ce](auto& s, auto&, auto&, auto& xa, auto& y) { return ce(s, xa, y); });
  composite("objective:trades",
            [](auto& s, auto&, auto& x, auto& xa, auto& y) { return trades_objective(s, x, xa, y, 6.0); },
            [trades_value](auto& s, auto&, auto& x, auto& xa, auto& y) { return trades_value(s, x, xa, y, 6.0); });
  for (auto kind : {ConsistencyKind::mse, ConsistencyKind::kl}) {
    composite("objective:mt_" + to_string(kind),
              [kind](auto& s, auto& t, auto& x, auto& xa, auto& y) { return mt_objective(s, t, x, xa, y, 30.0, kind); },
              [ce, cons_value, kind](auto& s, auto& t, auto& x, auto& xa, auto& y) {
                return ce(s, xa, y) + 30.0 * cons_value(s, t, x, xa, kind);
              });
    composite("objective:trades_mt_" + to_string(kind),
              [kind](auto& s, auto& t, auto& x, auto& xa, auto& y) {
                return trades_mt_objective(s, t, x, xa, y, 6.0, 30.0, kind);
              },
              [trades_value, cons_value, kind](auto& s, auto& t, auto& x, auto& xa, auto& y) {
                return trades_value(s, x, xa, y, 6.0) + 30.0 * cons_value(s, t, x, xa, kind);
              });
  }

  double global = 0;
  std::string worst_name;
  for (const auto& [name, op] : ops) {
    double op_worst = 0;
    for (int i = 0; i < kInstances; ++i) op_worst = std::max(op_worst, op(rng));
    if (op_worst >= global) {
      global = op_worst;
      worst_name = name;
    }
    if (op_worst >= kTol) worst.emplace_back(name, op_worst);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string detail = fmt::format("{} checks x {} instances, max rel error {:.2e} ({}), {:.1f}s", ops.size(),
                                   kInstances, global, worst_name, seconds);
  for (const auto& [name, err] : worst) detail += fmt::format("; over tolerance: {} {:.2e}", name, err);
  return {worst.empty() && seconds < 60.0, detail};
}

// ---------------------------------------------------------------------------
// Attack invariants

Outcome attack_invariants() {
  constexpr int kRuns = 10000;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int violations = 0, mutated = 0, identity_failures = 0, identity_runs = 0;
  double worst_excess = 0;

  for (int run = 0; run < kRuns; ++run) {
    const int classes = 2 + static_cast<int>(rng() % 3);
    const int dim = 2 + static_cast<int>(rng() % 5);
    const int rows = 1 + static_cast<int>(rng() % 4);
    const ModelParams student = mlp_init({dim, 8, classes}, rng());
    const ModelParams teacher = mlp_init({dim, 8, classes}, rng());
    const ModelParams s_before = student, t_before = teacher;

    Matrix x = oracle::random_matrix(rows, dim, rng, 0, 1);
    if (run % 5 == 0) x = x.array().round().matrix();  // inputs on the box faces
    const Labels y = oracle::random_labels(rows, classes, rng);

    AttackConfig cfg;
    cfg.epsilon = run % 10 == 0 ? 0.0 : 0.3 * unit(rng);
    cfg.step_size = 0.01 + 0.2 * unit(rng);
    cfg.steps = 1 + static_cast<int>(rng() % 5);
    cfg.random_init = rng() % 2 == 0;

    Rng attack_rng(rng());
    Matrix adv;
    switch (run % 4) {
      case 0:
        adv = pgd_attack(student, x, y, cfg, CrossEntropyLoss{}, attack_rng);
        break;
      case 1:
        adv = cw_inf_attack(student, x, y, cfg, attack_rng);
        break;
      case 2:
        adv = pgd_attack(student, x, y, cfg, TradesKlLoss{ad::softmax_rows<double>(logits(student, x))}, attack_rng);
        break;
      default:
        adv = pgd_mt_attack(student, teacher, x, y, cfg, 30.0 * unit(rng),
                            run % 8 == 3 ? ConsistencyKind::mse : ConsistencyKind::kl, attack_rng);
    }

    const double excess = (adv - x).cwiseAbs().maxCoeff() - cfg.epsilon;
    worst_excess = std::max(worst_excess, excess);
    if (excess > 1e-12 || adv.minCoeff() < cfg.clamp_lo || adv.maxCoeff() > cfg.clamp_hi) ++violations;
    if (!bitwise_equal(student, s_before) || !bitwise_equal(teacher, t_before)) ++mutated;
    if (cfg.epsilon == 0.0 && run % 4 == 0) {
      ++identity_runs;
      if (!(adv == x)) ++identity_failures;
    }
  }
  return {violations == 0 && mutated == 0 && identity_failures == 0 && identity_runs > 0,
          fmt::format("{} runs: {} constraint violations (max excess over eps {:.1e}), {} parameter mutations, "
                      "{}/{} eps=0 PGD runs not identity",
                      kRuns, violations, worst_excess, mutated, identity_failures, identity_runs)};
}

// ---------------------------------------------------------------------------
// Reductions

TrainConfig short_config(Method method, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.epochs = 6;
  cfg.lr.decay_epochs = {3, 5};
  cfg.rampup.start_epoch = 3;
  cfg.rampup.ramp_len = 2;
  cfg.seed = seed;
  return cfg;
}

Outcome reductions(const Dataset& train_set, const Dataset& test_set) {
  int bitwise_fail = 0;
  for (std::uint64_t seed : {0u, 1u}) {
    const TrainedModel base = train(short_config(Method::pgd_at, seed), train_set, test_set);
    TrainConfig mt_cfg = short_config(Method::pgd_at_mt, seed);
    mt_cfg.rampup.lambda_max = 0;
    mt_cfg.ema_decay = 0;
    const TrainedModel mt = train(mt_cfg, train_set, test_set);
    if (!bitwise_equal(base.student, mt.student) || !bitwise_equal(base.teacher, mt.teacher) ||
        !bitwise_equal(base.best, mt.best) || !(base.history == mt.history))
      ++bitwise_fail;
  }

  TrainConfig trades = short_config(Method::trades, 0);
  trades.beta = 0;
  double worst = 0;
  int steps = 0;
  train(trades, train_set, test_set, [&](const StepInfo& s) {
    const double clean = oracle::cross_entropy(oracle::mlp_logits(s.student, s.x), s.y);
    worst = std::max(worst, std::abs(s.loss - clean));
    ++steps;
  });
  return {bitwise_fail == 0 && worst <= 1e-12,
          fmt::format("pgd_at_mt(lambda_max=0, eta=0) vs pgd_at: {}/2 seeds differ; trades beta=0: max |loss - clean CE| "
                      "{:.1e} over {} steps",
                      bitwise_fail, worst, steps)};
}

// ---------------------------------------------------------------------------
// EMA

Outcome ema_correctness(const Dataset& train_set, const Dataset& test_set) {
  double worst = 0;
  for (double eta : {0.0, 0.5, 0.9, 0.99, 0.999}) {
    const ModelParams theta0 = mlp_init({20, 32, 5}, 1);
    const ModelParams student = mlp_init({20, 32, 5}, 2);
    ModelParams teacher = theta0;
    for (int k = 1; k <= 100; ++k) {
      teacher = ema_update(teacher, student, eta);
      const double ek = std::pow(eta, k);
      const ModelParams closed = param_linear_comb(theta0, student, ek, 1.0 - ek);
      worst = std::max(worst, (oracle::flatten(teacher) - oracle::flatten(closed)).cwiseAbs().maxCoeff());
    }
  }

  int copy_fail = 0, checked = 0;
  for (auto method : {Method::pgd_at_mt, Method::trades_mt}) {
    const TrainConfig cfg = short_config(method, 2);
    train(cfg, train_set, test_set, [&](const StepInfo& s) {
      if (s.epoch < cfg.rampup.start_epoch) {
        ++checked;
        if (!bitwise_equal(s.teacher, s.student)) ++copy_fail;
      }
    });
  }
  return {worst <= 1e-12 && copy_fail == 0 && checked > 0,
          fmt::format("max |EMA - closed form| {:.1e} for k<=100; teacher != student at {}/{} pre-E_s steps", worst,
                      copy_fail, checked)};
}

// ---------------------------------------------------------------------------
// Consistency identities

Outcome consistency_identities() {
  std::mt19937_64 rng(5);
  double self_worst = 0, kl_min = 1;
  for (int i = 0; i < 1000; ++i) {
    const Matrix p = oracle::random_distribution(1 + i % 4, 2 + i % 9, rng);
    const Matrix q = oracle::random_distribution(p.rows(), p.cols(), rng);
    Tape tape;
    auto pt = tape.constant(p), qt = tape.constant(q);
    self_worst = std::max({self_worst, std::abs(consistency_mse(pt, pt).item()), std::abs(consistency_kl(pt, pt).item())});
    kl_min = std::min(kl_min, consistency_kl(pt, qt).item());
  }
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0.5, 0.5;
  Tape tape;
  const double kl = consistency_kl(tape.constant(a), tape.constant(b)).item();
  const double kl_err = std::abs(kl - std::log(2.0));
  return {self_worst == 0.0 && kl_min >= 0.0 && kl_err <= 1e-9,
          fmt::format("max |L(p,p)| {:.1e}; min KL over 1000 pairs {:.3e}; |KL([1,0]||[.5,.5]) - ln 2| {:.1e}",
                      self_worst, kl_min, kl_err)};
}

// ---------------------------------------------------------------------------
// Desk-scale reproduction and landscape flatness

struct DeskRun {
  std::uint64_t seed;
  TrainedModel pgd_at;
  TrainedModel pgd_at_mt;
};

Outcome desk_reproduction(const std::vector<DeskRun>& runs) {
  std::vector<double> gap_at, gap_mt, rob_at, rob_mt;
  std::string rows;
  for (const auto& r : runs) {
    const auto& a = r.pgd_at.history.back();
    const auto& m = r.pgd_at_mt.history.back();
    gap_at.push_back(a.gap);
    gap_mt.push_back(m.gap);
    rob_at.push_back(a.rob_test);
    rob_mt.push_back(m.rob_test);
    rows += fmt::format("\n    seed {}: pgd_at nat {:.3f} rob {:.3f} gap {:.3f} | pgd_at_mt nat {:.3f} rob {:.3f} gap {:.3f}",
                        r.seed, a.nat_test, a.rob_test, a.gap, m.nat_test, m.rob_test, m.gap);
  }
  const double g_at = median3(gap_at), g_mt = median3(gap_mt);
  const double r_at = median3(rob_at), r_mt = median3(rob_mt);
  const bool pass = g_at > 0 && g_mt <= 0.7 * g_at && r_mt >= r_at;
  return {pass, fmt::format("median gap pgd_at {:.4f}, pgd_at_mt {:.4f} (ratio {:.1f}%, need <= 70%); median test "
                            "robust pgd_at {:.4f}, pgd_at_mt {:.4f}{}",
                            g_at, g_mt, g_at > 0 ? 100.0 * g_mt / g_at : 0.0, r_at, r_mt, rows)};
}

/// Mean CE on PGD examples, recomputed chunk by chunk with the plain-loop oracle.
double independent_adversarial_loss(const ModelParams& params, const Dataset& data, const AttackConfig& cfg,
                                    std::uint64_t seed) {
  double total = 0;
  for (Eigen::Index begin = 0, c = 0; begin < data.size(); begin += kEvalChunk, ++c) {
    const Eigen::Index count = std::min(kEvalChunk, data.size() - begin);
    const Matrix x = data.x.middleRows(begin, count);
    const Labels y(data.y.begin() + begin, data.y.begin() + begin + count);
    Rng rng = make_rng(seed, Stream::attack, {static_cast<std::uint64_t>(c)});
    const Matrix adv = pgd_attack(params, x, y, cfg, CrossEntropyLoss{}, rng);
    total += oracle::cross_entropy(oracle::mlp_logits(params, adv), y) * static_cast<double>(count);
  }
  return total / static_cast<double>(data.size());
}

Outcome landscape_flatness(const std::vector<DeskRun>& runs, const Dataset& train_set) {
  const auto grid = default_alpha_grid();
  const auto cfg = AttackConfig::training();
  const auto zero = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), 0.0) - grid.begin());
  std::vector<double> med_at, med_mt;
  double alpha0_err = 0;
  std::string rows;
  for (const auto& r : runs) {
    std::vector<double> at, mt;
    for (std::uint64_t d : {0u, 1u, 2u}) {
      for (auto* model : {&r.pgd_at, &r.pgd_at_mt}) {
        const ModelParams& params = model == &r.pgd_at ? model->student : model->teacher;
        const LandscapeSeries s = landscape_probe(params, train_set, grid, cfg, d);
        const double ref = independent_adversarial_loss(params, train_set, cfg, derive_seed(d, Stream::attack));
        alpha0_err = std::max(alpha0_err, std::abs(s.losses[zero] - ref));
        (model == &r.pgd_at ? at : mt).push_back(s.range());
      }
    }
    med_at.push_back(median3(at));
    med_mt.push_back(median3(mt));
    rows += fmt::format("\n    seed {}: range over directions pgd_at [{:.4f} {:.4f} {:.4f}] median {:.4f} | pgd_at_mt "
                        "[{:.4f} {:.4f} {:.4f}] median {:.4f}",
                        r.seed, at[0], at[1], at[2], med_at.back(), mt[0], mt[1], mt[2], med_mt.back());
  }
  const double a = median3(med_at), m = median3(med_mt);
  return {m <= a && alpha0_err <= 1e-9,
          fmt::format("median (over training seeds) of per-seed median range: pgd_at {:.4f}, pgd_at_mt {:.4f}; max "
                      "|alpha=0 loss - independent adversarial loss| {:.1e}{}",
                      a, m, alpha0_err, rows)};
}

// ---------------------------------------------------------------------------
// CLI determinism

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "atlab_acceptance_cli";
  const std::vector<std::string> files{"config.json",  "metrics.csv", "metrics.json", "last.json", "best.json",
                                       "student_last.json", "eval.json", "landscape.csv", "landscape.csv.json"};
  auto run_all = [&](int threads) {
    fs::remove_all(dir);
    const std::string env = fmt::format("AT_LAB_THREADS={} '{}'", threads, ATLAB_CLI_PATH);
    const std::string quiet = " > /dev/null 2>&1";
    const std::string d = dir.string();
    const std::vector<std::string> cmds{
        env + " train --out '" + d + "' -o method=pgd_at_mt -o epochs=4 -o rampup.start_epoch=2 -o rampup.ramp_len=2"
              " -o lr.decay_epochs=[2,3] -o hidden=[64,64] -o seed=5" + quiet,
        env + " eval --checkpoint '" + d + "/last.json' --dataset '" + d + "/config.json' --attack pgd10 --seed 3"
              " --report '" + d + "/eval.json'" + quiet,
        env + " landscape --checkpoint '" + d + "/last.json' --dataset '" + d + "/config.json' --points 5 --seed 2"
              " --out '" + d + "/landscape.csv'" + quiet};
    std::vector<std::string> out;
    for (const auto& c : cmds)
      if (std::system(c.c_str()) != 0) return out;
    for (const auto& f : files) out.push_back(slurp(dir / f));
    return out;
  };
  const auto first = run_all(1);
  const auto repeat = run_all(1);
  const auto threaded = run_all(3);
  fs::remove_all(dir);
  if (first.size() != files.size() || repeat.size() != files.size() || threaded.size() != files.size())
    return {false, "a CLI command exited nonzero"};
  std::vector<std::string> differing;
  for (std::size_t i = 0; i < files.size(); ++i)
    if (first[i].empty() || first[i] != repeat[i] || first[i] != threaded[i]) differing.push_back(files[i]);
  std::string detail = fmt::format("{} artifacts of train/eval/landscape compared across 2 runs with "
                                   "AT_LAB_THREADS=1 and 1 with AT_LAB_THREADS=3",
                                   files.size());
  for (const auto& f : differing) detail += "; differs: " + f;
  return {differing.empty(), detail};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << fmt::format("[{}] {} ({:.1f}s): {}\n", o.pass ? "PASS" : "FAIL", name, seconds, o.detail)
              << std::flush;
  };

  const auto [train_set, test_set] = load_datasets(DatasetSpec{});

  report("gradient oracle", gradient_oracle);
  report("attack invariants", attack_invariants);
  report("reductions", [&] { return reductions(train_set, test_set); });
  report("EMA correctness", [&] { return ema_correctness(train_set, test_set); });
  report("consistency identities", consistency_identities);

  std::vector<DeskRun> runs;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.method = Method::pgd_at;
    DeskRun run{seed, train(cfg, train_set, test_set), {}};
    cfg.method = Method::pgd_at_mt;
    run.pgd_at_mt = train(cfg, train_set, test_set);
    runs.push_back(std::move(run));
  }
  report("desk-scale robust overfitting", [&] { return desk_reproduction(runs); });
  report("landscape flatness", [&] { return landscape_flatness(runs, train_set); });
  report("CLI determinism", cli_determinism);

  std::cout << fmt::format("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
