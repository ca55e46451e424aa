#include "atlab/diagnostics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace atlab {

void parallel_chunks(std::size_t num_chunks, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), num_chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < num_chunks; c = next++) {
        try {
          fn(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<bool> correct_predictions(const Matrix& z, std::span<const int> y) {
  std::vector<bool> out(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    bool ok = true;
    for (Eigen::Index j = 0; j < z.cols() && ok; ++j)
      if (j != y[i] && z(i, j) >= z(i, y[i])) ok = false;
    out[i] = ok;
  }
  return out;
}

namespace {

std::size_t chunk_count(Eigen::Index n) { return static_cast<std::size_t>((n + kEvalChunk - 1) / kEvalChunk); }

Dataset chunk(const Dataset& data, std::size_t c) {
  const Eigen::Index begin = static_cast<Eigen::Index>(c) * kEvalChunk;
  return slice(data, begin, std::min(kEvalChunk, data.size() - begin));
}

double correct_fraction(const std::vector<long>& counts, Eigen::Index n) {
  long total = 0;
  for (long c : counts) total += c;
  return static_cast<double>(total) / static_cast<double>(n);
}

}  // namespace

double natural_accuracy(const ModelParams& params, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("natural_accuracy: empty dataset");
  const auto ok = correct_predictions(logits(params, data.x), data.y);
  return static_cast<double>(std::count(ok.begin(), ok.end(), true)) / static_cast<double>(data.size());
}

double robust_accuracy(const ModelParams& params, const Dataset& data, const AttackConfig& cfg, EvalLoss loss,
                       std::uint64_t seed, int threads) {
  if (data.size() == 0) throw std::invalid_argument("robust_accuracy: empty dataset");
  cfg.validate();
  const std::size_t chunks = chunk_count(data.size());
  std::vector<long> counts(chunks, 0);
  parallel_chunks(chunks, threads, [&](std::size_t c) {
    const Dataset part = chunk(data, c);
    Rng rng = make_rng(seed, Stream::evaluation, {c});
    const Matrix x_adv = loss == EvalLoss::margin ? cw_inf_attack(params, part.x, part.y, cfg, rng)
                                                  : pgd_attack(params, part.x, part.y, cfg, CrossEntropyLoss{}, rng);
    const auto ok = correct_predictions(logits(params, x_adv), part.y);
    counts[c] = std::count(ok.begin(), ok.end(), true);
  });
  return correct_fraction(counts, data.size());
}

double robust_gap(const ModelParams& params, const Dataset& train_set, const Dataset& test_set,
                  const AttackConfig& cfg, EvalLoss loss, std::uint64_t seed, int threads) {
  return robust_accuracy(params, train_set, cfg, loss, seed, threads) -
         robust_accuracy(params, test_set, cfg, loss, seed, threads);
}

namespace {

double gradient_norm(const ModelParams& student, const std::function<Tensor(Tape&, const BoundParams&)>& build) {
  Tape tape;
  auto bound = bind(tape, student, true);
  tape.backward(build(tape, bound));
  return norm(gradients(bound, student));
}

}  // namespace

GradNorms grad_norms(const ModelParams& student, const ModelParams& teacher, const Matrix& x, const Matrix& x_adv,
                     std::span<const int> y, ConsistencyKind kind) {
  require_same_arch(student, teacher, "grad_norms");
  GradNorms out;
  out.ce = gradient_norm(student, [&](Tape& tape, const BoundParams& bound) {
    return ad::softmax_cross_entropy(forward(bound, tape.constant(x_adv)), y);
  });
  const Matrix teacher_probs = ad::softmax_rows<double>(logits(teacher, x));
  out.cons = gradient_norm(student, [&](Tape& tape, const BoundParams& bound) {
    return consistency(ad::softmax(forward(bound, tape.constant(x_adv))), tape.constant(teacher_probs), kind);
  });
  return out;
}

ModelParams gaussian_direction(const ModelParams& like, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  ModelParams d = zeros_like(like);
  for (auto& l : d.layers)
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = n01(rng);
  return d;
}

ModelParams filter_normalize(const ModelParams& d, const ModelParams& theta, Rng& rng) {
  require_same_arch(d, theta, "filter_normalize");
  std::normal_distribution<double> n01(0.0, 1.0);
  ModelParams out = d;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& w = out.layers[l].weight;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double dn = w.col(j).norm();
      while (dn == 0.0) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = n01(rng);
        dn = w.col(j).norm();
      }
      w.col(j) *= theta.layers[l].weight.col(j).norm() / dn;
    }
    out.layers[l].bias.setZero();
  }
  return out;
}

double LandscapeSeries::range() const {
  if (losses.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  return *hi - *lo;
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 2) throw std::invalid_argument("linspace: need at least two points");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  out.back() = hi;
  if (lo == -hi && n % 2 == 1) out[n / 2] = 0.0;
  return out;
}

std::vector<double> default_alpha_grid() { return linspace(-1.0, 1.0, 21); }

double adversarial_loss(const ModelParams& params, const Dataset& data, const AttackConfig& cfg, std::uint64_t seed,
                        int threads) {
  if (data.size() == 0) throw std::invalid_argument("adversarial_loss: empty dataset");
  const std::size_t chunks = chunk_count(data.size());
  std::vector<double> sums(chunks, 0.0);
  parallel_chunks(chunks, threads, [&](std::size_t c) {
    const Dataset part = chunk(data, c);
    Rng rng = make_rng(seed, Stream::attack, {c});
    const Matrix x_adv = pgd_attack(params, part.x, part.y, cfg, CrossEntropyLoss{}, rng);
    Tape tape;
    auto bound = bind(tape, params, false);
    const double mean_ce = ad::softmax_cross_entropy(forward(bound, tape.constant(x_adv)), part.y).item();
    sums[c] = mean_ce * static_cast<double>(part.size());
  });
  double total = 0;
  for (double s : sums) total += s;
  return total / static_cast<double>(data.size());
}

LandscapeSeries landscape_along(const ModelParams& params, const ModelParams& direction, const Dataset& data,
                                const std::vector<double>& alpha_grid, const AttackConfig& cfg, std::uint64_t seed,
                                int threads) {
  if (std::find(alpha_grid.begin(), alpha_grid.end(), 0.0) == alpha_grid.end())
    throw std::invalid_argument("landscape: alpha grid must contain 0");
  LandscapeSeries series{alpha_grid, {}, seed};
  const std::uint64_t attack_seed = derive_seed(seed, Stream::attack);
  for (double alpha : alpha_grid) {
    const ModelParams perturbed = param_linear_comb(params, direction, 1.0, alpha);
    series.losses.push_back(adversarial_loss(perturbed, data, cfg, attack_seed, threads));
  }
  return series;
}

LandscapeSeries landscape_probe(const ModelParams& params, const Dataset& data, const std::vector<double>& alpha_grid,
                                const AttackConfig& cfg, std::uint64_t seed, int threads) {
  Rng rng = make_rng(seed, Stream::direction);
  const ModelParams d = filter_normalize(gaussian_direction(params, rng), params, rng);
  return landscape_along(params, d, data, alpha_grid, cfg, seed, threads);
}

std::string landscape_csv(const LandscapeSeries& series) {
  std::string out = "alpha,loss\n";
  for (std::size_t i = 0; i < series.alpha_grid.size(); ++i)
    out += fmt::format("{:.17g},{:.17g}\n", series.alpha_grid[i], series.losses[i]);
  return out;
}

void write_landscape_csv(const LandscapeSeries& series, const std::filesystem::path& path) {
  write_text(path, landscape_csv(series));
}

}  // namespace atlab
