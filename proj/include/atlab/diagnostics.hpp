#pragma once

#include "atlab/attacks.hpp"
#include "atlab/data_io.hpp"
#include "atlab/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace atlab {

/// Which inner maximization robust_accuracy runs.
enum class EvalLoss { cross_entropy, margin };

/// Fixed evaluation chunk; work is split on these boundaries regardless of
/// the worker count, so results never depend on threading.
inline constexpr Eigen::Index kEvalChunk = 128;

/// Runs fn(chunk_index) for every chunk on up to `threads` workers.
void parallel_chunks(std::size_t num_chunks, int threads, const std::function<void(std::size_t)>& fn);

/// argmax(logits) == label, with ties counted as wrong.
std::vector<bool> correct_predictions(const Matrix& logits, std::span<const int> y);

double natural_accuracy(const ModelParams& params, const Dataset& data);

/// Accuracy on attacked inputs. Chunk c draws its random start from
/// make_rng(seed, Stream::evaluation, {c}).
double robust_accuracy(const ModelParams& params, const Dataset& data, const AttackConfig& cfg, EvalLoss loss,
                       std::uint64_t seed, int threads = 1);

/// Train minus test robust accuracy, both sets attacked with the same seed.
double robust_gap(const ModelParams& params, const Dataset& train_set, const Dataset& test_set,
                  const AttackConfig& cfg, EvalLoss loss, std::uint64_t seed, int threads = 1);

struct GradNorms {
  double ce = 0;
  double cons = 0;
};

/// ||grad_theta_s CE(f(x_adv))|| and ||grad_theta_s L_cons(f(x_adv; s), f(x; t))||,
/// from two separate backward passes; the consistency weight is not applied.
GradNorms grad_norms(const ModelParams& student, const ModelParams& teacher, const Matrix& x, const Matrix& x_adv,
                     std::span<const int> y, ConsistencyKind kind);

/// Standard normal entries in every weight, zero biases.
ModelParams gaussian_direction(const ModelParams& like, Rng& rng);

/// Rescales each output-neuron filter (weight column) of d to the norm of the
/// same filter in theta; bias directions are zeroed. Zero-norm filters of d are
/// redrawn from rng.
ModelParams filter_normalize(const ModelParams& d, const ModelParams& theta, Rng& rng);

struct LandscapeSeries {
  std::vector<double> alpha_grid;
  std::vector<double> losses;
  std::uint64_t direction_seed = 0;

  double range() const;
};

/// n evenly spaced points in [lo, hi], with the middle point forced to exactly 0
/// when the interval is symmetric.
std::vector<double> linspace(double lo, double hi, int n);
std::vector<double> default_alpha_grid();

/// Mean CE on PGD examples crafted against `params`. Chunk c uses
/// make_rng(seed, Stream::attack, {c}).
double adversarial_loss(const ModelParams& params, const Dataset& data, const AttackConfig& cfg, std::uint64_t seed,
                        int threads = 1);

/// Adversarial loss along theta + alpha * d for a filter-normalized Gaussian d drawn
/// from make_rng(seed, Stream::direction). Every grid point reuses the same attack seed.
LandscapeSeries landscape_probe(const ModelParams& params, const Dataset& data, const std::vector<double>& alpha_grid,
                                const AttackConfig& cfg, std::uint64_t seed, int threads = 1);

/// Same probe along an explicit direction.
LandscapeSeries landscape_along(const ModelParams& params, const ModelParams& direction, const Dataset& data,
                                const std::vector<double>& alpha_grid, const AttackConfig& cfg, std::uint64_t seed,
                                int threads = 1);

std::string landscape_csv(const LandscapeSeries& series);
void write_landscape_csv(const LandscapeSeries& series, const std::filesystem::path& path);

}  // namespace atlab
