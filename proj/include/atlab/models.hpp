#pragma once

#include "atlab/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace atlab {

using Matrix = ad::Matrix<double>;
using Tensor = ad::Tensor<double>;
using Tape = ad::Tape<double>;
using Labels = std::vector<int>;

struct DenseLayer {
  Matrix weight;  // d_in x d_out
  Matrix bias;    // 1 x d_out

  bool operator==(const DenseLayer& other) const {
    return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
           bias.cols() == other.bias.cols() && weight == other.weight && bias == other.bias;
  }
};

/// Parameters of a fully connected ReLU classifier.
struct ModelParams {
  std::vector<int> arch;
  std::uint64_t seed = 0;
  std::vector<DenseLayer> layers;

  int input_dim() const { return arch.front(); }
  int num_classes() const { return arch.back(); }
  /// Exact equality of every parameter value.
  bool operator==(const ModelParams& other) const { return arch == other.arch && layers == other.layers; }
};

/// Leaf tensors for one ModelParams instance on a tape.
struct BoundLayer {
  Tensor weight;
  Tensor bias;
};
using BoundParams = std::vector<BoundLayer>;

/// Glorot-uniform weights, zero biases.
ModelParams mlp_init(const std::vector<int>& arch, std::uint64_t seed);

/// Zeros with the same architecture.
ModelParams zeros_like(const ModelParams& params);

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad);

/// Logits on the tape: affine/relu alternation, last layer affine only.
Tensor forward(const BoundParams& params, const Tensor& x);

/// Logits without recording anything.
Matrix logits(const ModelParams& params, const Matrix& x);

/// Gradient slots of bound parameters gathered into a ModelParams.
ModelParams gradients(const BoundParams& bound, const ModelParams& like);

bool same_arch(const ModelParams& a, const ModelParams& b);
void require_same_arch(const ModelParams& a, const ModelParams& b, const char* what);

/// c_a * a + c_b * b, elementwise over every tensor.
ModelParams param_linear_comb(const ModelParams& a, const ModelParams& b, double c_a, double c_b);

double squared_norm(const ModelParams& p);
double norm(const ModelParams& p);
bool all_finite(const ModelParams& p);

/// Checkpoint JSON: {"arch":[..],"seed":n,"layers":[{"w":[..row-major..],"b":[..]}]},
/// numbers printed with 17 significant digits.
std::string checkpoint_json(const ModelParams& params);
ModelParams parse_checkpoint(const std::string& text);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace atlab
