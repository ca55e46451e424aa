#include "atlab/models.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace atlab {

ModelParams mlp_init(const std::vector<int>& arch, std::uint64_t seed) {
  if (arch.size() < 2) throw std::invalid_argument("mlp_init: architecture needs at least two sizes");
  for (int s : arch)
    if (s < 1) throw std::invalid_argument("mlp_init: layer sizes must be positive");
  ModelParams p{arch, seed, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const int d_in = arch[l], d_out = arch[l + 1];
    const double s = std::sqrt(6.0 / (d_in + d_out));
    std::uniform_real_distribution<double> u(-s, s);
    DenseLayer layer{Matrix(d_in, d_out), Matrix::Zero(1, d_out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z{params.arch, params.seed, {}};
  for (const auto& l : params.layers)
    z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Matrix::Zero(1, l.bias.cols())});
  return z;
}

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad) {
  BoundParams bound;
  bound.reserve(params.layers.size());
  for (const auto& l : params.layers)
    bound.push_back({tape.leaf(l.weight, 2, requires_grad), tape.leaf(l.bias, 1, requires_grad)});
  return bound;
}

Tensor forward(const BoundParams& params, const Tensor& x) {
  if (params.empty()) throw std::invalid_argument("forward: model has no layers");
  if (x.rank() != 2 || x.value().cols() != params.front().weight.value().rows())
    throw ad::ShapeError(fmt::format("forward: input shape {} does not match input dimension {}", x.shape().str(),
                                     params.front().weight.value().rows()));
  Tensor h = x;
  for (std::size_t l = 0; l < params.size(); ++l) {
    h = ad::affine(h, params[l].weight, params[l].bias);
    if (l + 1 < params.size()) h = ad::relu(h);
  }
  return h;
}

Matrix logits(const ModelParams& params, const Matrix& x) {
  if (x.cols() != params.input_dim())
    throw ad::ShapeError(fmt::format("logits: input has {} features, model expects {}", x.cols(), params.input_dim()));
  Matrix h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix next = h * params.layers[l].weight;
    next.rowwise() += params.layers[l].bias.row(0);
    if (l + 1 < params.layers.size()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return h;
}

ModelParams gradients(const BoundParams& bound, const ModelParams& like) {
  ModelParams g{like.arch, like.seed, {}};
  for (const auto& l : bound) g.layers.push_back({l.weight.grad(), l.bias.grad()});
  return g;
}

bool same_arch(const ModelParams& a, const ModelParams& b) {
  if (a.arch != b.arch || a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weight.rows() != b.layers[l].weight.rows() ||
        a.layers[l].weight.cols() != b.layers[l].weight.cols() || a.layers[l].bias.cols() != b.layers[l].bias.cols())
      return false;
  }
  return true;
}

void require_same_arch(const ModelParams& a, const ModelParams& b, const char* what) {
  if (!same_arch(a, b)) throw std::invalid_argument(std::string(what) + ": architecture mismatch");
}

ModelParams param_linear_comb(const ModelParams& a, const ModelParams& b, double c_a, double c_b) {
  require_same_arch(a, b, "param_linear_comb");
  ModelParams out{a.arch, a.seed, {}};
  out.layers.reserve(a.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    out.layers.push_back({c_a * a.layers[l].weight + c_b * b.layers[l].weight,
                          c_a * a.layers[l].bias + c_b * b.layers[l].bias});
  }
  return out;
}

double squared_norm(const ModelParams& p) {
  double s = 0;
  for (const auto& l : p.layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

double norm(const ModelParams& p) { return std::sqrt(squared_norm(p)); }

bool all_finite(const ModelParams& p) {
  for (const auto& l : p.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

namespace {

void append_values(std::string& out, const Matrix& m) {
  out += '[';
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("{:.17g}", m.data()[i]);
  }
  out += ']';
}

}  // namespace

std::string checkpoint_json(const ModelParams& params) {
  std::string out = "{\"arch\":[";
  for (std::size_t i = 0; i < params.arch.size(); ++i) out += fmt::format("{}{}", i ? "," : "", params.arch[i]);
  out += fmt::format("],\"seed\":{},\"layers\":[", params.seed);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (l) out += ',';
    out += "{\"w\":";
    append_values(out, params.layers[l].weight);
    out += ",\"b\":";
    append_values(out, params.layers[l].bias);
    out += '}';
  }
  out += "]}\n";
  return out;
}

ModelParams parse_checkpoint(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("arch") || !j.contains("layers"))
    throw std::runtime_error("checkpoint: missing arch or layers");
  ModelParams p;
  p.arch = j.at("arch").get<std::vector<int>>();
  p.seed = j.value("seed", std::uint64_t{0});
  if (p.arch.size() < 2) throw std::runtime_error("checkpoint: arch needs at least two sizes");
  const auto& layers = j.at("layers");
  if (!layers.is_array() || layers.size() + 1 != p.arch.size())
    throw std::runtime_error("checkpoint: layer count does not match arch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int d_in = p.arch[l], d_out = p.arch[l + 1];
    auto w = layers[l].at("w").get<std::vector<double>>();
    auto b = layers[l].at("b").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(d_in) * d_out || b.size() != static_cast<std::size_t>(d_out))
      throw std::runtime_error(fmt::format("checkpoint: layer {} has wrong number of values", l));
    DenseLayer layer{Matrix(d_in, d_out), Matrix(1, d_out)};
    std::copy(w.begin(), w.end(), layer.weight.data());
    std::copy(b.begin(), b.end(), layer.bias.data());
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_json(params);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace atlab
