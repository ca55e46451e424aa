#include "atlab/data_io.hpp"

#include "atlab/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

namespace atlab {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<Eigen::Index>(y.size()) != x.rows())
    throw std::invalid_argument(fmt::format("dataset {}: {} rows but {} labels", name, x.rows(), y.size()));
  if (x.size() > 0 && (x.minCoeff() < 0.0 || x.maxCoeff() > 1.0))
    throw std::invalid_argument(fmt::format("dataset {}: features outside [0, 1]", name));
  for (int label : y)
    if (label < 0 || label >= num_classes)
      throw std::invalid_argument(fmt::format("dataset {}: label {} outside [0, {})", name, label, num_classes));
}

Dataset slice(const Dataset& data, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > data.size())
    throw std::out_of_range(fmt::format("slice [{}, {}) outside {} rows", begin, begin + count, data.size()));
  Dataset out{data.x.middleRows(begin, count), Labels(data.y.begin() + begin, data.y.begin() + begin + count),
              data.num_classes, data.name, data.split};
  return out;
}

Dataset take(const Dataset& data, const std::vector<int>& indices) {
  Dataset out{Matrix(static_cast<Eigen::Index>(indices.size()), data.dim()), {}, data.num_classes, data.name,
              data.split};
  out.y.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(indices[i]);
    out.y.push_back(data.y[indices[i]]);
  }
  return out;
}

Dataset gen_blobs(int n_per_class, int dim, int classes, double spread, std::uint64_t seed, const std::string& split) {
  if (classes < 2) throw std::invalid_argument("gen_blobs: need at least two classes");
  if (!(spread > 0)) throw std::invalid_argument("gen_blobs: spread must be positive");
  if (n_per_class < 1 || dim < 1) throw std::invalid_argument("gen_blobs: sizes must be positive");

  Rng center_rng = make_rng(seed, Stream::data, {0});
  std::uniform_real_distribution<double> u(0.2, 0.8);
  Matrix centers(classes, dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = u(center_rng);

  Rng sample_rng = make_rng(seed, Stream::data, {1, fnv1a(split)});
  std::normal_distribution<double> noise(0.0, spread);
  Dataset out{Matrix(static_cast<Eigen::Index>(n_per_class) * classes, dim), {}, classes, "blobs", split};
  out.y.reserve(out.x.rows());
  // Interleaved by class so any prefix is balanced.
  Eigen::Index row = 0;
  for (int i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < classes; ++c, ++row) {
      for (int k = 0; k < dim; ++k) out.x(row, k) = std::clamp(centers(c, k) + noise(sample_rng), 0.0, 1.0);
      out.y.push_back(c);
    }
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (const auto magic = read_be32(images, 0, images_path); magic != 0x00000803)
    throw IdxError(IdxError::Kind::bad_magic, fmt::format("{}: bad magic 0x{:08x}", images_path.string(), magic));
  if (const auto magic = read_be32(labels, 0, labels_path); magic != 0x00000801)
    throw IdxError(IdxError::Kind::bad_magic, fmt::format("{}: bad magic 0x{:08x}", labels_path.string(), magic));

  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n != n_labels)
    throw IdxError(IdxError::Kind::count_mismatch, fmt::format("{} images but {} labels", n, n_labels));
  const std::size_t d = rows * cols;
  if (images.size() < 16 + n * d)
    throw IdxError(IdxError::Kind::truncated, images_path.string() + ": truncated pixel data");
  if (labels.size() < 8 + n) throw IdxError(IdxError::Kind::truncated, labels_path.string() + ": truncated labels");

  Dataset out{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)), {}, 0, "idx", ""};
  for (std::size_t i = 0; i < n * d; ++i) out.x.data()[i] = images[16 + i] / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.y.push_back(labels[8 + i]);
    max_label = std::max(max_label, out.y.back());
  }
  out.num_classes = std::max(2, max_label + 1);
  return out;
}

std::string format_metric(double v) { return fmt::format("{:.10g}", v); }

std::string metrics_csv(const History& history) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : history) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.epoch, format_metric(r.nat_train), format_metric(r.nat_test),
                       format_metric(r.rob_train), format_metric(r.rob_test), format_metric(r.gap),
                       format_metric(r.lambda), format_metric(r.lr), format_metric(r.gnorm_ce),
                       format_metric(r.gnorm_cons));
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_metrics_csv(const History& history, const std::filesystem::path& path) {
  if (history.empty()) throw std::invalid_argument("write_metrics_csv: empty history");
  write_text(path, metrics_csv(history));
}

namespace {

// Rounds through the 10-digit rendering so the JSON dump shows that decimal.
double rendered(double v) {
  if (!std::isfinite(v)) return v;
  return std::stod(format_metric(v));
}

}  // namespace

nlohmann::json metrics_json(const History& history, const nlohmann::json& config, const nlohmann::json& extra) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : history) {
    rows.push_back({{"epoch", r.epoch},
                    {"nat_train", rendered(r.nat_train)},
                    {"nat_test", rendered(r.nat_test)},
                    {"rob_train", rendered(r.rob_train)},
                    {"rob_test", rendered(r.rob_test)},
                    {"gap", rendered(r.gap)},
                    {"lambda", rendered(r.lambda)},
                    {"lr", rendered(r.lr)},
                    {"gnorm_ce", rendered(r.gnorm_ce)},
                    {"gnorm_cons", rendered(r.gnorm_cons)},
                    {"train_loss", rendered(r.train_loss)}});
  }
  nlohmann::json out = {{"config", config}, {"history", rows}};
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) out[it.key()] = it.value();
  return out;
}

void write_metrics_json(const History& history, const nlohmann::json& config, const std::filesystem::path& path,
                        const nlohmann::json& extra) {
  if (history.empty()) throw std::invalid_argument("write_metrics_json: empty history");
  write_text(path, metrics_json(history, config, extra).dump(2) + "\n");
}

}  // namespace atlab
