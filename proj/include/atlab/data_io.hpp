#pragma once

#include "atlab/metrics.hpp"
#include "atlab/models.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace atlab {

/// Labeled inputs with features in [0, 1].
struct Dataset {
  Matrix x;  // n x d
  Labels y;
  int num_classes = 0;
  std::string name;
  std::string split;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
  void validate() const;
  bool operator==(const Dataset& o) const {
    return x.rows() == o.x.rows() && x.cols() == o.x.cols() && x == o.x && y == o.y && num_classes == o.num_classes;
  }
};

/// Rows [begin, begin + count) of a dataset.
Dataset slice(const Dataset& data, Eigen::Index begin, Eigen::Index count);
Dataset take(const Dataset& data, const std::vector<int>& indices);

/// Gaussian clusters around centers drawn uniformly in [0.2, 0.8]^d, clipped to
/// [0, 1]. Centers depend only on `seed`; `split` selects an independent sample
/// stream so train and test share centers.
Dataset gen_blobs(int n_per_class, int dim, int classes, double spread, std::uint64_t seed,
                  const std::string& split = "train");

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, count_mismatch, truncated };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// IDX image/label pair (big-endian; magics 0x00000803 and 0x00000801), pixels / 255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Column order of the metrics CSV.
inline constexpr const char* kMetricsCsvHeader = "epoch,nat_train,nat_test,rob_train,rob_test,gap,lambda,lr,gnorm_ce,gnorm_cons";

/// Decimal with 10 significant digits.
std::string format_metric(double v);

std::string metrics_csv(const History& history);
void write_metrics_csv(const History& history, const std::filesystem::path& path);

/// {"config": echo, "history": [...], plus any `extra` fields merged at top level}.
nlohmann::json metrics_json(const History& history, const nlohmann::json& config, const nlohmann::json& extra = {});
void write_metrics_json(const History& history, const nlohmann::json& config, const std::filesystem::path& path,
                        const nlohmann::json& extra = {});

/// Writes text, raising std::runtime_error on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace atlab
