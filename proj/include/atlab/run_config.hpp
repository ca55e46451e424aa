#pragma once

#include "atlab/data_io.hpp"
#include "atlab/trainer.hpp"

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atlab {

/// Dataset selector of a run: synthetic blobs or an IDX file pair.
struct DatasetSpec {
  std::string kind = "blobs";
  // blobs
  int train_per_class = 200;
  int test_per_class = 200;
  int dim = 20;
  int classes = 5;
  double spread = 0.25;
  std::uint64_t seed = 0;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  int train_limit = 1000;
  int test_limit = 1000;
};

struct RunConfig {
  TrainConfig train;
  DatasetSpec dataset;
  std::string output_dir = "runs/default";
};

/// A config problem tied to a field path such as "attack.steps".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::invalid_argument("config field '" + field + "': " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Fully resolved JSON echo; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const DatasetSpec& spec);

/// Strict parse: unknown keys and ill-typed values raise ConfigError. Missing
/// keys take defaults. Numbers may also be given as "a/b" strings.
RunConfig parse_run_config(const nlohmann::json& doc);
DatasetSpec parse_dataset_spec(const nlohmann::json& doc);

/// Applies "dotted.path=value" overrides; values parse as JSON, falling back to
/// plain strings.
nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string>& overrides);

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// (train, test) for a dataset selector.
std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec);

}  // namespace atlab
