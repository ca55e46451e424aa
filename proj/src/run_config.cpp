#include "atlab/run_config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>
#include <sstream>

namespace atlab {

using nlohmann::json;

namespace {

json attack_json(const AttackConfig& a) {
  return {{"epsilon", a.epsilon},     {"step_size", a.step_size}, {"steps", a.steps},
          {"random_init", a.random_init}, {"clamp_lo", a.clamp_lo},   {"clamp_hi", a.clamp_hi}};
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

/// Object access with unknown-key detection.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }
  const json& at(const std::string& key) { return obj_.at(key); }
  std::string path(const std::string& key) const { return join(path_, key); }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      const auto slash = s.find('/');
      try {
        std::size_t used = 0;
        if (slash == std::string::npos) {
          double d = std::stod(s, &used);
          if (used == s.size()) return d;
        } else {
          const std::string num = s.substr(0, slash), den = s.substr(slash + 1);
          std::size_t u1 = 0, u2 = 0;
          const double a = std::stod(num, &u1), b = std::stod(den, &u2);
          if (u1 == num.size() && u2 == den.size() && b != 0) return a / b;
        }
      } catch (const std::exception&) {
      }
    }
    throw ConfigError(path(key), "expected a number");
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key), "expected an integer");
    return v.get<int>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(path(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(path(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback) {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected a list of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(path(key), "expected a list of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

AttackConfig parse_attack(const json& doc, const std::string& path, const AttackConfig& defaults) {
  Fields f(doc, path);
  AttackConfig a;
  a.epsilon = f.number("epsilon", defaults.epsilon);
  a.step_size = f.number("step_size", defaults.step_size);
  a.steps = f.integer("steps", defaults.steps);
  a.random_init = f.boolean("random_init", defaults.random_init);
  a.clamp_lo = f.number("clamp_lo", defaults.clamp_lo);
  a.clamp_hi = f.number("clamp_hi", defaults.clamp_hi);
  f.finish();
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return a;
}

template <class Fn>
auto wrap_field(const std::string& field, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

json to_json(const DatasetSpec& d) {
  if (d.kind == "idx") {
    return {{"kind", d.kind},
            {"train_images", d.train_images},
            {"train_labels", d.train_labels},
            {"test_images", d.test_images},
            {"test_labels", d.test_labels},
            {"train_limit", d.train_limit},
            {"test_limit", d.test_limit}};
  }
  return {{"kind", d.kind},         {"train_per_class", d.train_per_class},
          {"test_per_class", d.test_per_class}, {"dim", d.dim},
          {"classes", d.classes},   {"spread", d.spread},
          {"seed", d.seed}};
}

json to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  return {{"method", to_string(t.method)},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", {{"initial", t.lr.initial}, {"decay_epochs", t.lr.decay_epochs}, {"factor", t.lr.factor}}},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"beta", t.beta},
          {"attack", attack_json(t.attack)},
          {"eval_attack", attack_json(t.eval_attack)},
          {"consistency", to_string(t.consistency)},
          {"rampup",
           {{"lambda_max", t.rampup.lambda_max}, {"start_epoch", t.rampup.start_epoch}, {"ramp_len", t.rampup.ramp_len}}},
          {"ema_decay", t.ema_decay},
          {"hidden", t.hidden},
          {"seed", t.seed},
          {"dataset", to_json(cfg.dataset)},
          {"output_dir", cfg.output_dir}};
}

DatasetSpec parse_dataset_spec(const json& doc) {
  Fields f(doc, "dataset");
  DatasetSpec d;
  d.kind = f.string("kind", d.kind);
  if (d.kind == "blobs") {
    d.train_per_class = f.integer("train_per_class", d.train_per_class);
    d.test_per_class = f.integer("test_per_class", d.test_per_class);
    d.dim = f.integer("dim", d.dim);
    d.classes = f.integer("classes", d.classes);
    d.spread = f.number("spread", d.spread);
    d.seed = f.unsigned_integer("seed", d.seed);
    if (d.train_per_class < 1) throw ConfigError("dataset.train_per_class", "must be >= 1");
    if (d.test_per_class < 1) throw ConfigError("dataset.test_per_class", "must be >= 1");
    if (d.dim < 1) throw ConfigError("dataset.dim", "must be >= 1");
    if (d.classes < 2) throw ConfigError("dataset.classes", "must be >= 2");
    if (!(d.spread > 0)) throw ConfigError("dataset.spread", "must be > 0");
  } else if (d.kind == "idx") {
    d.train_images = f.string("train_images", "");
    d.train_labels = f.string("train_labels", "");
    d.test_images = f.string("test_images", "");
    d.test_labels = f.string("test_labels", "");
    d.train_limit = f.integer("train_limit", d.train_limit);
    d.test_limit = f.integer("test_limit", d.test_limit);
    for (const char* key : {"train_images", "train_labels", "test_images", "test_labels"})
      if (!doc.contains(key)) throw ConfigError(std::string("dataset.") + key, "required for kind 'idx'");
  } else {
    throw ConfigError("dataset.kind", "expected 'blobs' or 'idx'");
  }
  f.finish();
  return d;
}

RunConfig parse_run_config(const json& doc) {
  Fields f(doc, "");
  RunConfig cfg;
  auto& t = cfg.train;
  t.method = wrap_field("method", [&] { return parse_method(f.string("method", to_string(t.method))); });
  t.epochs = f.integer("epochs", t.epochs);
  t.batch_size = f.integer("batch_size", t.batch_size);
  if (f.has("lr")) {
    Fields lr(f.at("lr"), "lr");
    t.lr.initial = lr.number("initial", t.lr.initial);
    t.lr.decay_epochs = lr.int_list("decay_epochs", t.lr.decay_epochs);
    t.lr.factor = lr.number("factor", t.lr.factor);
    lr.finish();
  }
  t.momentum = f.number("momentum", t.momentum);
  t.weight_decay = f.number("weight_decay", t.weight_decay);
  t.beta = f.number("beta", t.beta);
  if (f.has("attack")) t.attack = parse_attack(f.at("attack"), "attack", t.attack);
  // The evaluation attack follows the training epsilon unless given.
  AttackConfig eval_defaults = AttackConfig::evaluation(10, t.attack.epsilon);
  eval_defaults.clamp_lo = t.attack.clamp_lo;
  eval_defaults.clamp_hi = t.attack.clamp_hi;
  if (eval_defaults.epsilon == 0) eval_defaults.step_size = t.eval_attack.step_size;
  t.eval_attack = f.has("eval_attack") ? parse_attack(f.at("eval_attack"), "eval_attack", eval_defaults) : eval_defaults;
  t.consistency =
      wrap_field("consistency", [&] { return parse_consistency_kind(f.string("consistency", to_string(t.consistency))); });
  if (f.has("rampup")) {
    Fields r(f.at("rampup"), "rampup");
    t.rampup.lambda_max = r.number("lambda_max", t.rampup.lambda_max);
    t.rampup.start_epoch = r.integer("start_epoch", t.rampup.start_epoch);
    t.rampup.ramp_len = r.integer("ramp_len", t.rampup.ramp_len);
    r.finish();
  }
  t.ema_decay = f.number("ema_decay", t.ema_decay);
  t.hidden = f.int_list("hidden", t.hidden);
  t.seed = f.unsigned_integer("seed", t.seed);
  if (f.has("dataset")) cfg.dataset = parse_dataset_spec(f.at("dataset"));
  cfg.output_dir = f.string("output_dir", cfg.output_dir);
  f.finish();

  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto space = msg.find(' ');
    throw ConfigError(space == std::string::npos ? "<root>" : msg.substr(0, space), msg);
  }
  return cfg;
}

json apply_overrides(json doc, const std::vector<std::string>& overrides) {
  if (doc.is_null()) doc = json::object();
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(ov, "override must look like key=value");
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
      if (!node->contains(path[i])) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
    }
    if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
    (*node)[path.back()] = value;
  }
  return doc;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
  }
  return parse_run_config(apply_overrides(std::move(doc), overrides));
}

std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec) {
  if (spec.kind == "blobs") {
    return {gen_blobs(spec.train_per_class, spec.dim, spec.classes, spec.spread, spec.seed, "train"),
            gen_blobs(spec.test_per_class, spec.dim, spec.classes, spec.spread, spec.seed, "test")};
  }
  Dataset train = load_idx(spec.train_images, spec.train_labels);
  Dataset test = load_idx(spec.test_images, spec.test_labels);
  if (spec.train_limit > 0 && train.size() > spec.train_limit) train = slice(train, 0, spec.train_limit);
  if (spec.test_limit > 0 && test.size() > spec.test_limit) test = slice(test, 0, spec.test_limit);
  train.split = "train";
  test.split = "test";
  const int classes = std::max(train.num_classes, test.num_classes);
  train.num_classes = test.num_classes = classes;
  return {std::move(train), std::move(test)};
}

}  // namespace atlab
