#pragma once

// JSON experiment configuration: training hyper-parameters, dataset spec,
// optional encoder pretraining, output location and seeds.

#include "selftune/trainer.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace selftune {

using Json = nlohmann::ordered_json;

/// Invalid configuration; the message names the offending field.
struct ConfigError : ArgumentError {
  using ArgumentError::ArgumentError;
};

struct DatasetSpec {
  // gaussian_mixture | blob_images | csv | images
  std::string kind = "gaussian_mixture";
  int num_categories = 8;
  int dim = 32;           // gaussian_mixture
  int per_class = 60;     // generators
  double separation = 3.0;
  int channels = 1;       // blob_images
  int side = 8;
  double noise = 0.1;
  std::string path;       // csv file or image directory
  double label_proportion = 0.1;
  std::optional<int> labels_per_class;
  double test_fraction = 0.2;

  bool operator==(const DatasetSpec&) const = default;
};

/// Supervised pretraining of the encoder on a source task before the target
/// run. Without `path`, the source is synthesized by the target's generator
/// with `source_categories` categories and fresh centers.
struct PretrainSpec {
  bool enabled = false;
  int source_categories = 64;
  int per_class = 60;
  int epochs = 20;
  std::string path;

  bool operator==(const PretrainSpec&) const = default;
};

struct ExperimentConfig {
  TrainConfig train;
  DatasetSpec dataset;
  PretrainSpec pretrain;
  std::string output_dir = "runs/default";
  std::vector<std::uint64_t> seeds = {0, 1, 2};

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const;
};

namespace config_detail {

/// Walks one JSON object, remembering which keys were read so that leftovers
/// can be reported as unknown.
class Reader {
 public:
  Reader(const Json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (auto* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, int& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        throw ConfigError(where(key) + "integer out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    if (auto* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      T x{};
      get(key, x);
      out = x;
    }
  }

  /// Throws for the first key that no `get` asked about.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + field(it.key()) + "'");
  }

  std::string where(const std::string& key) const { return "field '" + field(key) + "': "; }

 private:
  const Json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

inline AugmentationPolicy read_augmentation(const Json& j, const std::string& name, AugmentationPolicy p) {
  Reader r(j, name);
  std::string kind = to_string(p.kind);
  r.get("kind", kind);
  r.get("strength", p.strength);
  r.finish();
  try {
    p.kind = augmentation_kind_from_string(kind);
  } catch (const ArgumentError& e) {
    throw ConfigError(r.where("kind") + e.what());
  }
  return p;
}

inline Json write_augmentation(const AugmentationPolicy& p) {
  return Json{{"kind", to_string(p.kind)}, {"strength", p.strength}};
}

}  // namespace config_detail

inline Json to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  Json j;
  j["method"] = to_string(t.method);
  j["temperature"] = t.temperature;
  j["keys_per_category"] = t.keys_per_category;
  j["projector_dim"] = t.projector_dim;
  j["base_lr"] = t.base_lr;
  j["classifier_lr_multiplier"] = t.classifier_lr_multiplier;
  j["sgd_momentum"] = t.sgd_momentum;
  j["key_momentum"] = t.key_momentum ? Json(*t.key_momentum) : Json(nullptr);
  j["weight_decay"] = t.weight_decay;
  j["labeled_batch"] = t.labeled_batch;
  j["unlabeled_batch"] = t.unlabeled_batch;
  j["epochs"] = t.epochs;
  j["seed"] = t.seed;
  j["threshold"] = t.threshold;
  j["disable_pgc_labeled"] = t.disable_pgc_labeled;
  j["disable_pgc_unlabeled"] = t.disable_pgc_unlabeled;
  j["separate_queues"] = t.separate_queues;
  j["normalize_keys"] = t.normalize_keys;
  j["hidden_dim"] = t.hidden_dim;
  j["feature_dim"] = t.feature_dim;
  j["projector_hidden"] = t.projector_hidden;
  j["conv_channels"] = t.conv_channels;
  j["freeze_encoder"] = t.freeze_encoder;
  j["query_augmentation"] = config_detail::write_augmentation(t.query_augmentation);
  j["key_augmentation"] = config_detail::write_augmentation(t.key_augmentation);

  const DatasetSpec& d = c.dataset;
  j["dataset"] = Json{{"kind", d.kind},
                      {"num_categories", d.num_categories},
                      {"dim", d.dim},
                      {"per_class", d.per_class},
                      {"separation", d.separation},
                      {"channels", d.channels},
                      {"side", d.side},
                      {"noise", d.noise},
                      {"path", d.path},
                      {"label_proportion", d.label_proportion},
                      {"labels_per_class", d.labels_per_class ? Json(*d.labels_per_class) : Json(nullptr)},
                      {"test_fraction", d.test_fraction}};
  const PretrainSpec& p = c.pretrain;
  j["pretrain"] = Json{{"enabled", p.enabled},
                       {"source_categories", p.source_categories},
                       {"per_class", p.per_class},
                       {"epochs", p.epochs},
                       {"path", p.path}};
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  return j;
}

/// Missing keys keep their defaults; unknown keys and type mismatches throw
/// ConfigError naming the field.
inline ExperimentConfig experiment_from_json(const Json& j) {
  using config_detail::Reader;
  ExperimentConfig c;
  TrainConfig& t = c.train;
  Reader r(j, "");
  std::string method = to_string(t.method);
  r.get("method", method);
  try {
    t.method = method_from_string(method);
  } catch (const ArgumentError& e) {
    throw ConfigError(r.where("method") + e.what());
  }
  r.get("temperature", t.temperature);
  r.get("keys_per_category", t.keys_per_category);
  r.get("projector_dim", t.projector_dim);
  r.get("base_lr", t.base_lr);
  r.get("classifier_lr_multiplier", t.classifier_lr_multiplier);
  r.get("sgd_momentum", t.sgd_momentum);
  r.get("key_momentum", t.key_momentum);
  r.get("weight_decay", t.weight_decay);
  r.get("labeled_batch", t.labeled_batch);
  r.get("unlabeled_batch", t.unlabeled_batch);
  r.get("epochs", t.epochs);
  r.get("seed", t.seed);
  r.get("threshold", t.threshold);
  r.get("disable_pgc_labeled", t.disable_pgc_labeled);
  r.get("disable_pgc_unlabeled", t.disable_pgc_unlabeled);
  r.get("separate_queues", t.separate_queues);
  r.get("normalize_keys", t.normalize_keys);
  r.get("hidden_dim", t.hidden_dim);
  r.get("feature_dim", t.feature_dim);
  r.get("projector_hidden", t.projector_hidden);
  r.get("conv_channels", t.conv_channels);
  r.get("freeze_encoder", t.freeze_encoder);
  if (auto* a = r.find("query_augmentation"))
    t.query_augmentation = config_detail::read_augmentation(*a, "query_augmentation", t.query_augmentation);
  if (auto* a = r.find("key_augmentation"))
    t.key_augmentation = config_detail::read_augmentation(*a, "key_augmentation", t.key_augmentation);

  if (auto* dj = r.find("dataset")) {
    Reader d(*dj, "dataset");
    DatasetSpec& s = c.dataset;
    d.get("kind", s.kind);
    d.get("num_categories", s.num_categories);
    d.get("dim", s.dim);
    d.get("per_class", s.per_class);
    d.get("separation", s.separation);
    d.get("channels", s.channels);
    d.get("side", s.side);
    d.get("noise", s.noise);
    d.get("path", s.path);
    d.get("label_proportion", s.label_proportion);
    d.get("labels_per_class", s.labels_per_class);
    d.get("test_fraction", s.test_fraction);
    d.finish();
  }
  if (auto* pj = r.find("pretrain")) {
    Reader p(*pj, "pretrain");
    p.get("enabled", c.pretrain.enabled);
    p.get("source_categories", c.pretrain.source_categories);
    p.get("per_class", c.pretrain.per_class);
    p.get("epochs", c.pretrain.epochs);
    p.get("path", c.pretrain.path);
    p.finish();
  }
  r.get("output_dir", c.output_dir);
  if (auto* sj = r.find("seeds")) {
    if (!sj->is_array()) throw ConfigError(r.where("seeds") + "expected an array of non-negative integers");
    c.seeds.clear();
    for (const auto& s : *sj) {
      if (!s.is_number_unsigned()) throw ConfigError(r.where("seeds") + "expected an array of non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  r.finish();
  return c;
}

inline void ExperimentConfig::validate() const {
  try {
    train.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  const DatasetSpec& d = dataset;
  static const std::set<std::string> kinds = {"gaussian_mixture", "blob_images", "csv", "images"};
  if (!kinds.count(d.kind))
    throw ConfigError("field 'dataset.kind': expected gaussian_mixture, blob_images, csv or images, got '" + d.kind + "'");
  if (d.kind == "csv" || d.kind == "images") {
    if (d.path.empty()) throw ConfigError("field 'dataset.path': required for dataset kind " + d.kind);
  } else {
    if (d.num_categories < 2) throw ConfigError("field 'dataset.num_categories': must be >= 2");
    if (d.per_class < 1) throw ConfigError("field 'dataset.per_class': must be >= 1");
  }
  if (d.kind == "gaussian_mixture") {
    if (d.dim < 1) throw ConfigError("field 'dataset.dim': must be >= 1");
    if (!(d.separation > 0.0)) throw ConfigError("field 'dataset.separation': must be positive");
  }
  if (d.kind == "blob_images") {
    if (d.channels < 1) throw ConfigError("field 'dataset.channels': must be >= 1");
    if (d.side < 4) throw ConfigError("field 'dataset.side': must be >= 4");
    if (d.noise < 0.0) throw ConfigError("field 'dataset.noise': must be non-negative");
  }
  if (d.labels_per_class) {
    if (*d.labels_per_class < 1) throw ConfigError("field 'dataset.labels_per_class': must be >= 1");
  } else if (!(d.label_proportion > 0.0 && d.label_proportion <= 1.0)) {
    throw ConfigError("field 'dataset.label_proportion': must lie in (0, 1]");
  }
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
    throw ConfigError("field 'dataset.test_fraction': must lie in (0, 1)");
  if (pretrain.enabled) {
    if (pretrain.epochs < 1) throw ConfigError("field 'pretrain.epochs': must be >= 1");
    if (pretrain.path.empty()) {
      if (d.kind == "csv" || d.kind == "images")
        throw ConfigError("field 'pretrain.path': required when the target dataset is read from files");
      if (pretrain.source_categories < 2) throw ConfigError("field 'pretrain.source_categories': must be >= 2");
      if (pretrain.per_class < 1) throw ConfigError("field 'pretrain.per_class': must be >= 1");
    }
  }
  if (output_dir.empty()) throw ConfigError("field 'output_dir': must not be empty");
  if (seeds.empty()) throw ConfigError("field 'seeds': at least one seed is required");
}

/// Applies `KEY=VALUE` to a JSON document. KEY is a dotted path; VALUE is
/// parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

inline ExperimentConfig parse_experiment(const std::string& text, const std::vector<std::string>& overrides = {}) {
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig c = experiment_from_json(doc);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment(ss.str(), overrides);
}

// ---------------------------------------------------------------------------
// Data and pretraining from a config
// ---------------------------------------------------------------------------

/// The full dataset for a seed (file-backed data ignores the seed).
inline Dataset load_dataset(const DatasetSpec& d, std::uint64_t seed) {
  if (d.kind == "gaussian_mixture")
    return make_gaussian_mixture(d.num_categories, d.dim, d.per_class, d.separation,
                                 derive_seed(seed, seed_stream::data));
  if (d.kind == "blob_images")
    return make_blob_images(d.num_categories, d.channels, d.side, d.per_class, d.noise,
                            derive_seed(seed, seed_stream::data));
  if (d.kind == "csv") return read_csv(d.path);
  if (d.kind == "images") return read_image_dir(d.path);
  throw ConfigError("field 'dataset.kind': unknown kind '" + d.kind + "'");
}

inline Split make_split(const ExperimentConfig& c, std::uint64_t seed) {
  SplitOptions o;
  o.proportion = c.dataset.label_proportion;
  o.labels_per_class = c.dataset.labels_per_class;
  o.test_fraction = c.dataset.test_fraction;
  return split_label_proportion(load_dataset(c.dataset, seed), o, derive_seed(seed, seed_stream::split));
}

inline DataSource data_source(const ExperimentConfig& c) {
  return [c](std::uint64_t seed) { return make_split(c, seed); };
}

/// Source dataset for pretraining: the file at `pretrain.path`, or the
/// target's generator with `source_categories` and an independent seed stream.
inline Dataset pretrain_source(const ExperimentConfig& c, std::uint64_t seed) {
  const PretrainSpec& p = c.pretrain;
  if (!p.path.empty()) return c.dataset.kind == "images" ? read_image_dir(p.path) : read_csv(p.path);
  DatasetSpec s = c.dataset;
  s.num_categories = p.source_categories;
  s.per_class = p.per_class;
  return load_dataset(s, derive_seed(seed, seed_stream::pretrain));
}

inline PretrainSource pretrain_source_fn(const ExperimentConfig& c) {
  if (!c.pretrain.enabled) return {};
  return [c](const TrainConfig& cfg) -> std::optional<ModelBundle> {
    return pretrain(cfg, pretrain_source(c, cfg.seed), c.pretrain.epochs, derive_seed(cfg.seed, seed_stream::pretrain));
  };
}

}  // namespace selftune
