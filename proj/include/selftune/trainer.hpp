#pragma once

#include "selftune/datagen.hpp"
#include "selftune/keystore.hpp"
#include "selftune/losses.hpp"
#include "selftune/model.hpp"
#include "selftune/optim.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace selftune {

enum class Method { self_tuning, pseudo_label_ce, contrastive_cl, fine_tune_only };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::self_tuning: return "self_tuning";
    case Method::pseudo_label_ce: return "pseudo_label_ce";
    case Method::contrastive_cl: return "contrastive_cl";
    case Method::fine_tune_only: return "fine_tune_only";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "self_tuning") return Method::self_tuning;
  if (s == "pseudo_label_ce") return Method::pseudo_label_ce;
  if (s == "contrastive_cl") return Method::contrastive_cl;
  if (s == "fine_tune_only") return Method::fine_tune_only;
  throw ArgumentError("unknown method '" + s + "'");
}

struct TrainConfig {
  Method method = Method::self_tuning;
  double temperature = 0.07;
  int keys_per_category = 32;
  int projector_dim = 64;
  double base_lr = 0.001;
  double classifier_lr_multiplier = 10.0;
  double sgd_momentum = 0.9;
  std::optional<double> key_momentum = 0.999;
  double weight_decay = 0.0;
  int labeled_batch = 32;
  int unlabeled_batch = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
  double threshold = 0.95;  // pseudo_label_ce only
  bool disable_pgc_labeled = false;
  bool disable_pgc_unlabeled = false;
  bool separate_queues = false;
  bool normalize_keys = true;

  // architecture
  int hidden_dim = 64;
  int feature_dim = 32;
  int projector_hidden = 64;
  int conv_channels = 8;
  bool freeze_encoder = false;

  // aug1 feeds the query and pseudo-label path, aug2 the key path.
  AugmentationPolicy query_augmentation{AugmentationKind::gaussian_noise, 0.1};
  AugmentationPolicy key_augmentation{AugmentationKind::gaussian_noise, 0.3};

  bool operator==(const TrainConfig&) const = default;

  AblationFlags ablation() const { return {disable_pgc_labeled, disable_pgc_unlabeled}; }

  void validate() const {
    require(temperature > 0.0, "temperature must be positive");
    require(keys_per_category >= 1, "keys_per_category must be >= 1");
    require(projector_dim >= 1, "projector_dim must be >= 1");
    require(base_lr > 0.0, "base_lr must be positive");
    require(classifier_lr_multiplier > 0.0, "classifier_lr_multiplier must be positive");
    require(sgd_momentum >= 0.0 && sgd_momentum < 1.0, "sgd_momentum must lie in [0, 1)");
    if (key_momentum) require(*key_momentum >= 0.0 && *key_momentum < 1.0, "key momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
    require(labeled_batch >= 1 && unlabeled_batch >= 1, "batch sizes must be >= 1");
    require(epochs >= 1, "epochs must be >= 1");
    require(threshold >= 0.0 && threshold <= 1.0, "threshold must lie in [0, 1]");
    require(hidden_dim >= 1 && feature_dim >= 1 && projector_hidden >= 1 && conv_channels >= 1,
            "layer widths must be positive");
  }

  ModelConfig model_config(const InputShape& input, int num_categories) const {
    ModelConfig m;
    m.input = input;
    m.num_categories = num_categories;
    m.hidden_dim = hidden_dim;
    m.feature_dim = feature_dim;
    m.conv_channels = conv_channels;
    m.projector_hidden = projector_hidden;
    m.projector_dim = projector_dim;
    m.normalize_keys = normalize_keys;
    m.key_momentum = key_momentum;
    m.freeze_encoder = freeze_encoder;
    return m;
  }
};

/// Sub-seed streams derived from the single configuration seed.
namespace seed_stream {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t split = 2;
inline constexpr std::uint64_t model = 3;
inline constexpr std::uint64_t store = 4;
inline constexpr std::uint64_t query_aug = 5;
inline constexpr std::uint64_t key_aug = 6;
inline constexpr std::uint64_t shuffle = 7;
inline constexpr std::uint64_t pretrain = 8;
inline constexpr std::uint64_t unlabeled_store = 9;
}  // namespace seed_stream

/// Key queues used by a method: the class-partitioned store (shared across
/// labeled and unlabeled data unless `separate_queues`), or the flat instance
/// queue of the contrastive baseline.
class KeyBank {
 public:
  KeyBank() = default;
  KeyBank(const TrainConfig& cfg, int num_categories, std::uint64_t seed) {
    const int d = cfg.keys_per_category;
    const int l = cfg.projector_dim;
    switch (cfg.method) {
      case Method::self_tuning:
        labeled_ = KeyStore::create(num_categories, d, l, derive_seed(seed, seed_stream::store), cfg.normalize_keys);
        if (cfg.separate_queues)
          unlabeled_ = KeyStore::create(num_categories, d, l, derive_seed(seed, seed_stream::unlabeled_store),
                                        cfg.normalize_keys);
        break;
      case Method::contrastive_cl: {
        // Same memory as the partitioned store: D * C keys.
        Rng rng(derive_seed(seed, seed_stream::store));
        instance_ = KeyQueue(d * num_categories, l, rng, cfg.normalize_keys);
        break;
      }
      default: break;
    }
  }

  bool separate() const { return unlabeled_.has_value(); }
  KeyStore& labeled_store() { return labeled_; }
  KeyStore& unlabeled_store() { return unlabeled_ ? *unlabeled_ : labeled_; }
  const KeyStore& labeled_store() const { return labeled_; }
  const KeyStore& unlabeled_store() const { return unlabeled_ ? *unlabeled_ : labeled_; }
  KeyQueue& instance_queue() { return *instance_; }
  const KeyQueue& instance_queue() const { return *instance_; }
  bool has_instance_queue() const { return instance_.has_value(); }

  std::uint64_t enqueue_count() const {
    std::uint64_t n = labeled_.enqueue_count() + (unlabeled_ ? unlabeled_->enqueue_count() : 0);
    return n + instance_pushes_;
  }

  void push_instance(const Vector& key) {
    instance_->push(key);
    ++instance_pushes_;
  }

 private:
  KeyStore labeled_;
  std::optional<KeyStore> unlabeled_;
  std::optional<KeyQueue> instance_;
  std::uint64_t instance_pushes_ = 0;
};

/// Already-augmented inputs for one step. Labels of the unlabeled batch are
/// never part of a step.
struct StepViews {
  Matrix labeled_query;
  Matrix labeled_key;
  std::vector<int> labels;
  Matrix unlabeled_query;
  Matrix unlabeled_key;
};

/// Optional stop-gradient inputs computed outside the step. When absent the
/// step computes them itself from the current weights.
struct StepOverrides {
  std::optional<Matrix> labeled_keys;
  std::optional<Matrix> unlabeled_keys;
  std::optional<std::vector<PseudoLabel>> pseudo_labels;
};

struct StepGradients {
  BundleGrads grads;
  LossReport report;
  Matrix labeled_keys;
  Matrix unlabeled_keys;
  std::vector<PseudoLabel> pseudo_labels;
};

namespace detail {

struct CategoryRetrieval {
  std::vector<Matrix> positives;
  std::vector<Matrix> negatives;
};

inline CategoryRetrieval retrieve_all(const KeyStore& store) {
  CategoryRetrieval r;
  for (int c = 0; c < store.num_categories(); ++c) {
    r.positives.push_back(store.positives(c));
    r.negatives.push_back(store.negatives(c));
  }
  return r;
}

// Mean PGC over the columns of `query`, positive category per column.
inline double batch_pgc(const Matrix& query, const Matrix& keys, const std::vector<int>& categories,
                        const KeyStore& store, double tau, Matrix& d_query) {
  const auto n = query.cols();
  const auto retrieval = retrieve_all(store);
  d_query = Matrix::Zero(query.rows(), n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto c = static_cast<std::size_t>(categories[static_cast<std::size_t>(j)]);
    const ContrastInstance in =
        make_instance(query.col(j), keys.col(j), retrieval.positives[c], retrieval.negatives[c], tau);
    const ContrastGrad g = pgc_grad(in);
    total += g.value;
    d_query.col(j) = g.grad_query / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

inline double batch_info_nce(const Matrix& query, const Matrix& keys, const Matrix& negatives, double tau,
                             Matrix& d_query) {
  const auto n = query.cols();
  d_query = Matrix::Zero(query.rows(), n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const ContrastGrad g = info_nce_grad(query.col(j), keys.col(j), negatives, tau);
    total += g.value;
    d_query.col(j) = g.grad_query / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

inline double batch_ce(const Matrix& logits, const std::vector<int>& labels, Matrix& d_logits) {
  const auto n = logits.cols();
  d_logits = Matrix::Zero(logits.rows(), n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const LogitLoss l = cross_entropy_logits(logits.col(j), labels[static_cast<std::size_t>(j)]);
    total += l.value;
    d_logits.col(j) = l.grad_logits / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

/// Losses and parameter gradients of one step, without touching weights or
/// queues. Keys and pseudo-labels are treated as constants.
inline StepGradients compute_step_gradients(const ModelBundle& bundle, const KeyBank& bank, const StepViews& views,
                                            const TrainConfig& cfg, const StepOverrides& overrides = {}) {
  const Eigen::Index n_lab = views.labeled_query.cols();
  const Eigen::Index n_unl = views.unlabeled_query.cols();
  require(n_lab >= 1, "labeled batch is empty but the cross-entropy term is enabled");
  require(static_cast<Eigen::Index>(views.labels.size()) == n_lab, "labels do not match the labeled batch");

  StepGradients out;
  out.grads = bundle.zero_grads();
  LossReport& rep = out.report;
  const double tau = cfg.temperature;

  const bool self_tuning = cfg.method == Method::self_tuning;
  const bool cl = cfg.method == Method::contrastive_cl;
  const bool want_labeled_contrast = (self_tuning && !cfg.disable_pgc_labeled) || cl;
  const bool want_unlabeled_contrast = n_unl > 0 && ((self_tuning && !cfg.disable_pgc_unlabeled) || cl);
  const bool want_keys = self_tuning || cl;

  // Labeled stream: CE plus the labeled contrastive term.
  QueryPass lab = bundle.forward_query(views.labeled_query, want_labeled_contrast);
  Matrix d_lab_logits;
  rep.ce = detail::batch_ce(lab.logits, views.labels, d_lab_logits);
  if (want_keys)
    out.labeled_keys = overrides.labeled_keys ? *overrides.labeled_keys : bundle.encode_key(views.labeled_key);

  Matrix d_lab_query;
  if (want_labeled_contrast) {
    if (self_tuning)
      rep.pgc_labeled = detail::batch_pgc(lab.query, out.labeled_keys, views.labels, bank.labeled_store(), tau,
                                          d_lab_query);
    else
      rep.pgc_labeled = detail::batch_info_nce(lab.query, out.labeled_keys, bank.instance_queue().snapshot(), tau,
                                               d_lab_query);
  }
  bundle.backward_query(lab, d_lab_logits, d_lab_query, out.grads);

  // Unlabeled stream.
  if (n_unl > 0) {
    std::optional<QueryPass> unl;
    if (want_unlabeled_contrast) unl = bundle.forward_query(views.unlabeled_query, true);
    if (overrides.pseudo_labels) {
      out.pseudo_labels = *overrides.pseudo_labels;
    } else {
      out.pseudo_labels = ModelBundle::pseudo_labels_from_logits(
          unl ? unl->logits : bundle.logits(views.unlabeled_query));
    }
    require(static_cast<Eigen::Index>(out.pseudo_labels.size()) == n_unl, "pseudo-label count mismatch");
    if (want_keys)
      out.unlabeled_keys =
          overrides.unlabeled_keys ? *overrides.unlabeled_keys : bundle.encode_key(views.unlabeled_key);

    switch (cfg.method) {
      case Method::self_tuning: {
        rep.pseudo_coverage = 1.0;
        if (!want_unlabeled_contrast) break;
        std::vector<int> cats;
        for (const auto& p : out.pseudo_labels) cats.push_back(p.category);
        Matrix d_q;
        rep.pgc_unlabeled =
            detail::batch_pgc(unl->query, out.unlabeled_keys, cats, bank.unlabeled_store(), tau, d_q);
        bundle.backward_query(*unl, Matrix(), d_q, out.grads);
        break;
      }
      case Method::contrastive_cl: {
        rep.pseudo_coverage = 1.0;
        Matrix d_q;
        rep.pgc_unlabeled =
            detail::batch_info_nce(unl->query, out.unlabeled_keys, bank.instance_queue().snapshot(), tau, d_q);
        bundle.backward_query(*unl, Matrix(), d_q, out.grads);
        break;
      }
      case Method::pseudo_label_ce: {
        // Pseudo-label and gate from the weak view, cross-entropy on the strong one.
        QueryPass strong = bundle.forward_query(views.unlabeled_key, false);
        Matrix d_logits = Matrix::Zero(strong.logits.rows(), n_unl);
        double total = 0.0;
        int passed = 0;
        for (Eigen::Index j = 0; j < n_unl; ++j) {
          const PseudoLabel& pl = out.pseudo_labels[static_cast<std::size_t>(j)];
          const LogitLoss l = pseudo_ce_logits(strong.logits.col(j), pl, cfg.threshold);
          if (pl.confidence > cfg.threshold) ++passed;
          total += l.value;
          d_logits.col(j) = l.grad_logits / static_cast<double>(n_unl);
        }
        rep.pgc_unlabeled = total / static_cast<double>(n_unl);
        rep.pseudo_coverage = static_cast<double>(passed) / static_cast<double>(n_unl);
        bundle.backward_query(strong, d_logits, Matrix(), out.grads);
        break;
      }
      case Method::fine_tune_only: break;
    }
  }

  rep.total = total_objective(rep.ce, rep.pgc_labeled, rep.pgc_unlabeled);
  return out;
}

struct StepResult {
  LossReport report;
  std::vector<PseudoLabel> pseudo_labels;
};

/// Mutable training state: weights, optimizer, key queues, augmenters.
class TrainState {
 public:
  TrainState(const TrainConfig& cfg, const InputShape& input, int num_categories,
             const ModelBundle* pretrained = nullptr)
      : cfg_(cfg),
        bundle_(ModelBundle::create(cfg.model_config(input, num_categories), derive_seed(cfg.seed, seed_stream::model))),
        bank_(cfg, num_categories, cfg.seed),
        query_aug_(cfg.query_augmentation, derive_seed(cfg.seed, seed_stream::query_aug), input),
        key_aug_(cfg.key_augmentation, derive_seed(cfg.seed, seed_stream::key_aug), input),
        num_categories_(num_categories) {
    cfg.validate();
    if (pretrained) bundle_.load_encoder_from(*pretrained);
    optimizer_ = Sgd(bundle_.parameter_groups(),
                     {cfg.base_lr, cfg.classifier_lr_multiplier, cfg.sgd_momentum, cfg.weight_decay});
  }

  const TrainConfig& config() const { return cfg_; }
  ModelBundle& bundle() { return bundle_; }
  const ModelBundle& bundle() const { return bundle_; }
  KeyBank& bank() { return bank_; }
  const KeyBank& bank() const { return bank_; }
  const Sgd& optimizer() const { return optimizer_; }
  int num_categories() const { return num_categories_; }

  /// Draws both views for both batches in a fixed order, regardless of method.
  StepViews make_views(const Matrix& labeled, const std::vector<int>& labels, const Matrix& unlabeled) {
    StepViews v;
    std::tie(v.labeled_query, v.labeled_key) = two_views(query_aug_, key_aug_, labeled);
    v.labels = labels;
    if (unlabeled.cols() > 0) std::tie(v.unlabeled_query, v.unlabeled_key) = two_views(query_aug_, key_aug_, unlabeled);
    else {
      v.unlabeled_query.resize(labeled.rows(), 0);
      v.unlabeled_key.resize(labeled.rows(), 0);
    }
    return v;
  }

  /// Gradients, one optimizer step on the unit-weight sum, momentum update of
  /// the key copies, then the pre-step keys go into the queues.
  StepResult apply(const StepViews& views, const StepOverrides& overrides = {}) {
    StepGradients g = compute_step_gradients(bundle_, bank_, views, cfg_, overrides);
    optimizer_.step(bundle_.parameter_groups(), bundle_.gradient_groups(g.grads));
    bundle_.momentum_update();

    switch (cfg_.method) {
      case Method::self_tuning:
        for (Eigen::Index j = 0; j < g.labeled_keys.cols(); ++j)
          bank_.labeled_store().enqueue(views.labels[static_cast<std::size_t>(j)], g.labeled_keys.col(j));
        for (Eigen::Index j = 0; j < g.unlabeled_keys.cols(); ++j)
          bank_.unlabeled_store().enqueue(g.pseudo_labels[static_cast<std::size_t>(j)].category,
                                          g.unlabeled_keys.col(j));
        break;
      case Method::contrastive_cl:
        for (Eigen::Index j = 0; j < g.labeled_keys.cols(); ++j) bank_.push_instance(g.labeled_keys.col(j));
        for (Eigen::Index j = 0; j < g.unlabeled_keys.cols(); ++j) bank_.push_instance(g.unlabeled_keys.col(j));
        break;
      default: break;
    }
    return {g.report, std::move(g.pseudo_labels)};
  }

  StepResult step(const Matrix& labeled, const std::vector<int>& labels, const Matrix& unlabeled) {
    return apply(make_views(labeled, labels, unlabeled));
  }

 private:
  TrainConfig cfg_;
  ModelBundle bundle_;
  KeyBank bank_;
  Augmenter query_aug_;
  Augmenter key_aug_;
  Sgd optimizer_;
  int num_categories_ = 0;
};

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EpochRow {
  int epoch = 0;
  double loss_ce = 0.0;
  double loss_pgc_labeled = 0.0;
  double loss_pgc_unlabeled = 0.0;
  double test_accuracy = 0.0;
  double pseudo_label_accuracy = 0.0;  // NaN when U is empty
  double pseudo_coverage = 0.0;

  /// Test accuracy minus pseudo-label accuracy.
  double tolerance_gap() const { return test_accuracy - pseudo_label_accuracy; }
};

struct TrainReport {
  std::uint64_t seed = 0;
  Method method = Method::self_tuning;
  std::vector<EpochRow> rows;

  double final_test_accuracy() const { return rows.empty() ? 0.0 : rows.back().test_accuracy; }
  double final_pseudo_label_accuracy() const {
    return rows.empty() ? std::numeric_limits<double>::quiet_NaN() : rows.back().pseudo_label_accuracy;
  }
  double mean_tolerance_gap() const {
    if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (const auto& r : rows) s += r.tolerance_gap();
    return s / static_cast<double>(rows.size());
  }
};

inline bool operator==(const EpochRow& a, const EpochRow& b) {
  auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  return a.epoch == b.epoch && same(a.loss_ce, b.loss_ce) && same(a.loss_pgc_labeled, b.loss_pgc_labeled) &&
         same(a.loss_pgc_unlabeled, b.loss_pgc_unlabeled) && same(a.test_accuracy, b.test_accuracy) &&
         same(a.pseudo_label_accuracy, b.pseudo_label_accuracy) && same(a.pseudo_coverage, b.pseudo_coverage);
}

inline bool operator==(const TrainReport& a, const TrainReport& b) {
  return a.seed == b.seed && a.method == b.method && a.rows == b.rows;
}

inline constexpr const char* kReportHeader =
    "epoch,loss_ce,loss_pgc_labeled,loss_pgc_unlabeled,test_accuracy,pseudo_label_accuracy,pseudo_coverage";

namespace detail {
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
}  // namespace detail

inline void write_report_csv(const TrainReport& report, std::ostream& os) {
  os << kReportHeader << '\n';
  for (const auto& r : report.rows) {
    os << r.epoch << ',' << detail::fmt_double(r.loss_ce) << ',' << detail::fmt_double(r.loss_pgc_labeled) << ','
       << detail::fmt_double(r.loss_pgc_unlabeled) << ',' << detail::fmt_double(r.test_accuracy) << ','
       << detail::fmt_double(r.pseudo_label_accuracy) << ',' << detail::fmt_double(r.pseudo_coverage) << '\n';
  }
}

inline std::string report_csv(const TrainReport& report) {
  std::ostringstream os;
  write_report_csv(report, os);
  return os.str();
}

/// Parses the CSV written by `write_report_csv`.
inline std::vector<EpochRow> read_report_csv(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "empty report");
  require(line == kReportHeader, "unexpected report header: " + line);
  std::vector<EpochRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell));
      } catch (const std::exception&) {
        throw ArgumentError("malformed report value '" + cell + "'");
      }
    }
    require(v.size() == 7, "report row must have 7 columns");
    rows.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline double accuracy(const ModelBundle& bundle, const Dataset& data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto preds = bundle.pseudo_labels(data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].category == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace detail {

inline Matrix gather_columns(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

/// Endless stream of shuffled index permutations.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, Rng& rng) : rng_(&rng), order_(n) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), *rng_);
    pos_ = 0;
  }

  Rng* rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Runs `cfg.epochs` epochs. An epoch is one pass over the unlabeled set while
/// the labeled set cycles; with no unlabeled data it is one pass over the
/// labeled set. Unlabeled ground truth is used only for the pseudo-label
/// accuracy column.
inline TrainReport train(const TrainConfig& cfg, const Split& data, const ModelBundle* pretrained = nullptr,
                         ModelBundle* final_bundle = nullptr) {
  cfg.validate();
  require(!data.labeled.empty(), "labeled set is empty");
  const int num_categories = data.labeled.num_categories;
  require(num_categories >= 2, "need at least 2 categories");
  for (const Dataset* d : {&data.unlabeled, &data.test}) {
    require(d->empty() || d->num_categories == num_categories, "datasets disagree on the number of categories");
    require(d->empty() || d->shape == data.labeled.shape, "datasets disagree on the input shape");
  }

  TrainState state(cfg, data.labeled.shape, num_categories, pretrained);
  Rng shuffle_rng(derive_seed(cfg.seed, seed_stream::shuffle));
  detail::CyclingSampler labeled_sampler(data.labeled.size(), shuffle_rng);

  const std::size_t n_unl = data.unlabeled.size();
  const auto b_lab = std::min<std::size_t>(static_cast<std::size_t>(cfg.labeled_batch), data.labeled.size());
  const auto b_unl = static_cast<std::size_t>(cfg.unlabeled_batch);
  const std::size_t steps = n_unl > 0 ? (n_unl + b_unl - 1) / b_unl : (data.labeled.size() + b_lab - 1) / b_lab;

  TrainReport report;
  report.seed = cfg.seed;
  report.method = cfg.method;
  std::vector<std::size_t> unl_order(n_unl);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(unl_order.begin(), unl_order.end(), std::size_t{0});
    std::shuffle(unl_order.begin(), unl_order.end(), shuffle_rng);

    double ce = 0.0, pgc_l = 0.0, pgc_u = 0.0, covered = 0.0;
    std::size_t pseudo_correct = 0, pseudo_seen = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto lab_idx = labeled_sampler.next(b_lab);
      std::vector<std::size_t> unl_idx;
      if (n_unl > 0) {
        const std::size_t begin = s * b_unl;
        const std::size_t end = std::min(n_unl, begin + b_unl);
        unl_idx.assign(unl_order.begin() + static_cast<std::ptrdiff_t>(begin),
                       unl_order.begin() + static_cast<std::ptrdiff_t>(end));
      }
      std::vector<int> labels;
      for (auto i : lab_idx) labels.push_back(data.labeled.labels[i]);
      const Matrix unl_inputs = n_unl > 0 ? detail::gather_columns(data.unlabeled.inputs, unl_idx)
                                          : Matrix(data.labeled.inputs.rows(), 0);

      const StepResult r = state.step(detail::gather_columns(data.labeled.inputs, lab_idx), labels, unl_inputs);
      ce += r.report.ce;
      pgc_l += r.report.pgc_labeled;
      pgc_u += r.report.pgc_unlabeled;
      covered += r.report.pseudo_coverage * static_cast<double>(unl_idx.size());
      for (std::size_t k = 0; k < r.pseudo_labels.size(); ++k) {
        pseudo_correct += r.pseudo_labels[k].category == data.unlabeled.labels[unl_idx[k]] ? 1 : 0;
        ++pseudo_seen;
      }
    }

    EpochRow row;
    row.epoch = epoch;
    row.loss_ce = ce / static_cast<double>(steps);
    row.loss_pgc_labeled = pgc_l / static_cast<double>(steps);
    row.loss_pgc_unlabeled = pgc_u / static_cast<double>(steps);
    row.test_accuracy = accuracy(state.bundle(), data.test);
    row.pseudo_label_accuracy = pseudo_seen > 0 ? static_cast<double>(pseudo_correct) / static_cast<double>(pseudo_seen)
                                                : std::numeric_limits<double>::quiet_NaN();
    row.pseudo_coverage = n_unl > 0 ? covered / static_cast<double>(n_unl) : 0.0;
    report.rows.push_back(row);
  }
  if (final_bundle) *final_bundle = state.bundle();
  return report;
}

/// Supervised pretraining of an encoder on a source task (all labels, plain
/// cross-entropy). Its encoder initializes target-task bundles.
inline ModelBundle pretrain(const TrainConfig& target_cfg, const Dataset& source, int epochs, std::uint64_t seed) {
  TrainConfig cfg = target_cfg;
  cfg.method = Method::fine_tune_only;
  cfg.freeze_encoder = false;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.disable_pgc_labeled = cfg.disable_pgc_unlabeled = cfg.separate_queues = false;
  Split split;
  split.labeled = source;
  split.labeled.role = DatasetRole::labeled;
  split.unlabeled = source.subset({}, DatasetRole::unlabeled);
  split.test = source.subset({}, DatasetRole::test);
  ModelBundle out;
  train(cfg, split, nullptr, &out);
  return out;
}

// ---------------------------------------------------------------------------
// Ablations and sensitivity
// ---------------------------------------------------------------------------

/// Produces the split used for a given seed.
using DataSource = std::function<Split(std::uint64_t seed)>;
/// Produces the pretrained bundle for a given seed (or nothing).
using PretrainSource = std::function<std::optional<ModelBundle>(const TrainConfig& cfg)>;

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

/// The seven loss-type and information-exploration variants, all derived from
/// the same self-tuning base configuration.
inline std::vector<AblationVariant> ablation_variants(const TrainConfig& base) {
  TrainConfig st = base;
  st.method = Method::self_tuning;
  st.disable_pgc_labeled = st.disable_pgc_unlabeled = st.separate_queues = false;

  std::vector<AblationVariant> v;
  auto add = [&](std::string name, auto&& edit) {
    TrainConfig c = st;
    edit(c);
    v.push_back({std::move(name), c});
  };
  add("ce_loss", [](TrainConfig& c) { c.method = Method::pseudo_label_ce; });
  add("cl_loss", [](TrainConfig& c) { c.method = Method::contrastive_cl; });
  add("pgc_loss", [](TrainConfig&) {});
  add("without_pgc_unlabeled", [](TrainConfig& c) { c.disable_pgc_unlabeled = true; });
  add("without_pgc_labeled", [](TrainConfig& c) { c.disable_pgc_labeled = true; });
  add("separate_queue", [](TrainConfig& c) { c.separate_queues = true; });
  add("unified_exploration", [](TrainConfig&) {});
  return v;
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct AblationRow {
  std::string variant;
  std::vector<TrainReport> runs;  // one per seed

  std::vector<double> final_accuracies() const {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(r.final_test_accuracy());
    return out;
  }
  Summary accuracy() const { return summarize(final_accuracies()); }
  Summary tolerance_gap() const {
    std::vector<double> g;
    for (const auto& r : runs) g.push_back(r.mean_tolerance_gap());
    return summarize(g);
  }
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& variant) const {
    for (const auto& r : rows)
      if (r.variant == variant) return r;
    throw ArgumentError("no ablation row named " + variant);
  }
};

/// Trains a list of configurations over shared seeds. Each seed yields one
/// data split (and pretrained encoder, when a source is given) reused by
/// every configuration.
inline AblationTable run_variants(const std::vector<AblationVariant>& variants, const DataSource& data,
                                  const std::vector<std::uint64_t>& seeds, const PretrainSource& pretrained = {}) {
  require(!seeds.empty(), "at least one seed is required");
  AblationTable table;
  table.seeds = seeds;
  for (const auto& v : variants) table.rows.push_back({v.name, {}});
  for (auto seed : seeds) {
    const Split split = data(seed);
    std::optional<ModelBundle> pre;
    if (pretrained) {
      TrainConfig c = variants.front().config;
      c.seed = seed;
      pre = pretrained(c);
    }
    for (std::size_t i = 0; i < variants.size(); ++i) {
      TrainConfig c = variants[i].config;
      c.seed = seed;
      table.rows[i].runs.push_back(train(c, split, pre ? &*pre : nullptr));
    }
  }
  return table;
}

inline AblationTable run_ablation_suite(const TrainConfig& base, const DataSource& data,
                                        const std::vector<std::uint64_t>& seeds,
                                        const PretrainSource& pretrained = {}) {
  return run_variants(ablation_variants(base), data, seeds, pretrained);
}

/// One row per variant: name, mean and standard deviation of the final test
/// accuracy and of the epoch-averaged tolerance gap, then per-seed accuracies.
inline void write_ablation_csv(const AblationTable& t, std::ostream& os) {
  os << "variant,mean_test_accuracy,std_test_accuracy,mean_tolerance_gap,std_tolerance_gap";
  for (auto s : t.seeds) os << ",seed_" << s;
  os << '\n';
  for (const auto& r : t.rows) {
    const Summary a = r.accuracy();
    const Summary g = r.tolerance_gap();
    os << r.variant << ',' << detail::fmt_double(a.mean) << ',' << detail::fmt_double(a.stddev) << ','
       << detail::fmt_double(g.mean) << ',' << detail::fmt_double(g.stddev);
    for (double acc : r.final_accuracies()) os << ',' << detail::fmt_double(acc);
    os << '\n';
  }
}

struct SweepResult {
  std::vector<int> projector_dims;     // rows
  std::vector<int> keys_per_category;  // columns
  Matrix accuracy;                     // mean final test accuracy per cell
  std::vector<TrainReport> runs;       // row-major, seeds innermost

  double spread() const { return accuracy.size() ? accuracy.maxCoeff() - accuracy.minCoeff() : 0.0; }
};

inline SweepResult run_sensitivity_sweep(const TrainConfig& base, const DataSource& data,
                                         const std::vector<int>& projector_dims,
                                         const std::vector<int>& keys_per_category,
                                         const std::vector<std::uint64_t>& seeds,
                                         const PretrainSource& pretrained = {}) {
  require(!projector_dims.empty() && !keys_per_category.empty(), "sweep grid is empty");
  require(!seeds.empty(), "at least one seed is required");
  SweepResult out;
  out.projector_dims = projector_dims;
  out.keys_per_category = keys_per_category;
  out.accuracy = Matrix::Zero(static_cast<Eigen::Index>(projector_dims.size()),
                              static_cast<Eigen::Index>(keys_per_category.size()));
  std::map<std::uint64_t, Split> splits;
  for (auto s : seeds) splits.emplace(s, data(s));
  for (std::size_t i = 0; i < projector_dims.size(); ++i)
    for (std::size_t j = 0; j < keys_per_category.size(); ++j) {
      double acc = 0.0;
      for (auto s : seeds) {
        TrainConfig c = base;
        c.projector_dim = projector_dims[i];
        c.keys_per_category = keys_per_category[j];
        c.seed = s;
        std::optional<ModelBundle> pre;
        if (pretrained) pre = pretrained(c);
        out.runs.push_back(train(c, splits.at(s), pre ? &*pre : nullptr));
        acc += out.runs.back().final_test_accuracy();
      }
      out.accuracy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc / static_cast<double>(seeds.size());
    }
  return out;
}

/// Matrix CSV: header `L\D,<D values...>`, one row per projector dimension.
inline void write_sweep_csv(const SweepResult& r, std::ostream& os) {
  os << "L\\D";
  for (int d : r.keys_per_category) os << ',' << d;
  os << '\n';
  for (std::size_t i = 0; i < r.projector_dims.size(); ++i) {
    os << r.projector_dims[i];
    for (std::size_t j = 0; j < r.keys_per_category.size(); ++j)
      os << ',' << detail::fmt_double(r.accuracy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    os << '\n';
  }
}

}  // namespace selftune
