#pragma once

#include "selftune/common.hpp"
#include "selftune/losses.hpp"
#include "selftune/nn.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace selftune {

/// Shape of a single input. Vector data uses `channels == 0`; images carry a
/// (channels, height, width) triple and are flattened channel-major.
struct InputShape {
  int dim = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  static InputShape vector(int d) { return {d, 0, 0, 0}; }
  static InputShape image(int c, int h, int w) { return {c * h * w, c, h, w}; }
  bool is_image() const { return channels > 0; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct ModelConfig {
  InputShape input = InputShape::vector(2);
  int num_categories = 2;
  int hidden_dim = 64;
  int feature_dim = 32;
  int conv_channels = 8;
  int projector_hidden = 64;
  int projector_dim = 64;
  bool normalize_keys = true;
  std::optional<double> key_momentum = 0.999;  // nullopt: keys share the query weights
  bool freeze_encoder = false;
};

struct ParameterGroups {
  std::vector<nn::NamedParam> pretrained;  // encoder f
  std::vector<nn::NamedParam> fresh;       // classifier g and projector h
};

/// Gradient accumulators, shaped like the trainable parts of a bundle.
struct BundleGrads {
  nn::Sequential encoder;
  nn::Sequential classifier;
  nn::Sequential projector;
};

/// Everything the query path records for a later backward pass.
struct QueryPass {
  Matrix features;
  Matrix logits;
  Matrix query;         // empty when the projector was skipped
  Vector query_norms;   // only meaningful with normalization on
  Matrix projected;     // pre-normalization projector output
  nn::Tape encoder_tape;
  nn::Tape classifier_tape;
  nn::Tape projector_tape;
  bool has_projector = false;
};

/// Encoder f, classifier g, projector h, plus optional slow copies of f and h
/// that produce the keys.
class ModelBundle {
 public:
  static ModelBundle create(const ModelConfig& config, std::uint64_t seed) {
    require(config.num_categories >= 2, "need at least 2 categories");
    require(config.input.dim >= 1, "input dimension must be positive");
    require(config.projector_dim >= 1 && config.feature_dim >= 1, "head widths must be positive");
    if (config.key_momentum) {
      const double m = *config.key_momentum;
      require(m >= 0.0 && m < 1.0, "key momentum must lie in [0, 1)");
    }
    ModelBundle b;
    b.config_ = config;
    Rng rng(seed);
    if (config.input.is_image()) {
      b.encoder_ = nn::make_conv_encoder(config.input.channels, config.input.height, config.input.width,
                                         config.conv_channels, config.feature_dim, rng);
    } else {
      b.encoder_ = nn::make_mlp({config.input.dim, config.hidden_dim, config.feature_dim}, true, rng);
    }
    b.classifier_ = nn::make_mlp({config.feature_dim, config.num_categories}, false, rng);
    b.projector_ =
        nn::make_mlp({config.feature_dim, config.projector_hidden, config.projector_dim}, false, rng);
    b.sync_key_copies();
    return b;
  }

  const ModelConfig& config() const { return config_; }
  bool has_momentum_copies() const { return config_.key_momentum.has_value(); }

  nn::Sequential& encoder() { return encoder_; }
  nn::Sequential& classifier() { return classifier_; }
  nn::Sequential& projector() { return projector_; }
  const nn::Sequential& encoder() const { return encoder_; }
  const nn::Sequential& classifier() const { return classifier_; }
  const nn::Sequential& projector() const { return projector_; }
  const nn::Sequential& key_encoder() const { return has_momentum_copies() ? key_encoder_ : encoder_; }
  const nn::Sequential& key_projector() const {
    return has_momentum_copies() ? key_projector_ : projector_;
  }

  /// q = h(f(view1)), column per example; unit-length when normalization is on.
  Matrix encode_query(const Matrix& views) const {
    check_input(views);
    return finish_embedding(projector_.forward(encoder_.forward(views)));
  }

  /// k = h'(f'(view2)) through the key weights. Never recorded for backprop.
  Matrix encode_key(const Matrix& views) const {
    check_input(views);
    return finish_embedding(key_projector().forward(key_encoder().forward(views)));
  }

  Vector encode_query(const Vector& view) const { return encode_query(Matrix(view)).col(0); }
  Vector encode_key(const Vector& view) const { return encode_key(Matrix(view)).col(0); }

  Matrix logits(const Matrix& inputs) const {
    check_input(inputs);
    return classifier_.forward(encoder_.forward(inputs));
  }

  std::vector<PseudoLabel> pseudo_labels(const Matrix& views) const {
    return pseudo_labels_from_logits(logits(views));
  }

  PseudoLabel pseudo_label(const Vector& view) const { return pseudo_labels(Matrix(view)).front(); }

  static std::vector<PseudoLabel> pseudo_labels_from_logits(const Matrix& logits) {
    std::vector<PseudoLabel> out;
    out.reserve(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      out.push_back(pseudo_label_from_prob(softmax(logits.col(j))));
    return out;
  }

  /// Recorded forward pass of the query path. The projector is skipped when no
  /// contrastive term needs the query.
  QueryPass forward_query(const Matrix& views, bool with_projector) const {
    check_input(views);
    QueryPass pass;
    pass.features = encoder_.forward(views, &pass.encoder_tape);
    pass.logits = classifier_.forward(pass.features, &pass.classifier_tape);
    pass.has_projector = with_projector;
    if (with_projector) {
      pass.projected = projector_.forward(pass.features, &pass.projector_tape);
      if (config_.normalize_keys)
        pass.query = nn::l2_normalize_columns(pass.projected, &pass.query_norms);
      else
        pass.query = pass.projected;
    }
    return pass;
  }

  /// Accumulates parameter gradients for upstream gradients on the logits and
  /// (optionally) the query. Either may be empty.
  void backward_query(QueryPass& pass, const Matrix& d_logits, const Matrix& d_query,
                      BundleGrads& grads) const {
    Matrix d_features = Matrix::Zero(pass.features.rows(), pass.features.cols());
    bool any = false;
    if (d_logits.size() > 0) {
      d_features = classifier_.backward(d_logits, pass.classifier_tape, grads.classifier);
      any = true;
    }
    if (d_query.size() > 0) {
      require(pass.has_projector, "query gradient supplied but projector was not run");
      const Matrix d_proj = config_.normalize_keys
                                ? nn::l2_normalize_backward(pass.query, pass.query_norms, d_query)
                                : d_query;
      const Matrix d_from_proj = projector_.backward(d_proj, pass.projector_tape, grads.projector);
      if (any)
        d_features += d_from_proj;
      else
        d_features = d_from_proj;
      any = true;
    }
    if (any && !config_.freeze_encoder) encoder_.backward(d_features, pass.encoder_tape, grads.encoder);
  }

  BundleGrads zero_grads() const {
    return {encoder_.zeros_like(), classifier_.zeros_like(), projector_.zeros_like()};
  }

  /// Encoder parameters form the pretrained group; classifier and projector
  /// the freshly initialized group. A frozen encoder contributes nothing.
  ParameterGroups parameter_groups() {
    ParameterGroups g;
    if (!config_.freeze_encoder) g.pretrained = encoder_.params("encoder.");
    g.fresh = classifier_.params("classifier.");
    for (auto& p : projector_.params("projector.")) g.fresh.push_back(p);
    return g;
  }

  /// Matching view over a gradient accumulator.
  ParameterGroups gradient_groups(BundleGrads& grads) const {
    ParameterGroups g;
    if (!config_.freeze_encoder) g.pretrained = grads.encoder.params("encoder.");
    g.fresh = grads.classifier.params("classifier.");
    for (auto& p : grads.projector.params("projector.")) g.fresh.push_back(p);
    return g;
  }

  std::size_t trainable_parameter_count() const {
    std::size_t n = classifier_.parameter_count() + projector_.parameter_count();
    if (!config_.freeze_encoder) n += encoder_.parameter_count();
    return n;
  }

  /// slow <- m * slow + (1 - m) * fast, elementwise. No-op without copies.
  void momentum_update() {
    if (!has_momentum_copies()) return;
    const double m = *config_.key_momentum;
    blend(key_encoder_, encoder_, m);
    blend(key_projector_, projector_, m);
  }

  /// Copies encoder weights from `source` (a pretrained bundle) and resets the
  /// key copies to match.
  void load_encoder_from(const ModelBundle& source) {
    auto dst = encoder_.params();
    const auto src = source.encoder_.params();
    require(dst.size() == src.size(), "pretrained encoder architecture mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      require(dst[i].value->rows() == src[i].value->rows() && dst[i].value->cols() == src[i].value->cols(),
              "pretrained encoder shape mismatch at " + dst[i].name);
      *dst[i].value = *src[i].value;
    }
    sync_key_copies();
  }

  void sync_key_copies() {
    if (has_momentum_copies()) {
      key_encoder_ = encoder_;
      key_projector_ = projector_;
    } else {
      key_encoder_ = nn::Sequential();
      key_projector_ = nn::Sequential();
    }
  }

  /// Every stored tensor, key copies included, by stable field name.
  std::vector<nn::NamedParam> all_tensors() {
    std::vector<nn::NamedParam> out = encoder_.params("encoder.");
    for (auto& p : classifier_.params("classifier.")) out.push_back(p);
    for (auto& p : projector_.params("projector.")) out.push_back(p);
    if (has_momentum_copies()) {
      for (auto& p : key_encoder_.params("key_encoder.")) out.push_back(p);
      for (auto& p : key_projector_.params("key_projector.")) out.push_back(p);
    }
    return out;
  }

 private:
  void check_input(const Matrix& views) const {
    require(views.rows() == config_.input.dim,
            "input has " + std::to_string(views.rows()) + " features, model expects " +
                std::to_string(config_.input.dim));
  }

  Matrix finish_embedding(const Matrix& projected) const {
    return config_.normalize_keys ? nn::l2_normalize_columns(projected) : projected;
  }

  static void blend(nn::Sequential& slow, nn::Sequential& fast, double m) {
    auto s = slow.params();
    auto f = fast.params();
    for (std::size_t i = 0; i < s.size(); ++i) *s[i].value = m * *s[i].value + (1.0 - m) * *f[i].value;
  }

  ModelConfig config_;
  nn::Sequential encoder_;
  nn::Sequential classifier_;
  nn::Sequential projector_;
  nn::Sequential key_encoder_;
  nn::Sequential key_projector_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Layout (all integers little-endian uint32):
//   "STCK" magic, version, field count, then per field:
//     name length, name bytes, kind (0 = float32 tensor, 1 = raw bytes),
//     tensor: ndims, dims..., float32 payload in row-major order
//     bytes:  length, payload

namespace checkpoint {

inline constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Field {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
  std::string bytes;
  bool is_bytes = false;
};

using FieldMap = std::map<std::string, Field>;

inline void write(std::ostream& os, const FieldMap& fields) {
  os.write(kMagic, 4);
  binary::write_u32(os, kVersion);
  binary::write_u32(os, static_cast<std::uint32_t>(fields.size()));
  for (const auto& [name, f] : fields) {
    binary::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::write_u32(os, f.is_bytes ? 1u : 0u);
    if (f.is_bytes) {
      binary::write_u32(os, static_cast<std::uint32_t>(f.bytes.size()));
      os.write(f.bytes.data(), static_cast<std::streamsize>(f.bytes.size()));
    } else {
      binary::write_u32(os, static_cast<std::uint32_t>(f.shape.size()));
      for (auto d : f.shape) binary::write_u32(os, d);
      for (float v : f.values) binary::write_f32(os, v);
    }
  }
}

inline FieldMap read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("not a selftune checkpoint");
  if (binary::read_u32(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const std::uint32_t count = binary::read_u32(is);
  FieldMap fields;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(binary::read_u32(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Field f;
    f.is_bytes = binary::read_u32(is) == 1u;
    if (f.is_bytes) {
      f.bytes.resize(binary::read_u32(is));
      is.read(f.bytes.data(), static_cast<std::streamsize>(f.bytes.size()));
    } else {
      f.shape.resize(binary::read_u32(is));
      std::size_t n = 1;
      for (auto& d : f.shape) n *= (d = binary::read_u32(is));
      f.values.resize(n);
      for (auto& v : f.values) v = static_cast<float>(binary::read_f32(is));
    }
    if (!is) throw std::runtime_error("truncated checkpoint");
    fields.emplace(std::move(name), std::move(f));
  }
  return fields;
}

inline Field tensor_field(const Matrix& m) {
  Field f;
  f.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  f.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) f.values.push_back(static_cast<float>(m(i, j)));
  return f;
}

inline void assign_tensor(const Field& f, Matrix& m, const std::string& name) {
  require(!f.is_bytes && f.shape.size() == 2 && f.shape[0] == m.rows() && f.shape[1] == m.cols(),
          "checkpoint field " + name + " has an incompatible shape");
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f.values[k++];
}

}  // namespace checkpoint

/// Writes all parameter groups, the key copies, and the generator state.
inline void save_checkpoint(std::ostream& os, ModelBundle& bundle, const Rng* rng = nullptr) {
  checkpoint::FieldMap fields;
  for (const auto& p : bundle.all_tensors()) fields[p.name] = checkpoint::tensor_field(*p.value);
  if (rng) {
    std::ostringstream state;
    state << *rng;
    checkpoint::Field f;
    f.is_bytes = true;
    f.bytes = state.str();
    fields["rng_state"] = std::move(f);
  }
  checkpoint::write(os, fields);
}

inline void save_checkpoint(const std::string& path, ModelBundle& bundle, const Rng* rng = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_checkpoint(os, bundle, rng);
}

/// Restores into a bundle built with the same configuration. When `encoder_only`
/// is set, only the encoder tensors are read (pretrained initialization).
inline void load_checkpoint(std::istream& is, ModelBundle& bundle, Rng* rng = nullptr,
                            bool encoder_only = false) {
  const auto fields = checkpoint::read(is);
  for (auto& p : bundle.all_tensors()) {
    const bool is_encoder = p.name.rfind("encoder.", 0) == 0;
    if (encoder_only && !is_encoder) continue;
    const auto it = fields.find(p.name);
    require(it != fields.end(), "checkpoint is missing field " + p.name);
    checkpoint::assign_tensor(it->second, *p.value, p.name);
  }
  if (encoder_only) bundle.sync_key_copies();
  if (rng && !encoder_only) {
    const auto it = fields.find("rng_state");
    if (it != fields.end()) {
      std::istringstream state(it->second.bytes);
      state >> *rng;
    }
  }
}

inline void load_checkpoint(const std::string& path, ModelBundle& bundle, Rng* rng = nullptr,
                            bool encoder_only = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  load_checkpoint(is, bundle, rng, encoder_only);
}

}  // namespace selftune
