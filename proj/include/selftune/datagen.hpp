#pragma once

#include "selftune/common.hpp"
#include "selftune/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace selftune {

enum class DatasetRole { labeled, unlabeled, test, full };

/// Inputs stored column-wise with their category indices. Unlabeled sets keep
/// the ground truth for metrics only; the trainer receives inputs alone.
struct Dataset {
  Matrix inputs;              // dim x N
  std::vector<int> labels;    // length N
  int num_categories = 0;
  InputShape shape;
  DatasetRole role = DatasetRole::full;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  Dataset subset(const std::vector<std::size_t>& idx, DatasetRole r) const {
    Dataset out;
    out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(idx.size()));
    out.labels.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.inputs.col(static_cast<Eigen::Index>(k)) = inputs.col(static_cast<Eigen::Index>(idx[k]));
      out.labels.push_back(labels[idx[k]]);
    }
    out.num_categories = num_categories;
    out.shape = shape;
    out.role = r;
    return out;
  }

  void validate() const {
    require(inputs.cols() == static_cast<Eigen::Index>(labels.size()), "inputs/labels size mismatch");
    require(inputs.rows() == shape.dim, "input rows do not match the declared shape");
    for (int y : labels) require(y >= 0 && y < num_categories, "label out of range");
  }
};

/// C isotropic unit-variance Gaussians around seeded unit-sphere centers
/// scaled by `separation`; `per_class` points each, class-interleaved.
inline Dataset make_gaussian_mixture(int num_categories, int dim, int per_class, double separation,
                                     std::uint64_t seed) {
  require(num_categories >= 2, "need at least 2 categories");
  require(dim >= 1, "dimension must be positive");
  require(per_class >= 1, "per_class must be >= 1");
  require(separation > 0.0, "separation must be positive");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix centers(dim, num_categories);
  for (int c = 0; c < num_categories; ++c) {
    Vector v(dim);
    do {
      for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
    } while (v.norm() == 0.0);
    centers.col(c) = separation * v / v.norm();
  }

  Dataset ds;
  ds.num_categories = num_categories;
  ds.shape = InputShape::vector(dim);
  ds.inputs.resize(dim, static_cast<Eigen::Index>(num_categories) * per_class);
  ds.labels.reserve(static_cast<std::size_t>(num_categories) * per_class);
  Eigen::Index col = 0;
  for (int n = 0; n < per_class; ++n)
    for (int c = 0; c < num_categories; ++c) {
      for (int i = 0; i < dim; ++i) ds.inputs(i, col) = centers(i, c) + gauss(rng);
      ds.labels.push_back(c);
      ++col;
    }
  return ds;
}

struct Split {
  Dataset labeled;
  Dataset unlabeled;
  Dataset test;
};

struct SplitOptions {
  double proportion = 0.15;                // fraction of each category's pool that is labeled
  std::optional<int> labels_per_class;     // overrides `proportion` when set
  double test_fraction = 0.2;
};

/// Stratified three-way split. Per category: floor(test_fraction * n_c) go to
/// test; of the remaining pool, floor(proportion * pool) (at least one) or
/// exactly `labels_per_class` are labeled, the rest unlabeled.
inline Split split_label_proportion(const Dataset& data, const SplitOptions& opts, std::uint64_t seed) {
  data.validate();
  if (opts.labels_per_class) {
    require(*opts.labels_per_class >= 1, "labels_per_class must be >= 1");
  } else {
    require(opts.proportion > 0.0 && opts.proportion <= 1.0, "label proportion must lie in (0, 1]");
  }
  require(opts.test_fraction > 0.0 && opts.test_fraction < 1.0, "test fraction must lie in (0, 1)");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_categories));
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  std::vector<std::size_t> lab, unl, tst;
  for (int c = 0; c < data.num_categories; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    require(!idx.empty(), "category " + std::to_string(c) + " has no examples");
    std::shuffle(idx.begin(), idx.end(), rng);
    // Small epsilon so products like 0.15 * 20 floor to 3, not 2.
    const auto n_test = static_cast<std::size_t>(std::floor(opts.test_fraction * static_cast<double>(idx.size()) + 1e-9));
    const std::size_t pool = idx.size() - n_test;
    require(pool >= 1, "category " + std::to_string(c) + " has no training examples after the test holdout");
    std::size_t n_lab;
    if (opts.labels_per_class) {
      n_lab = static_cast<std::size_t>(*opts.labels_per_class);
      require(n_lab <= pool, "labels_per_class exceeds the training pool of category " + std::to_string(c));
    } else {
      n_lab = static_cast<std::size_t>(std::floor(opts.proportion * static_cast<double>(pool) + 1e-9));
      n_lab = std::clamp<std::size_t>(n_lab, 1, pool);
    }
    tst.insert(tst.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    lab.insert(lab.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test),
               idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_lab));
    unl.insert(unl.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_lab), idx.end());
  }
  std::sort(lab.begin(), lab.end());
  std::sort(unl.begin(), unl.end());
  std::sort(tst.begin(), tst.end());
  return {data.subset(lab, DatasetRole::labeled), data.subset(unl, DatasetRole::unlabeled),
          data.subset(tst, DatasetRole::test)};
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class AugmentationKind { gaussian_noise, coordinate_dropout, random_crop_flip };

inline std::string to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::gaussian_noise: return "gaussian_noise";
    case AugmentationKind::coordinate_dropout: return "coordinate_dropout";
    case AugmentationKind::random_crop_flip: return "random_crop_flip";
  }
  return "?";
}

inline AugmentationKind augmentation_kind_from_string(const std::string& s) {
  if (s == "gaussian_noise") return AugmentationKind::gaussian_noise;
  if (s == "coordinate_dropout") return AugmentationKind::coordinate_dropout;
  if (s == "random_crop_flip") return AugmentationKind::random_crop_flip;
  throw ArgumentError("unknown augmentation kind '" + s + "'");
}

struct AugmentationPolicy {
  AugmentationKind kind = AugmentationKind::gaussian_noise;
  // gaussian_noise: noise sigma; coordinate_dropout: drop probability;
  // random_crop_flip: max shift in pixels (and flips enabled when > 0).
  double strength = 0.0;

  bool operator==(const AugmentationPolicy&) const = default;
};

/// A policy bound to its own seed stream.
class Augmenter {
 public:
  Augmenter(AugmentationPolicy policy, std::uint64_t seed, InputShape shape = {})
      : policy_(policy), rng_(seed), shape_(shape) {
    require(policy.strength >= 0.0, "augmentation strength must be non-negative");
    if (policy.kind == AugmentationKind::coordinate_dropout)
      require(policy.strength <= 1.0, "dropout probability must lie in [0, 1]");
  }

  const AugmentationPolicy& policy() const { return policy_; }

  Matrix operator()(const Matrix& x) {
    Matrix out = x;
    if (policy_.strength == 0.0) return out;
    switch (policy_.kind) {
      case AugmentationKind::gaussian_noise: {
        std::normal_distribution<double> g(0.0, policy_.strength);
        for (Eigen::Index j = 0; j < out.cols(); ++j)
          for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += g(rng_);
        break;
      }
      case AugmentationKind::coordinate_dropout: {
        std::bernoulli_distribution drop(policy_.strength);
        for (Eigen::Index j = 0; j < out.cols(); ++j)
          for (Eigen::Index i = 0; i < out.rows(); ++i)
            if (drop(rng_)) out(i, j) = 0.0;
        break;
      }
      case AugmentationKind::random_crop_flip: {
        require(shape_.is_image() && shape_.dim == x.rows(), "random_crop_flip needs image inputs");
        const int pad = static_cast<int>(std::round(policy_.strength));
        std::uniform_int_distribution<int> shift(-pad, pad);
        std::bernoulli_distribution flip(0.5);
        for (Eigen::Index j = 0; j < out.cols(); ++j) crop_flip(x.col(j), out.col(j), shift(rng_), shift(rng_), flip(rng_));
        break;
      }
    }
    return out;
  }

  Vector operator()(const Vector& x) { return (*this)(Matrix(x)).col(0); }

 private:
  // Translate by (dy, dx) with zero fill, then optionally mirror horizontally.
  template <typename In, typename Out>
  void crop_flip(const In& src, Out dst, int dy, int dx, bool mirror) const {
    const int c = shape_.channels, h = shape_.height, w = shape_.width;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int xx = mirror ? (w - 1 - x) : x;
          const int sy = y + dy, sx = xx + dx;
          const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
          dst((ch * h + y) * w + x) = inside ? src((ch * h + sy) * w + sx) : 0.0;
        }
  }

  AugmentationPolicy policy_;
  Rng rng_;
  InputShape shape_;
};

/// Two independently seeded stochastic views of the same inputs.
inline std::pair<Matrix, Matrix> two_views(Augmenter& first, Augmenter& second, const Matrix& x) {
  Matrix v1 = first(x);
  Matrix v2 = second(x);
  return {std::move(v1), std::move(v2)};
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// CSV with a header row `x0,...,x{d-1},label`, one example per line.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) os << 'x' << i << ',';
  os << "label\n";
  os.precision(17);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) os << ds.inputs(i, static_cast<Eigen::Index>(n)) << ',';
    os << ds.labels[n] << '\n';
  }
}

/// Reads the CSV format above. `num_categories` of 0 infers max label + 1.
inline Dataset read_csv(const std::string& path, int num_categories = 0) {
  std::ifstream is(path);
  if (!is) throw ArgumentError("cannot open dataset " + path);
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "empty CSV file " + path);
  const auto columns = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  require(columns >= 2, "CSV needs at least one feature column and a label column");
  const int dim = columns - 1;
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int k = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (k < dim)
          values.push_back(std::stod(cell));
        else
          labels.push_back(std::stoi(cell));
      } catch (const std::exception&) {
        throw ArgumentError(path + ":" + std::to_string(lineno) + ": malformed value '" + cell + "'");
      }
      ++k;
    }
    require(k == columns, path + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) + " columns");
  }
  Dataset ds;
  ds.shape = InputShape::vector(dim);
  ds.labels = std::move(labels);
  ds.inputs = Eigen::Map<Matrix>(values.data(), dim, static_cast<Eigen::Index>(ds.labels.size()));
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.num_categories = num_categories > 0 ? num_categories : max_label + 1;
  ds.validate();
  return ds;
}

/// One file per image: a text header line `channels height width label`, then
/// channels*height*width raw bytes in row-major (channel, row, column) order.
/// Pixels are scaled to [0, 1] on load.
inline void write_image_dir(const Dataset& ds, const std::string& dir) {
  require(ds.shape.is_image(), "dataset does not hold images");
  std::filesystem::create_directories(dir);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    std::ostringstream name;
    name << dir << "/img_" << std::setw(6) << std::setfill('0') << n << ".bin";
    std::ofstream os(name.str(), std::ios::binary);
    os << ds.shape.channels << ' ' << ds.shape.height << ' ' << ds.shape.width << ' ' << ds.labels[n] << '\n';
    for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) {
      const double v = std::clamp(ds.inputs(i, static_cast<Eigen::Index>(n)), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

inline Dataset read_image_dir(const std::string& dir, int num_categories = 0) {
  require(std::filesystem::is_directory(dir), "image directory " + dir + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), "image directory " + dir + " is empty");

  Dataset ds;
  std::vector<double> values;
  for (const auto& f : files) {
    std::ifstream is(f, std::ios::binary);
    std::string header;
    std::getline(is, header);
    std::istringstream hs(header);
    int c = 0, h = 0, w = 0, label = -1;
    require(static_cast<bool>(hs >> c >> h >> w >> label) && c > 0 && h > 0 && w > 0 && label >= 0,
            "bad image header in " + f.string());
    const InputShape shape = InputShape::image(c, h, w);
    if (ds.labels.empty())
      ds.shape = shape;
    else
      require(shape == ds.shape, "inconsistent image shape in " + f.string());
    std::string bytes(static_cast<std::size_t>(shape.dim), '\0');
    require(static_cast<bool>(is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))),
            "truncated image payload in " + f.string());
    for (char b : bytes) values.push_back(static_cast<unsigned char>(b) / 255.0);
    ds.labels.push_back(label);
  }
  ds.inputs = Eigen::Map<Matrix>(values.data(), ds.shape.dim, static_cast<Eigen::Index>(ds.labels.size()));
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.num_categories = num_categories > 0 ? num_categories : max_label + 1;
  ds.validate();
  return ds;
}

/// Small synthetic image task: each category is a bright square at a
/// category-specific location plus pixel noise, clipped to [0, 1].
inline Dataset make_blob_images(int num_categories, int channels, int side, int per_class, double noise,
                                std::uint64_t seed) {
  require(num_categories >= 2 && channels >= 1 && side >= 4 && per_class >= 1, "invalid image task sizes");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, noise);
  const InputShape shape = InputShape::image(channels, side, side);
  const int patch = std::max(2, side / 3);
  std::uniform_int_distribution<int> pos(0, side - patch);
  std::vector<std::pair<int, int>> anchors;
  for (int c = 0; c < num_categories; ++c) anchors.emplace_back(pos(rng), pos(rng));

  Dataset ds;
  ds.num_categories = num_categories;
  ds.shape = shape;
  ds.inputs = Matrix::Zero(shape.dim, static_cast<Eigen::Index>(num_categories) * per_class);
  Eigen::Index col = 0;
  for (int n = 0; n < per_class; ++n)
    for (int c = 0; c < num_categories; ++c) {
      const auto [ay, ax] = anchors[static_cast<std::size_t>(c)];
      for (int ch = 0; ch < channels; ++ch)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) {
            const bool on = y >= ay && y < ay + patch && x >= ax && x < ax + patch;
            const double v = (on ? 0.8 : 0.1) + gauss(rng);
            ds.inputs((ch * side + y) * side + x, col) = std::clamp(v, 0.0, 1.0);
          }
      ds.labels.push_back(c);
      ++col;
    }
  return ds;
}

}  // namespace selftune
