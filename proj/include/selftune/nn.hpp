#pragma once

#include "selftune/common.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

// Minimal layers with hand-written backward passes. Activations are stored
// column-wise: one column per example.

namespace selftune::nn {

/// Intermediate values recorded by a forward pass, consumed in reverse by the
/// matching backward pass.
class Tape {
 public:
  void push(Matrix m) { saved_.push_back(std::move(m)); }
  Matrix pop() {
    require(!saved_.empty(), "tape underflow: backward without matching forward");
    Matrix m = std::move(saved_.back());
    saved_.pop_back();
    return m;
  }
  bool empty() const { return saved_.empty(); }

 private:
  std::vector<Matrix> saved_;
};

struct NamedParam {
  std::string name;
  Matrix* value;
};

struct ConstNamedParam {
  std::string name;
  const Matrix* value;
};

struct Linear {
  Matrix weight;  // out x in
  Matrix bias;    // out x 1

  Linear() = default;
  Linear(int in, int out, Rng& rng) : weight(out, in), bias(Matrix::Zero(out, 1)) {
    // Kaiming-uniform fan-in scaling.
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < weight.cols(); ++j)
      for (Eigen::Index i = 0; i < weight.rows(); ++i) weight(i, j) = u(rng);
    std::uniform_real_distribution<double> ub(-1.0 / std::sqrt(static_cast<double>(in)),
                                              1.0 / std::sqrt(static_cast<double>(in)));
    for (Eigen::Index i = 0; i < bias.rows(); ++i) bias(i, 0) = ub(rng);
  }

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  Matrix forward(const Matrix& x, Tape* tape) const {
    require(x.rows() == weight.cols(), "linear layer input dimension mismatch");
    if (tape) tape->push(x);
    return (weight * x).colwise() + bias.col(0);
  }

  Matrix backward(const Matrix& dy, Tape& tape, Linear& grad) const {
    const Matrix x = tape.pop();
    grad.weight.noalias() += dy * x.transpose();
    grad.bias.col(0) += dy.rowwise().sum();
    return weight.transpose() * dy;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

struct Relu {
  Matrix forward(const Matrix& x, Tape* tape) const {
    Matrix y = x.cwiseMax(0.0);
    if (tape) tape->push(y);
    return y;
  }

  Matrix backward(const Matrix& dy, Tape& tape, Relu&) const {
    const Matrix y = tape.pop();
    return (y.array() > 0.0).select(dy, 0.0);
  }

  template <typename F>
  void visit(const std::string&, F&&) {}
};

/// 3x3 convolution, stride 1, zero padding 1, over a fixed spatial size.
/// Each column is a channel-major (C, H, W) image.
struct Conv3x3 {
  int in_channels = 0;
  int out_channels = 0;
  int height = 0;
  int width = 0;
  Matrix weight;  // out_channels x (in_channels * 9)
  Matrix bias;    // out_channels x 1

  Conv3x3() = default;
  Conv3x3(int in_ch, int out_ch, int h, int w, Rng& rng)
      : in_channels(in_ch), out_channels(out_ch), height(h), width(w),
        weight(out_ch, in_ch * 9), bias(Matrix::Zero(out_ch, 1)) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_ch * 9));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < weight.cols(); ++j)
      for (Eigen::Index i = 0; i < weight.rows(); ++i) weight(i, j) = u(rng);
    const double bb = 1.0 / std::sqrt(static_cast<double>(in_ch * 9));
    std::uniform_real_distribution<double> ub(-bb, bb);
    for (Eigen::Index i = 0; i < bias.rows(); ++i) bias(i, 0) = ub(rng);
  }

  Matrix im2col(const double* img) const {
    const int hw = height * width;
    Matrix cols = Matrix::Zero(in_channels * 9, hw);
    for (int c = 0; c < in_channels; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int row = (c * 3 + ky) * 3 + kx;
          for (int y = 0; y < height; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= height) continue;
            for (int x = 0; x < width; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= width) continue;
              cols(row, y * width + x) = img[(c * height + sy) * width + sx];
            }
          }
        }
    return cols;
  }

  void col2im(const Matrix& cols, double* img) const {
    for (int c = 0; c < in_channels; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int row = (c * 3 + ky) * 3 + kx;
          for (int y = 0; y < height; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= height) continue;
            for (int x = 0; x < width; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= width) continue;
              img[(c * height + sy) * width + sx] += cols(row, y * width + x);
            }
          }
        }
  }

  Matrix forward(const Matrix& x, Tape* tape) const {
    const int hw = height * width;
    require(x.rows() == in_channels * hw, "conv layer input size mismatch");
    Matrix y(out_channels * hw, x.cols());
    for (Eigen::Index n = 0; n < x.cols(); ++n) {
      const Matrix cols = im2col(x.col(n).data());
      Matrix out = (weight * cols).colwise() + bias.col(0);  // out_ch x hw
      // channel-major flatten: out is column-major, so transpose to (hw x out_ch)
      Eigen::Map<Matrix>(y.col(n).data(), hw, out_channels) = out.transpose();
    }
    if (tape) tape->push(x);
    return y;
  }

  Matrix backward(const Matrix& dy, Tape& tape, Conv3x3& grad) const {
    const Matrix x = tape.pop();
    const int hw = height * width;
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index n = 0; n < x.cols(); ++n) {
      const Matrix cols = im2col(x.col(n).data());
      const Matrix dout = Eigen::Map<const Matrix>(dy.col(n).data(), hw, out_channels).transpose();
      grad.weight.noalias() += dout * cols.transpose();
      grad.bias.col(0) += dout.rowwise().sum();
      const Matrix dcols = weight.transpose() * dout;
      col2im(dcols, dx.col(n).data());
    }
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

/// Spatial mean per channel: (C*H*W) -> C.
struct GlobalAvgPool {
  int channels = 0;
  int spatial = 0;

  Matrix forward(const Matrix& x, Tape*) const {
    require(x.rows() == static_cast<Eigen::Index>(channels) * spatial, "pool input size mismatch");
    Matrix y(channels, x.cols());
    for (Eigen::Index n = 0; n < x.cols(); ++n)
      for (int c = 0; c < channels; ++c) y(c, n) = x.col(n).segment(c * spatial, spatial).mean();
    return y;
  }

  Matrix backward(const Matrix& dy, Tape&, GlobalAvgPool&) const {
    Matrix dx(static_cast<Eigen::Index>(channels) * spatial, dy.cols());
    for (Eigen::Index n = 0; n < dy.cols(); ++n)
      for (int c = 0; c < channels; ++c)
        dx.col(n).segment(c * spatial, spatial).setConstant(dy(c, n) / spatial);
    return dx;
  }

  template <typename F>
  void visit(const std::string&, F&&) {}
};

using Layer = std::variant<Linear, Relu, Conv3x3, GlobalAvgPool>;

/// Ordered stack of layers. A zero-valued clone doubles as the gradient
/// accumulator for the same architecture.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const {
    Matrix h = x;
    for (const auto& layer : layers_)
      h = std::visit([&](const auto& l) { return l.forward(h, tape); }, layer);
    return h;
  }

  /// Accumulates parameter gradients into `grad` and returns d loss / d input.
  Matrix backward(const Matrix& dy, Tape& tape, Sequential& grad) const {
    require(grad.layers_.size() == layers_.size(), "gradient accumulator shape mismatch");
    Matrix d = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      d = std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            return l.backward(d, tape, std::get<L>(grad.layers_[i]));
          },
          layers_[i]);
    }
    return d;
  }

  Sequential zeros_like() const {
    Sequential z = *this;
    z.for_each_param([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  template <typename F>
  void for_each_param(F&& f, const std::string& prefix = "") {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      std::visit([&](auto& l) { l.visit(prefix + std::to_string(i) + ".", f); }, layers_[i]);
  }

  std::vector<NamedParam> params(const std::string& prefix = "") {
    std::vector<NamedParam> out;
    for_each_param([&](const std::string& n, Matrix& m) { out.push_back({n, &m}); }, prefix);
    return out;
  }

  std::vector<ConstNamedParam> params(const std::string& prefix = "") const {
    std::vector<ConstNamedParam> out;
    auto& self = const_cast<Sequential&>(*this);
    self.for_each_param([&](const std::string& n, Matrix& m) { out.push_back({n, &m}); }, prefix);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params()) n += static_cast<std::size_t>(p.value->size());
    return n;
  }

  int output_dim() const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (const auto* l = std::get_if<Linear>(&layers_[i])) return l->out_dim();
      if (const auto* p = std::get_if<GlobalAvgPool>(&layers_[i])) return p->channels;
      if (const auto* c = std::get_if<Conv3x3>(&layers_[i])) return c->out_channels * c->height * c->width;
    }
    return 0;
  }

  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
};

/// Column-wise L2 normalization; optionally returns the pre-normalization norms.
inline Matrix l2_normalize_columns(const Matrix& y, Vector* norms = nullptr) {
  Vector n = y.colwise().norm().transpose();
  Matrix z = y;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    require(n(j) > 0.0, "cannot normalize a zero embedding");
    z.col(j) /= n(j);
  }
  if (norms) *norms = std::move(n);
  return z;
}

/// dL/dy given dL/dz for z = y / |y|: (dz - z (z . dz)) / |y|.
inline Matrix l2_normalize_backward(const Matrix& z, const Vector& norms, const Matrix& dz) {
  Matrix dy(dz.rows(), dz.cols());
  for (Eigen::Index j = 0; j < dz.cols(); ++j)
    dy.col(j) = (dz.col(j) - z.col(j) * z.col(j).dot(dz.col(j))) / norms(j);
  return dy;
}

inline Sequential make_mlp(const std::vector<int>& widths, bool relu_after_last, Rng& rng) {
  require(widths.size() >= 2, "an MLP needs at least input and output widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    require(widths[i] >= 1 && widths[i + 1] >= 1, "layer widths must be positive");
    layers.emplace_back(Linear(widths[i], widths[i + 1], rng));
    if (i + 2 < widths.size() || relu_after_last) layers.emplace_back(Relu{});
  }
  return Sequential(std::move(layers));
}

/// Two 3x3 conv blocks, global average pooling, then a linear map to
/// `feature_dim` with ReLU.
inline Sequential make_conv_encoder(int channels, int height, int width, int conv_channels,
                                    int feature_dim, Rng& rng) {
  require(channels >= 1 && height >= 1 && width >= 1, "image shape must be positive");
  std::vector<Layer> layers;
  layers.emplace_back(Conv3x3(channels, conv_channels, height, width, rng));
  layers.emplace_back(Relu{});
  layers.emplace_back(Conv3x3(conv_channels, conv_channels, height, width, rng));
  layers.emplace_back(Relu{});
  layers.emplace_back(GlobalAvgPool{conv_channels, height * width});
  layers.emplace_back(Linear(conv_channels, feature_dim, rng));
  layers.emplace_back(Relu{});
  return Sequential(std::move(layers));
}

}  // namespace selftune::nn
