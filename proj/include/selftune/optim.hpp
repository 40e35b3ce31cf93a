#pragma once

#include "selftune/model.hpp"

#include <vector>

namespace selftune {

/// SGD with heavy-ball momentum (v <- mu v + g + wd p; p <- p - lr v) and two
/// learning rates: `base_lr` for the pretrained group and
/// `base_lr * fresh_multiplier` for the freshly initialized heads.
class Sgd {
 public:
  struct Options {
    double base_lr = 0.001;
    double fresh_multiplier = 10.0;
    double momentum = 0.9;
    double weight_decay = 0.0;
  };

  Sgd() = default;
  Sgd(const ParameterGroups& params, const Options& opts) : opts_(opts) {
    require(opts.base_lr > 0.0, "learning rate must be positive");
    require(opts.fresh_multiplier > 0.0, "learning-rate multiplier must be positive");
    require(opts.momentum >= 0.0 && opts.momentum < 1.0, "SGD momentum must lie in [0, 1)");
    pretrained_ = zeros_for(params.pretrained);
    fresh_ = zeros_for(params.fresh);
  }

  double pretrained_lr() const { return opts_.base_lr; }
  double fresh_lr() const { return opts_.base_lr * opts_.fresh_multiplier; }
  const Options& options() const { return opts_; }

  void step(const ParameterGroups& params, const ParameterGroups& grads) {
    apply(params.pretrained, grads.pretrained, pretrained_, pretrained_lr());
    apply(params.fresh, grads.fresh, fresh_, fresh_lr());
  }

 private:
  static std::vector<Matrix> zeros_for(const std::vector<nn::NamedParam>& ps) {
    std::vector<Matrix> v;
    v.reserve(ps.size());
    for (const auto& p : ps) v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    return v;
  }

  void apply(const std::vector<nn::NamedParam>& ps, const std::vector<nn::NamedParam>& gs,
             std::vector<Matrix>& velocity, double lr) const {
    require(ps.size() == gs.size() && ps.size() == velocity.size(), "optimizer group size mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Matrix& p = *ps[i].value;
      if (opts_.weight_decay != 0.0)
        velocity[i] = opts_.momentum * velocity[i] + *gs[i].value + opts_.weight_decay * p;
      else
        velocity[i] = opts_.momentum * velocity[i] + *gs[i].value;
      p -= lr * velocity[i];
    }
  }

  Options opts_;
  std::vector<Matrix> pretrained_;
  std::vector<Matrix> fresh_;
};

}  // namespace selftune
