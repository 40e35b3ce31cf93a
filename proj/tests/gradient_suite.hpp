#pragma once

// Finite-difference checks of the analytic loss gradients, shared by the unit
// and acceptance suites.

#include "oracles.hpp"

#include <selftune/losses.hpp>

#include <algorithm>
#include <random>

namespace gradient_suite {

struct Outcome {
  int instances = 0;
  double worst_relative_error = 0.0;
};

inline void track(Outcome& o, const oracle::Mat& analytic, const oracle::Mat& numeric) {
  o.worst_relative_error = std::max(o.worst_relative_error, oracle::relative_error(analytic, numeric));
}

// Stacks gradient blocks into one vector so the error is measured against the
// full gradient of an instance.
inline oracle::Mat stack(std::initializer_list<oracle::Mat> blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.size();
  oracle::Mat out(n, 1);
  Eigen::Index k = 0;
  for (const auto& b : blocks) {
    out.block(k, 0, b.size(), 1) = b.reshaped();
    k += b.size();
  }
  return out;
}

inline oracle::Mat gaussian(int rows, int cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  oracle::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  return m;
}

/// Cross-entropy from logits, gradient with respect to the logits.
inline Outcome cross_entropy(int instances, std::uint64_t seed, double step = 1e-5) {
  std::mt19937_64 rng(seed);
  Outcome o;
  for (int t = 0; t < instances; ++t) {
    const int c = 2 + static_cast<int>(rng() % 4);
    const int label = static_cast<int>(rng() % static_cast<unsigned>(c));
    oracle::Mat logits = gaussian(c, 1, rng, 2.0);
    const auto analytic = selftune::cross_entropy_logits(logits.col(0), label).grad_logits;
    const auto numeric = oracle::central_difference(
        [&] { return selftune::cross_entropy_logits(logits.col(0), label).value; }, logits, step);
    track(o, analytic, numeric);
    ++o.instances;
  }
  return o;
}

/// InfoNCE: gradients with respect to the query, the positive and all negatives.
inline Outcome info_nce(int instances, std::uint64_t seed, double step = 1e-5) {
  std::mt19937_64 rng(seed);
  const double taus[] = {0.07, 0.2, 0.5, 1.0};
  Outcome o;
  for (int t = 0; t < instances; ++t) {
    const int dim = 1 + static_cast<int>(rng() % 8);
    const int d = 1 + static_cast<int>(rng() % 4);
    const double tau = taus[rng() % 4];
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    oracle::Mat q = gaussian(dim, 1, rng, scale);
    oracle::Mat k0 = gaussian(dim, 1, rng, scale);
    oracle::Mat neg = gaussian(dim, d, rng, scale);
    auto f = [&] { return selftune::info_nce(q.col(0), k0.col(0), neg, tau); };
    const auto g = selftune::info_nce_grad(q.col(0), k0.col(0), neg, tau);
    const oracle::Mat nq = oracle::central_difference(f, q, step);
    const oracle::Mat nk = oracle::central_difference(f, k0, step);
    const oracle::Mat nn = oracle::central_difference(f, neg, step);
    track(o, stack({g.grad_query, g.grad_positives, g.grad_negatives}), stack({nq, nk, nn}));
    ++o.instances;
  }
  return o;
}

/// Grouped contrast: gradients with respect to the query, every positive key
/// and every negative key.
inline Outcome pgc(int instances, std::uint64_t seed, double step = 1e-5) {
  std::mt19937_64 rng(seed);
  const double taus[] = {0.07, 0.2, 0.5, 1.0};
  Outcome o;
  for (int t = 0; t < instances; ++t) {
    const int dim = 1 + static_cast<int>(rng() % 8);
    const int d = 1 + static_cast<int>(rng() % 4);
    const int c = 2 + static_cast<int>(rng() % 4);
    const double tau = taus[rng() % 4];
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    selftune::ContrastInstance in;
    in.query = gaussian(dim, 1, rng, scale).col(0);
    in.positive_group = gaussian(dim, d + 1, rng, scale);
    in.negative_set = gaussian(dim, d * (c - 1), rng, scale);
    in.temperature = tau;
    const auto g = selftune::pgc_grad(in);
    oracle::Mat q = in.query;
    auto fq = [&] {
      selftune::ContrastInstance x = in;
      x.query = q.col(0);
      return selftune::pgc(x);
    };
    const oracle::Mat nq = oracle::central_difference(fq, q, step);
    auto fk = [&] { return selftune::pgc(in); };
    const oracle::Mat np = oracle::central_difference(fk, in.positive_group, step);
    const oracle::Mat nn = oracle::central_difference(fk, in.negative_set, step);
    track(o, stack({g.grad_query, g.grad_positives, g.grad_negatives}), stack({nq, np, nn}));
    ++o.instances;
  }
  return o;
}

}  // namespace gradient_suite
