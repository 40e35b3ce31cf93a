#pragma once

#include "selftune/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace selftune {

inline constexpr double kProbabilityFloor = 1e-12;

/// Max-subtracted log-sum-exp.
template <typename Derived>
double logsumexp(const Eigen::MatrixBase<Derived>& x) {
  require(x.size() > 0, "logsumexp of an empty vector");
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

inline void validate_probabilities(const Vector& prob) {
  require(prob.size() >= 1, "empty probability vector");
  require((prob.array() >= 0.0).all(), "probabilities must be non-negative");
  require(std::abs(prob.sum() - 1.0) <= 1e-6, "probabilities must sum to 1");
}

/// Argmax category and its probability. Ties go to the lowest index.
struct PseudoLabel {
  int category = 0;
  double confidence = 0.0;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

inline PseudoLabel pseudo_label_from_prob(const Vector& prob) {
  const auto c = argmax(prob);
  return {static_cast<int>(c), prob(c)};
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

inline double cross_entropy(const Vector& prob, int label) {
  validate_probabilities(prob);
  require(label >= 0 && label < prob.size(), "label out of range");
  return -std::log(std::max(prob(label), kProbabilityFloor));
}

struct LogitLoss {
  double value = 0.0;
  Vector grad_logits;  // d value / d logits
};

/// Cross-entropy evaluated from raw logits through a stable log-softmax. Always
/// finite, so no probability floor is applied.
inline LogitLoss cross_entropy_logits(const Vector& logits, int label) {
  require(label >= 0 && label < logits.size(), "label out of range");
  const double lse = logsumexp(logits);
  LogitLoss out;
  out.value = lse - logits(label);
  out.grad_logits = softmax(logits);
  out.grad_logits(label) -= 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Thresholded self-training
// ---------------------------------------------------------------------------

struct PseudoCeResult {
  double value = 0.0;
  bool passed = false;  // z > t
  PseudoLabel label;
};

/// -log z when the confidence z strictly exceeds `threshold`, else 0.
inline PseudoCeResult pseudo_ce(const Vector& prob, double threshold) {
  validate_probabilities(prob);
  require(threshold >= 0.0 && threshold <= 1.0, "threshold must lie in [0, 1]");
  PseudoCeResult out;
  out.label = pseudo_label_from_prob(prob);
  out.passed = out.label.confidence > threshold;
  if (out.passed) out.value = -std::log(std::max(out.label.confidence, kProbabilityFloor));
  return out;
}

/// Cross-view variant: the pseudo-label (and the threshold gate) come from one
/// view, the cross-entropy is applied to the logits of another. With both
/// views identical it reduces to `pseudo_ce`.
inline LogitLoss pseudo_ce_logits(const Vector& target_logits, const PseudoLabel& label,
                                  double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, "threshold must lie in [0, 1]");
  if (!(label.confidence > threshold)) return {0.0, Vector::Zero(target_logits.size())};
  return cross_entropy_logits(target_logits, label.category);
}

// ---------------------------------------------------------------------------
// Contrastive losses
// ---------------------------------------------------------------------------

struct ContrastGrad {
  double value = 0.0;
  Vector grad_query;
  Matrix grad_positives;  // same shape as the positive keys
  Matrix grad_negatives;  // same shape as the negative keys
};

/// Query plus a positive group of keys (k_0 first, then the queue keys of the
/// query's category) and the negative keys of every other category. Keys are
/// stored as columns.
struct ContrastInstance {
  Vector query;
  Matrix positive_group;
  Matrix negative_set;
  double temperature = 0.07;
};

namespace detail {

// Multi-positive softmax contrast over logits s_j = q.k_j / tau:
//   value = logsumexp(all s) - mean_{j in P} s_j
// which equals -1/|P| sum_{j in P} log softmax_j.
inline ContrastGrad group_contrast(const Vector& q, const Matrix& pos, const Matrix& neg,
                                   double tau, bool with_grad) {
  require(tau > 0.0, "temperature must be positive");
  require(pos.cols() >= 1, "positive group is empty");
  require(neg.cols() >= 1, "negative set is empty (degenerate contrast)");
  require(pos.rows() == q.size() && neg.rows() == q.size(), "key/query dimension mismatch");

  const Eigen::Index np = pos.cols();
  const Eigen::Index nn = neg.cols();
  Vector logits(np + nn);
  logits.head(np) = (pos.transpose() * q) / tau;
  logits.tail(nn) = (neg.transpose() * q) / tau;

  const double lse = logsumexp(logits);
  ContrastGrad out;
  out.value = lse - logits.head(np).mean();
  if (!with_grad) return out;

  // d value / d s_j = softmax_j - [j in P] / |P|
  Vector ds = (logits.array() - lse).exp().matrix();
  ds.head(np).array() -= 1.0 / static_cast<double>(np);
  out.grad_query = (pos * ds.head(np) + neg * ds.tail(nn)) / tau;
  out.grad_positives = q * ds.head(np).transpose() / tau;
  out.grad_negatives = q * ds.tail(nn).transpose() / tau;
  return out;
}

inline void check_instance(const ContrastInstance& in) {
  require(in.positive_group.cols() >= 1, "positive group must hold k0 plus D queue keys");
  const Eigen::Index d = in.positive_group.cols() - 1;
  require(in.negative_set.cols() >= 1, "negative set is empty (degenerate contrast)");
  require(d == 0 || in.negative_set.cols() % d == 0,
          "negative set size must be D*(C-1) for a positive group of D+1 keys");
}

}  // namespace detail

/// Softmax weights over the concatenated logits [positives | negatives].
inline Vector contrast_softmax(const Vector& query, const Matrix& positives, const Matrix& negatives,
                               double temperature) {
  require(temperature > 0.0, "temperature must be positive");
  require(positives.rows() == query.size() && negatives.rows() == query.size(), "key/query dimension mismatch");
  Vector logits(positives.cols() + negatives.cols());
  logits.head(positives.cols()) = positives.transpose() * query / temperature;
  logits.tail(negatives.cols()) = negatives.transpose() * query / temperature;
  return softmax(logits);
}

/// InfoNCE with a single positive key and a set of negative keys (columns).
inline ContrastGrad info_nce_grad(const Vector& query, const Vector& positive, const Matrix& negatives,
                                  double temperature) {
  require(positive.size() == query.size(), "key/query dimension mismatch");
  Matrix pos(positive.size(), 1);
  pos.col(0) = positive;
  return detail::group_contrast(query, pos, negatives, temperature, true);
}

inline double info_nce(const Vector& query, const Vector& positive, const Matrix& negatives,
                       double temperature) {
  require(positive.size() == query.size(), "key/query dimension mismatch");
  Matrix pos(positive.size(), 1);
  pos.col(0) = positive;
  return detail::group_contrast(query, pos, negatives, temperature, false).value;
}

/// Pseudo group contrast: the query attracts its whole positive group and is
/// repelled by every negative key; the shared denominator is evaluated once.
inline ContrastGrad pgc_grad(const ContrastInstance& in) {
  detail::check_instance(in);
  return detail::group_contrast(in.query, in.positive_group, in.negative_set, in.temperature, true);
}

inline double pgc(const ContrastInstance& in) {
  detail::check_instance(in);
  return detail::group_contrast(in.query, in.positive_group, in.negative_set, in.temperature, false)
      .value;
}

/// Labeled-data form. The positive category was chosen by the ground-truth
/// label upstream; the formula is the same.
inline double pgc_labeled(const ContrastInstance& in) { return pgc(in); }
inline ContrastGrad pgc_labeled_grad(const ContrastInstance& in) { return pgc_grad(in); }

/// Builds the instance for `category` from k0 and a (positives, negatives)
/// retrieval.
inline ContrastInstance make_instance(const Vector& query, const Vector& own_key, const Matrix& queue_positives,
                                      const Matrix& queue_negatives, double temperature) {
  ContrastInstance in;
  in.query = query;
  in.positive_group.resize(query.size(), queue_positives.cols() + 1);
  in.positive_group.col(0) = own_key;
  in.positive_group.rightCols(queue_positives.cols()) = queue_positives;
  in.negative_set = queue_negatives;
  in.temperature = temperature;
  return in;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

struct AblationFlags {
  bool disable_pgc_labeled = false;
  bool disable_pgc_unlabeled = false;
};

/// Unit-weight sum of the enabled terms.
inline double total_objective(double ce, double pgc_labeled_value, double pgc_unlabeled_value,
                              const AblationFlags& flags = {}) {
  double total = ce;
  if (!flags.disable_pgc_labeled) total += pgc_labeled_value;
  if (!flags.disable_pgc_unlabeled) total += pgc_unlabeled_value;
  return total;
}

/// Per-batch losses. For the baselines the two auxiliary slots carry the
/// method's own auxiliary term (InfoNCE for contrastive_cl, thresholded
/// pseudo-label CE in the unlabeled slot for pseudo_label_ce).
struct LossReport {
  double ce = 0.0;
  double pgc_labeled = 0.0;
  double pgc_unlabeled = 0.0;
  double total = 0.0;
  double pseudo_coverage = 0.0;
};

}  // namespace selftune
