#pragma once

#include "selftune/common.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

namespace selftune {

namespace detail {

inline Vector unit_or_throw(const Vector& key) {
  const double norm = key.norm();
  require(norm > 0.0 && std::isfinite(norm), "cannot normalize a zero-norm or non-finite key");
  return key / norm;
}

}  // namespace detail

/// Fixed-capacity FIFO ring of key embeddings. The slot at `cursor()` holds the
/// oldest key and is the next one overwritten.
class KeyQueue {
 public:
  KeyQueue() = default;

  /// Fills every slot with a seeded random unit vector.
  KeyQueue(int capacity, int key_dim, Rng& rng, bool normalize_keys = true)
      : slots_(key_dim, capacity), normalize_(normalize_keys) {
    require(capacity >= 1, "queue capacity must be >= 1");
    require(key_dim >= 1, "key dimension must be >= 1");
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int s = 0; s < capacity; ++s) {
      Vector v(key_dim);
      do {
        for (int i = 0; i < key_dim; ++i) v(i) = gauss(rng);
      } while (v.norm() == 0.0);
      slots_.col(s) = v / v.norm();
    }
  }

  int capacity() const { return static_cast<int>(slots_.cols()); }
  int key_dim() const { return static_cast<int>(slots_.rows()); }
  int cursor() const { return cursor_; }
  bool normalizes() const { return normalize_; }

  void push(const Vector& key) {
    require(key.size() == key_dim(), "key dimension mismatch");
    slots_.col(cursor_) = normalize_ ? detail::unit_or_throw(key) : key;
    cursor_ = (cursor_ + 1) % capacity();
  }

  /// Copy of the contents, oldest first and newest last.
  Matrix snapshot() const {
    Matrix out(key_dim(), capacity());
    write_ordered(out, 0);
    return out;
  }

  void write_ordered(Matrix& out, Eigen::Index first_col) const {
    const int n = capacity();
    for (int i = 0; i < n; ++i) out.col(first_col + i) = slots_.col((cursor_ + i) % n);
  }

  /// Physical storage, slot-major (not rotated by the cursor).
  const Matrix& slots() const { return slots_; }

  void restore(Matrix slots, int cursor) {
    require(cursor >= 0 && cursor < slots.cols(), "queue cursor out of range");
    slots_ = std::move(slots);
    cursor_ = cursor;
  }

 private:
  Matrix slots_;
  int cursor_ = 0;
  bool normalize_ = true;
};

/// Class-partitioned key queue: C independent FIFO rings of D keys each.
/// Keys from labeled and unlabeled streams land in the same ring when they
/// share a (pseudo-)label.
class KeyStore {
 public:
  KeyStore() = default;

  static KeyStore create(int num_categories, int keys_per_category, int key_dim,
                         std::uint64_t seed, bool normalize_keys = true) {
    require(num_categories >= 2, "key store needs at least 2 categories");
    require(keys_per_category >= 1, "keys_per_category must be >= 1");
    require(key_dim >= 1, "key_dim must be >= 1");
    KeyStore store;
    Rng rng(seed);
    store.queues_.reserve(static_cast<std::size_t>(num_categories));
    for (int c = 0; c < num_categories; ++c)
      store.queues_.emplace_back(keys_per_category, key_dim, rng, normalize_keys);
    return store;
  }

  int num_categories() const { return static_cast<int>(queues_.size()); }
  int keys_per_category() const { return queues_.empty() ? 0 : queues_.front().capacity(); }
  int key_dim() const { return queues_.empty() ? 0 : queues_.front().key_dim(); }
  int capacity() const { return num_categories() * keys_per_category(); }
  int cursor(int category) const { return queue(category).cursor(); }
  std::uint64_t enqueue_count() const { return enqueued_; }

  void enqueue(int category, const Vector& key) {
    check_category(category);
    queues_[static_cast<std::size_t>(category)].push(key);
    ++enqueued_;
  }

  /// Columns are the D keys of `category`, newest last.
  Matrix positives(int category) const { return queue(category).snapshot(); }

  /// Every other category's keys, concatenated in category order.
  Matrix negatives(int category) const {
    check_category(category);
    const int d = keys_per_category();
    Matrix out(key_dim(), static_cast<Eigen::Index>(d) * (num_categories() - 1));
    Eigen::Index col = 0;
    for (int c = 0; c < num_categories(); ++c) {
      if (c == category) continue;
      queues_[static_cast<std::size_t>(c)].write_ordered(out, col);
      col += d;
    }
    return out;
  }

  Matrix all_keys() const {
    Matrix out(key_dim(), capacity());
    for (int c = 0; c < num_categories(); ++c)
      queues_[static_cast<std::size_t>(c)].write_ordered(out, static_cast<Eigen::Index>(c) * keys_per_category());
    return out;
  }

  /// Binary blob: C, D, L as little-endian int32, then C*D*L float32 keys in
  /// category-major, slot-major order, then C int32 cursors.
  void save(std::ostream& os) const {
    binary::write_i32(os, num_categories());
    binary::write_i32(os, keys_per_category());
    binary::write_i32(os, key_dim());
    for (const auto& q : queues_)
      for (Eigen::Index s = 0; s < q.slots().cols(); ++s)
        for (Eigen::Index i = 0; i < q.slots().rows(); ++i) binary::write_f32(os, q.slots()(i, s));
    for (const auto& q : queues_) binary::write_i32(os, q.cursor());
  }

  static KeyStore load(std::istream& is, bool normalize_keys = true) {
    const int c = binary::read_i32(is);
    const int d = binary::read_i32(is);
    const int l = binary::read_i32(is);
    require(c >= 2 && d >= 1 && l >= 1, "corrupt key store header");
    KeyStore store;
    store.queues_.resize(static_cast<std::size_t>(c));
    std::vector<Matrix> slots(static_cast<std::size_t>(c), Matrix(l, d));
    for (auto& m : slots)
      for (int s = 0; s < d; ++s)
        for (int i = 0; i < l; ++i) m(i, s) = binary::read_f32(is);
    for (int k = 0; k < c; ++k) {
      Rng unused(0);
      KeyQueue q(1, 1, unused, normalize_keys);
      q.restore(std::move(slots[static_cast<std::size_t>(k)]), binary::read_i32(is));
      store.queues_[static_cast<std::size_t>(k)] = std::move(q);
    }
    return store;
  }

 private:
  void check_category(int category) const {
    require(category >= 0 && category < num_categories(),
            "category " + std::to_string(category) + " out of range [0, " +
                std::to_string(num_categories()) + ")");
  }

  const KeyQueue& queue(int category) const {
    check_category(category);
    return queues_[static_cast<std::size_t>(category)];
  }

  std::vector<KeyQueue> queues_;
  std::uint64_t enqueued_ = 0;
};

}  // namespace selftune
