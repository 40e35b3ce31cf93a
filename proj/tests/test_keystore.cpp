#include "oracles.hpp"

#include <gtest/gtest.h>

#include <selftune/keystore.hpp>

#include <sstream>

using selftune::ArgumentError;
using selftune::KeyStore;
using selftune::Matrix;
using selftune::Vector;

namespace {

Vector vec4(double a, double b, double c, double d) {
  Vector v(4);
  v << a, b, c, d;
  return v;
}

bool same_columns(const Matrix& a, const Matrix& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; }

}  // namespace

TEST(KeyStore, CreateFillsUnitKeys) {
  const KeyStore s = KeyStore::create(2, 2, 4, 0);
  EXPECT_EQ(s.capacity(), 4);
  const Matrix all = s.all_keys();
  ASSERT_EQ(all.cols(), 4);
  for (Eigen::Index j = 0; j < all.cols(); ++j) EXPECT_NEAR(all.col(j).norm(), 1.0, 1e-12);
  for (int c = 0; c < 2; ++c) EXPECT_EQ(s.cursor(c), 0);
}

TEST(KeyStore, CreateIsSeeded) {
  EXPECT_TRUE(same_columns(KeyStore::create(2, 2, 4, 0).all_keys(), KeyStore::create(2, 2, 4, 0).all_keys()));
  EXPECT_FALSE(same_columns(KeyStore::create(2, 2, 4, 0).all_keys(), KeyStore::create(2, 2, 4, 1).all_keys()));
}

TEST(KeyStore, CreateRejectsBadDimensions) {
  EXPECT_THROW(KeyStore::create(0, 2, 4, 0), ArgumentError);
  EXPECT_THROW(KeyStore::create(1, 2, 4, 0), ArgumentError);
  EXPECT_THROW(KeyStore::create(2, 0, 4, 0), ArgumentError);
  EXPECT_THROW(KeyStore::create(2, 2, 0, 0), ArgumentError);
}

TEST(KeyStore, FifoEvictionWithinCategory) {
  KeyStore s = KeyStore::create(2, 2, 4, 0);
  const Matrix cat1_before = s.positives(1);
  const Vector a = vec4(1, 0, 0, 0), b = vec4(0, 2, 0, 0), c = vec4(0, 0, 0, 3);
  s.enqueue(0, a);
  s.enqueue(0, b);
  s.enqueue(0, c);
  const Matrix p0 = s.positives(0);
  EXPECT_TRUE(p0.col(0).isApprox(b.normalized()));
  EXPECT_TRUE(p0.col(1).isApprox(c.normalized()));
  EXPECT_TRUE(same_columns(s.positives(1), cat1_before));
  EXPECT_EQ(s.enqueue_count(), 3u);
}

TEST(KeyStore, EnqueueValidatesInput) {
  KeyStore s = KeyStore::create(2, 2, 4, 0);
  EXPECT_THROW(s.enqueue(5, vec4(1, 0, 0, 0)), ArgumentError);
  EXPECT_THROW(s.enqueue(-1, vec4(1, 0, 0, 0)), ArgumentError);
  EXPECT_THROW(s.enqueue(0, vec4(0, 0, 0, 0)), ArgumentError);
  EXPECT_THROW(s.enqueue(0, Vector::Ones(3)), ArgumentError);
  EXPECT_THROW(s.positives(2), ArgumentError);
  EXPECT_THROW(s.negatives(-1), ArgumentError);
}

TEST(KeyStore, FreshStorePositivesAreSeededInitKeys) {
  const KeyStore s = KeyStore::create(2, 2, 4, 0);
  const Matrix all = s.all_keys();
  EXPECT_TRUE(same_columns(s.positives(1), all.rightCols(2)));
}

TEST(KeyStore, SnapshotsAreUnaffectedByLaterEnqueues) {
  KeyStore s = KeyStore::create(2, 2, 4, 0);
  const Matrix snap_pos = s.positives(0);
  const Matrix snap_neg = s.negatives(1);
  const Matrix copy_pos = snap_pos, copy_neg = snap_neg;
  s.enqueue(0, vec4(0, 0, 1, 1));
  EXPECT_TRUE(same_columns(snap_pos, copy_pos));
  EXPECT_TRUE(same_columns(snap_neg, copy_neg));
  EXPECT_FALSE(same_columns(s.positives(0), copy_pos));
}

TEST(KeyStore, NegativeSetSizeAndComplement) {
  const KeyStore s3 = KeyStore::create(3, 2, 4, 7);
  EXPECT_EQ(s3.negatives(0).cols(), 4);
  const KeyStore s2 = KeyStore::create(2, 2, 4, 7);
  EXPECT_TRUE(same_columns(s2.negatives(0), s2.positives(1)));
}

// Partition property over random stores: positives(c) and negatives(c)
// together are exactly the stored keys, with the stated sizes.
TEST(KeyStore, PartitionProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng() % 5);
    const int d = 1 + static_cast<int>(rng() % 6);
    const int l = 1 + static_cast<int>(rng() % 8);
    KeyStore s = KeyStore::create(c, d, l, rng());
    for (int k = 0; k < 3 * c * d; ++k) s.enqueue(static_cast<int>(rng() % c), oracle::random_unit(l, rng));
    const Matrix all = s.all_keys();
    for (int cat = 0; cat < c; ++cat) {
      const Matrix p = s.positives(cat);
      const Matrix n = s.negatives(cat);
      ASSERT_EQ(p.cols(), d);
      ASSERT_EQ(n.cols(), d * (c - 1));
      std::vector<bool> used(static_cast<std::size_t>(all.cols()), false);
      auto claim = [&](const Eigen::VectorXd& v) {
        for (Eigen::Index j = 0; j < all.cols(); ++j)
          if (!used[static_cast<std::size_t>(j)] && all.col(j) == v) {
            used[static_cast<std::size_t>(j)] = true;
            return true;
          }
        return false;
      };
      for (Eigen::Index j = 0; j < p.cols(); ++j) ASSERT_TRUE(claim(p.col(j)));
      for (Eigen::Index j = 0; j < n.cols(); ++j) ASSERT_TRUE(claim(n.col(j)));
      for (bool u : used) EXPECT_TRUE(u);
      for (Eigen::Index j = 0; j < all.cols(); ++j) EXPECT_NEAR(all.col(j).norm(), 1.0, 1e-6);
    }
    EXPECT_EQ(s.all_keys().cols(), c * d);
  }
}

TEST(KeyStore, MatchesBoundedDequeOracle) {
  std::mt19937_64 rng(2024);
  const int c = 4, d = 5, l = 6;
  KeyStore s = KeyStore::create(c, d, l, 3);
  oracle::BoundedDequeStore ref(c, d);
  for (int cat = 0; cat < c; ++cat) {
    const Matrix init = s.positives(cat);
    for (Eigen::Index j = 0; j < init.cols(); ++j) ref.seed(cat, init.col(j));
  }
  for (int k = 0; k < 1000; ++k) {
    const int cat = static_cast<int>(rng() % c);
    const Eigen::VectorXd key = Eigen::VectorXd::Random(l) * 3.0;
    s.enqueue(cat, key);
    ref.push(cat, key);
  }
  for (int cat = 0; cat < c; ++cat) {
    const Matrix p = s.positives(cat);
    const auto& q = ref.contents(cat);
    ASSERT_EQ(static_cast<std::size_t>(p.cols()), q.size());
    for (Eigen::Index j = 0; j < p.cols(); ++j) EXPECT_EQ(p.col(j), q[static_cast<std::size_t>(j)]);
  }
}

TEST(KeyStore, BinaryBlobLayoutAndReload) {
  KeyStore s = KeyStore::create(3, 2, 4, 9);
  s.enqueue(1, vec4(1, 2, 3, 4));
  std::stringstream blob;
  s.save(blob);
  const std::string bytes = blob.str();
  ASSERT_EQ(bytes.size(), 4u * (3 + 3 * 2 * 4 + 3));
  // header: C, D, L little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 4);
  // trailing cursors: 0, 1, 0
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 8]), 1);

  const KeyStore r = KeyStore::load(blob);
  EXPECT_EQ(r.num_categories(), 3);
  EXPECT_EQ(r.cursor(1), 1);
  EXPECT_TRUE(r.all_keys().isApprox(s.all_keys(), 1e-6));
  for (Eigen::Index j = 0; j < r.all_keys().cols(); ++j) EXPECT_NEAR(r.all_keys().col(j).norm(), 1.0, 1e-6);
}
