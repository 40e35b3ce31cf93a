#include <gtest/gtest.h>

#include <selftune/datagen.hpp>

#include <filesystem>
#include <set>

using namespace selftune;

namespace {

// Least-squares one-hot regression with a bias column; train accuracy.
double linear_probe_accuracy(const Dataset& ds) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  Matrix x(n, ds.inputs.rows() + 1);
  x.leftCols(ds.inputs.rows()) = ds.inputs.transpose();
  x.col(x.cols() - 1).setOnes();
  Matrix y = Matrix::Zero(n, ds.num_categories);
  for (Eigen::Index i = 0; i < n; ++i) y(i, ds.labels[static_cast<std::size_t>(i)]) = 1.0;
  const Matrix w = x.colPivHouseholderQr().solve(y);
  const Matrix scores = x * w;
  int hits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best;
    scores.row(i).maxCoeff(&best);
    hits += best == ds.labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("selftune_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(GaussianMixture, ShapesAndBalance) {
  const auto ds = make_gaussian_mixture(3, 4, 10, 5.0, 1);
  EXPECT_EQ(ds.inputs.rows(), 4);
  EXPECT_EQ(ds.size(), 30u);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), c), 10);
}

TEST(GaussianMixture, WellSeparatedIsLinearlySeparable) {
  const auto ds = make_gaussian_mixture(2, 2, 50, 10.0, 7);
  EXPECT_GE(linear_probe_accuracy(ds), 0.99);
}

TEST(GaussianMixture, RejectsZeroSeparation) {
  EXPECT_THROW(make_gaussian_mixture(2, 2, 50, 0.0, 7), ArgumentError);
  EXPECT_THROW(make_gaussian_mixture(1, 2, 50, 1.0, 7), ArgumentError);
}

TEST(GaussianMixture, SeedDeterminesData) {
  const auto a = make_gaussian_mixture(3, 5, 8, 2.0, 11);
  const auto b = make_gaussian_mixture(3, 5, 8, 2.0, 11);
  const auto c = make_gaussian_mixture(3, 5, 8, 2.0, 12);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.inputs, c.inputs);
}

TEST(Split, FullProportionLeavesNoUnlabeled) {
  const auto ds = make_gaussian_mixture(3, 2, 10, 3.0, 1);
  SplitOptions o;
  o.proportion = 1.0;
  const auto s = split_label_proportion(ds, o, 2);
  EXPECT_TRUE(s.unlabeled.empty());
  EXPECT_EQ(s.labeled.size() + s.test.size(), ds.size());
}

TEST(Split, FifteenPercentOfTwentyPerClass) {
  const auto ds = make_gaussian_mixture(4, 2, 25, 3.0, 1);
  SplitOptions o;
  o.proportion = 0.15;
  o.test_fraction = 0.2;
  const auto s = split_label_proportion(ds, o, 3);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.labeled.size(), 12u);
  EXPECT_EQ(s.unlabeled.size(), 68u);
}

TEST(Split, EveryCategoryLabeledEvenAtTinyProportion) {
  const auto ds = make_gaussian_mixture(5, 2, 12, 3.0, 1);
  SplitOptions o;
  o.proportion = 0.01;
  const auto s = split_label_proportion(ds, o, 4);
  std::set<int> seen(s.labeled.labels.begin(), s.labeled.labels.end());
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Split, LabelsPerClassOverridesProportion) {
  const auto ds = make_gaussian_mixture(3, 2, 20, 3.0, 1);
  SplitOptions o;
  o.labels_per_class = 4;
  const auto s = split_label_proportion(ds, o, 4);
  EXPECT_EQ(s.labeled.size(), 12u);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(std::count(s.labeled.labels.begin(), s.labeled.labels.end(), c), 4);
  o.labels_per_class = 17;  // pool is 16 per class
  EXPECT_THROW(split_label_proportion(ds, o, 4), ArgumentError);
}

TEST(Split, RejectsOutOfRangeOptions) {
  const auto ds = make_gaussian_mixture(3, 2, 20, 3.0, 1);
  SplitOptions o;
  o.proportion = 0.0;
  EXPECT_THROW(split_label_proportion(ds, o, 1), ArgumentError);
  o.proportion = 1.5;
  EXPECT_THROW(split_label_proportion(ds, o, 1), ArgumentError);
}

// Property: the three parts are disjoint and cover the dataset.
TEST(Split, PartsAreDisjointAndCover) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng() % 5);
    const int per = 2 + static_cast<int>(rng() % 30);
    auto ds = make_gaussian_mixture(c, 1, per, 1.0, rng());
    // Tag each example by its index so the parts can be traced back.
    for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) ds.inputs(0, j) = static_cast<double>(j);
    SplitOptions o;
    o.proportion = 0.05 + 0.9 * static_cast<double>(rng() % 100) / 100.0;
    o.test_fraction = 0.01 + 0.3 * static_cast<double>(rng() % 100) / 100.0;
    const auto s = split_label_proportion(ds, o, rng());
    std::multiset<int> ids;
    for (const Dataset* part : {&s.labeled, &s.unlabeled, &s.test})
      for (Eigen::Index j = 0; j < part->inputs.cols(); ++j) {
        const int id = static_cast<int>(part->inputs(0, j));
        ids.insert(id);
        EXPECT_EQ(part->labels[static_cast<std::size_t>(j)], ds.labels[static_cast<std::size_t>(id)]);
      }
    ASSERT_EQ(ids.size(), ds.size());
    EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), ds.size());
  }
}

TEST(Split, SeedDeterminesAssignment) {
  const auto ds = make_gaussian_mixture(3, 2, 20, 3.0, 1);
  const auto a = split_label_proportion(ds, {}, 5);
  const auto b = split_label_proportion(ds, {}, 5);
  const auto c = split_label_proportion(ds, {}, 6);
  EXPECT_EQ(a.labeled.inputs, b.labeled.inputs);
  EXPECT_NE(a.unlabeled.inputs, c.unlabeled.inputs);
}

TEST(Augment, ZeroStrengthIsIdentity) {
  const Matrix x = Matrix::Random(6, 3);
  Augmenter a({AugmentationKind::gaussian_noise, 0.0}, 1);
  Augmenter b({AugmentationKind::coordinate_dropout, 0.0}, 2);
  const auto [v1, v2] = two_views(a, b, x);
  EXPECT_EQ(v1, x);
  EXPECT_EQ(v2, x);
}

TEST(Augment, GaussianNoiseMeanSquaredDisplacement) {
  const int d = 8;
  const double sigma = 0.3;
  Augmenter a({AugmentationKind::gaussian_noise, sigma}, 3);
  const Matrix x = Matrix::Random(d, 1);
  double acc = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) acc += (a(x) - x).squaredNorm();
  const double expected = d * sigma * sigma;
  EXPECT_NEAR(acc / draws, expected, 0.05 * expected);
}

TEST(Augment, ViewsDifferAndAreSeeded) {
  const Matrix x = Matrix::Random(4, 2);
  Augmenter a({AugmentationKind::gaussian_noise, 0.1}, 5), b({AugmentationKind::gaussian_noise, 0.1}, 6);
  Augmenter a2({AugmentationKind::gaussian_noise, 0.1}, 5), b2({AugmentationKind::gaussian_noise, 0.1}, 6);
  const auto [v1, v2] = two_views(a, b, x);
  const auto [w1, w2] = two_views(a2, b2, x);
  EXPECT_NE(v1, v2);
  EXPECT_EQ(v1, w1);
  EXPECT_EQ(v2, w2);
}

TEST(Augment, DropoutZeroesOnlyCoordinates) {
  Augmenter a({AugmentationKind::coordinate_dropout, 0.5}, 4);
  const Matrix x = Matrix::Constant(50, 4, 2.0);
  const Matrix v = a(x);
  for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_TRUE(v(i) == 0.0 || v(i) == 2.0);
  EXPECT_GT((v.array() == 0.0).count(), 0);
  EXPECT_THROW(Augmenter({AugmentationKind::coordinate_dropout, 1.5}, 1), ArgumentError);
}

TEST(Augment, CropFlipPreservesShapeAndNeedsImages) {
  const InputShape shape = InputShape::image(1, 4, 4);
  Augmenter a({AugmentationKind::random_crop_flip, 1.0}, 8, shape);
  const Matrix x = Matrix::Random(16, 3);
  const Matrix v = a(x);
  EXPECT_EQ(v.rows(), 16);
  EXPECT_EQ(v.cols(), 3);
  Augmenter flat({AugmentationKind::random_crop_flip, 1.0}, 8);
  EXPECT_THROW(flat(x), ArgumentError);
}

TEST(Augment, KindNamesRoundTrip) {
  for (auto k : {AugmentationKind::gaussian_noise, AugmentationKind::coordinate_dropout,
                 AugmentationKind::random_crop_flip})
    EXPECT_EQ(augmentation_kind_from_string(to_string(k)), k);
  EXPECT_THROW(augmentation_kind_from_string("mixup"), ArgumentError);
}

TEST(Io, CsvRoundTrip) {
  const auto dir = scratch("csv");
  std::filesystem::create_directories(dir);
  const auto ds = make_gaussian_mixture(3, 4, 5, 2.0, 1);
  write_csv(ds, (dir / "d.csv").string());
  const auto back = read_csv((dir / "d.csv").string());
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_categories, 3);
  EXPECT_TRUE(back.inputs.isApprox(ds.inputs, 1e-12));
  std::filesystem::remove_all(dir);
}

TEST(Io, CsvRejectsMalformedRows) {
  const auto dir = scratch("badcsv");
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "d.csv");
    os << "x0,x1,label\n1,2,0\n3,1\n";
  }
  EXPECT_THROW(read_csv((dir / "d.csv").string()), ArgumentError);
  EXPECT_THROW(read_csv((dir / "missing.csv").string()), ArgumentError);
  std::filesystem::remove_all(dir);
}

TEST(Io, ImageDirectoryRoundTrip) {
  const auto dir = scratch("img");
  const auto ds = make_blob_images(3, 2, 6, 4, 0.1, 5);
  EXPECT_EQ(ds.shape.dim, 2 * 6 * 6);
  write_image_dir(ds, dir.string());
  const auto back = read_image_dir(dir.string());
  EXPECT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.shape.channels, 2);
  EXPECT_EQ(back.labels, ds.labels);
  // 8-bit quantization.
  EXPECT_LE((back.inputs - ds.inputs).cwiseAbs().maxCoeff(), 0.5 / 255.0 + 1e-12);
  std::filesystem::remove_all(dir);
}
