#include <selftune/plot.hpp>

#include <gtest/gtest.h>

#include <filesystem>

#include "png_reader.hpp"

using namespace selftune;
using namespace selftune::plot;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "selftune_test_plot";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST(Plot, CanvasPixelsSurviveAPngRoundTrip) {
  Canvas c(7, 5);
  c.set(2, 3, Rgb{10, 20, 30});
  c.set(-1, 0, kBlack);  // clipped
  c.set(7, 0, kBlack);
  const auto path = scratch("pixels.png").string();
  c.write_png(path);
  ASSERT_TRUE(has_png_signature(path));
  const PngImage img = read_png(path);
  EXPECT_EQ(img.width, 7);
  EXPECT_EQ(img.height, 5);
  EXPECT_EQ(img.color_type, PNG_COLOR_TYPE_RGB);
  EXPECT_EQ(img.bit_depth, 8);
  EXPECT_EQ(img.rows[3][6], 10);
  EXPECT_EQ(img.rows[3][7], 20);
  EXPECT_EQ(img.rows[3][8], 30);
  EXPECT_EQ(img.rows[0][0], 255);
}

TEST(Plot, LineEndpointsAndThickness) {
  Canvas c(20, 20);
  c.line(2, 3, 15, 11, kBlack);
  EXPECT_EQ(c.get(2, 3).r, 0);
  EXPECT_EQ(c.get(15, 11).r, 0);
  Canvas t(20, 20);
  t.line(5, 10, 15, 10, kBlack, 3);
  EXPECT_EQ(t.get(10, 9).r, 0);
  EXPECT_EQ(t.get(10, 11).r, 0);
  EXPECT_EQ(t.get(10, 13).r, 255);
}

TEST(Plot, TextDrawsInk) {
  Canvas c(40, 10);
  c.text(0, 0, "a1", kBlack);
  int ink = 0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 40; ++x) ink += c.get(x, y).r == 0;
  EXPECT_GT(ink, 10);
  EXPECT_EQ(Canvas::text_width("abc", 2), 36);
}

TEST(Plot, TicksAreRoundAndInsideTheRange) {
  const auto t = detail::ticks(0.0, 1.0);
  ASSERT_FALSE(t.empty());
  EXPECT_NEAR(t.front(), 0.0, 1e-12);
  EXPECT_NEAR(t.back(), 1.0, 1e-12);
  for (double v : detail::ticks(-0.37, 2.9)) {
    EXPECT_GE(v, -0.37);
    EXPECT_LE(v, 2.9 + 1e-9);
  }
  EXPECT_EQ(detail::tick_label(0.5), "0.5");
  EXPECT_EQ(detail::tick_label(2.0), "2");
  EXPECT_EQ(detail::tick_label(-0.0), "0");
}

TEST(Plot, ChartsWriteValidPngs) {
  const std::vector<double> x = {1, 2, 3, 4};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto lc = line_chart("acc", "epoch", "accuracy", {{"a", x, {0.1, 0.4, nan, 0.8}}, {"b", x, {0.2, 0.2, 0.3, 0.3}}},
                             AxisRange{0.0, 1.0});
  const auto bc = bar_chart("bars", "acc", {"one", "two"}, {0.4, 0.6}, {0.05, 0.0});
  Matrix m(2, 3);
  m << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  const auto hm = heat_map("heat", "L", "D", {"16", "32"}, {"1", "2", "4"}, m);
  for (const auto& [name, canvas] : std::vector<std::pair<std::string, Canvas>>{{"l.png", lc}, {"b.png", bc}, {"h.png", hm}}) {
    const auto path = scratch(name).string();
    canvas.write_png(path);
    const PngImage img = read_png(path);
    EXPECT_EQ(img.width, canvas.width()) << name;
    EXPECT_EQ(img.height, canvas.height()) << name;
  }
}

TEST(Plot, ShapeErrors) {
  EXPECT_THROW(line_chart("t", "x", "y", {}), ArgumentError);
  EXPECT_THROW(line_chart("t", "x", "y", {{"a", {1, 2}, {1}}}), ArgumentError);
  EXPECT_THROW(bar_chart("t", "y", {"a"}, {1, 2}, {0, 0}), ArgumentError);
  EXPECT_THROW(heat_map("t", "r", "c", {"a"}, {"b"}, Matrix::Zero(2, 2)), ArgumentError);
  EXPECT_THROW(Canvas(0, 3), ArgumentError);
  EXPECT_THROW(Canvas(3, 3).write_png("/nonexistent/dir/x.png"), std::runtime_error);
}
