#pragma once

// Static PNG charts: line chart, bar chart with error bars, heat map.
// Text uses a built-in 5x7 upper-case bitmap font.

#include "selftune/common.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace selftune::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrid{225, 225, 225};
inline constexpr std::array<Rgb, 8> kPalette = {
    Rgb{31, 119, 180}, Rgb{214, 39, 40},  Rgb{44, 160, 44},  Rgb{255, 127, 14},
    Rgb{148, 103, 189}, Rgb{140, 86, 75}, Rgb{227, 119, 194}, Rgb{127, 127, 127}};

namespace detail {

// Rows top to bottom, '#' = ink.
inline const std::map<char, std::array<const char*, 7>>& font() {
  static const std::map<char, std::array<const char*, 7>> f = {
      {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
      {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
      {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
      {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
      {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
      {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
      {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"}},
      {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
      {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
      {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
      {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
      {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
      {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
      {'N', {"#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"}},
      {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
      {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
      {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
      {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
      {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
      {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
      {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
      {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "}},
      {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
      {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
      {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
      {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
      {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
      {'3', {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "}},
      {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
      {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
      {'6', {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "}},
      {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
      {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
      {'9', {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "}},
      {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
      {',', {"     ", "     ", "     ", "     ", " ##  ", "  #  ", " #   "}},
      {'-', {"     ", "     ", "     ", "#####", "     ", "     ", "     "}},
      {'+', {"     ", "  #  ", "  #  ", "#####", "  #  ", "  #  ", "     "}},
      {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
      {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
      {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
      {'/', {"     ", "    #", "   # ", "  #  ", " #   ", "#    ", "     "}},
      {'(', {"   # ", "  #  ", " #   ", " #   ", " #   ", "  #  ", "   # "}},
      {')', {" #   ", "  #  ", "   # ", "   # ", "   # ", "  #  ", " #   "}},
      {'%', {"##   ", "##  #", "   # ", "  #  ", " #   ", "#  ##", "   ##"}},
      {'<', {"   # ", "  #  ", " #   ", "#    ", " #   ", "  #  ", "   # "}},
      {'>', {" #   ", "  #  ", "   # ", "    #", "   # ", "  #  ", " #   "}},
  };
  return f;
}

inline std::string tick_label(double v) {
  std::ostringstream os;
  os.precision(std::abs(v) >= 100 ? 0 : 2);
  os << std::fixed << v;
  std::string s = os.str();
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  return s == "-0" ? "0" : s;
}

}  // namespace detail

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = kWhite)
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
    require(width >= 1 && height >= 1, "canvas size must be positive");
    fill_rect(0, 0, width, height, background);
  }

  int width() const { return width_; }
  int height() const { return height_; }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    pixels_[i] = c.r;
    pixels_[i + 1] = c.g;
    pixels_[i + 2] = c.b;
  }

  Rgb get(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }

  void fill_rect(int x, int y, int w, int h, Rgb c) {
    for (int yy = std::max(0, y); yy < std::min(height_, y + h); ++yy)
      for (int xx = std::max(0, x); xx < std::min(width_, x + w); ++xx) set(xx, yy, c);
  }

  /// Bresenham line stamped with a square brush of side `thickness`.
  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    const int lo = -(thickness - 1) / 2;
    while (true) {
      fill_rect(x0 + lo, y0 + lo, thickness, thickness, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  /// Upper-cases `s`; characters without a glyph render as blanks.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1) {
    const auto& f = detail::font();
    for (char ch : s) {
      const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      auto it = f.find(u);
      if (it != f.end())
        for (int row = 0; row < 7; ++row)
          for (int col = 0; col < 5; ++col)
            if (it->second[static_cast<std::size_t>(row)][col] == '#')
              fill_rect(x + col * scale, y + row * scale, scale, scale, c);
      x += 6 * scale;
    }
  }

  /// Text rotated 90 degrees counter-clockwise, reading bottom to top from (x, y).
  void text_vertical(int x, int y, const std::string& s, Rgb c) {
    const auto& f = detail::font();
    for (char ch : s) {
      const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      auto it = f.find(u);
      if (it != f.end())
        for (int row = 0; row < 7; ++row)
          for (int col = 0; col < 5; ++col)
            if (it->second[static_cast<std::size_t>(row)][col] == '#') set(x + row, y - col, c);
      y -= 6;
    }
  }

  void write_png(const std::string& path) const {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(fp);
      throw std::runtime_error("libpng failed writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width_), static_cast<png_uint_32>(height_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height_; ++y)
      png_write_row(png, const_cast<png_bytep>(pixels_.data() + static_cast<std::size_t>(y) * width_ * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }

 private:
  int width_, height_;
  std::vector<std::uint8_t> pixels_;
};

/// Maps data coordinates into a pixel rectangle (y up).
struct Frame {
  int left = 70, top = 40, width = 520, height = 300;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  int px(double x) const { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * width)); }
  int py(double y) const { return top + height - static_cast<int>(std::lround((y - y0) / (y1 - y0) * height)); }
};

namespace detail {

inline std::vector<double> ticks(double lo, double hi, int target = 5) {
  const double span = hi - lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
  return out;
}

inline void axes(Canvas& c, const Frame& f, const std::string& title, const std::string& x_label,
                 const std::string& y_label, bool x_ticks = true) {
  for (double t : ticks(f.y0, f.y1)) {
    const int y = f.py(t);
    c.line(f.left, y, f.left + f.width, y, kGrid);
    const std::string s = tick_label(t);
    c.text(f.left - 6 - Canvas::text_width(s), y - 3, s, kBlack);
  }
  if (x_ticks)
    for (double t : ticks(f.x0, f.x1)) {
      const int x = f.px(t);
      c.line(x, f.top + f.height, x, f.top + f.height + 4, kBlack);
      const std::string s = tick_label(t);
      c.text(x - Canvas::text_width(s) / 2, f.top + f.height + 8, s, kBlack);
    }
  c.line(f.left, f.top, f.left, f.top + f.height, kBlack);
  c.line(f.left, f.top + f.height, f.left + f.width, f.top + f.height, kBlack);
  c.text(f.left + (f.width - Canvas::text_width(title, 2)) / 2, 10, title, kBlack, 2);
  c.text(f.left + (f.width - Canvas::text_width(x_label)) / 2, f.top + f.height + 24, x_label, kBlack);
  c.text_vertical(12, f.top + (f.height + Canvas::text_width(y_label)) / 2, y_label, kBlack);
}

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN entries break the line
};

struct AxisRange {
  double lo = 0.0, hi = 1.0;
};

inline Canvas line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                         const std::vector<Series>& series, std::optional<AxisRange> y_range = {}) {
  require(!series.empty(), "line chart needs at least one series");
  double xl = INFINITY, xh = -INFINITY, yl = INFINITY, yh = -INFINITY;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "series x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xl = std::min(xl, s.x[i]);
      xh = std::max(xh, s.x[i]);
      if (std::isfinite(s.y[i])) {
        yl = std::min(yl, s.y[i]);
        yh = std::max(yh, s.y[i]);
      }
    }
  }
  Frame f;
  std::tie(f.x0, f.x1) = xh > xl ? std::pair{xl, xh} : std::pair{xl - 1.0, xl + 1.0};
  if (y_range)
    std::tie(f.y0, f.y1) = std::pair{y_range->lo, y_range->hi};
  else
    std::tie(f.y0, f.y1) = detail::padded_range(yl, yh);

  Canvas c(f.left + f.width + 170, f.top + f.height + 45);
  detail::axes(c, f, title, x_label, y_label);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Rgb col = kPalette[k % kPalette.size()];
    const auto& s = series[k];
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
      if (std::isfinite(s.y[i]) && std::isfinite(s.y[i + 1]))
        c.line(f.px(s.x[i]), f.py(s.y[i]), f.px(s.x[i + 1]), f.py(s.y[i + 1]), col, 2);
    if (s.x.size() == 1 && std::isfinite(s.y[0])) c.fill_rect(f.px(s.x[0]) - 2, f.py(s.y[0]) - 2, 5, 5, col);
    const int ly = f.top + 10 + static_cast<int>(k) * 14;
    c.fill_rect(f.left + f.width + 14, ly, 12, 7, col);
    c.text(f.left + f.width + 30, ly, s.name, kBlack);
  }
  return c;
}

/// Vertical bars with +-1 standard deviation whiskers; names run beneath.
inline Canvas bar_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& names,
                        const std::vector<double>& means, const std::vector<double>& stddevs) {
  require(!names.empty() && names.size() == means.size() && names.size() == stddevs.size(),
          "bar chart needs matching names, means and deviations");
  double hi = 0.0, lo = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    hi = std::max(hi, means[i] + stddevs[i]);
    lo = std::min(lo, means[i] - stddevs[i]);
  }
  Frame f;
  f.height = 260;
  f.x0 = 0.0;
  f.x1 = static_cast<double>(names.size());
  std::tie(f.y0, f.y1) = hi > lo ? std::pair{lo, hi * 1.05} : std::pair{0.0, 1.0};
  std::size_t longest = 0;
  for (const auto& n : names) longest = std::max(longest, n.size());
  Canvas c(f.left + f.width + 20, f.top + f.height + 50 + static_cast<int>(longest) * 6);
  detail::axes(c, f, title, "", y_label, false);
  const int slot = f.width / static_cast<int>(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Rgb col = kPalette[i % kPalette.size()];
    const int x = f.left + static_cast<int>(i) * slot + slot / 5;
    const int w = slot * 3 / 5;
    const int y_top = f.py(std::max(means[i], 0.0)), y_bot = f.py(std::min(means[i], 0.0));
    c.fill_rect(x, y_top, w, std::max(1, y_bot - y_top), col);
    const int cx = x + w / 2;
    c.line(cx, f.py(means[i] - stddevs[i]), cx, f.py(means[i] + stddevs[i]), kBlack);
    c.line(cx - 4, f.py(means[i] + stddevs[i]), cx + 4, f.py(means[i] + stddevs[i]), kBlack);
    c.line(cx - 4, f.py(means[i] - stddevs[i]), cx + 4, f.py(means[i] - stddevs[i]), kBlack);
    c.text_vertical(cx - 3, f.top + f.height + 8 + static_cast<int>(names[i].size()) * 6, names[i], kBlack);
  }
  return c;
}

/// Cells shaded from light to dark blue over [min, max], values printed inside.
inline Canvas heat_map(const std::string& title, const std::string& row_name, const std::string& col_name,
                       const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels,
                       const Matrix& values) {
  require(values.rows() == static_cast<Eigen::Index>(row_labels.size()) &&
              values.cols() == static_cast<Eigen::Index>(col_labels.size()) && values.size() > 0,
          "heat map labels must match the value matrix");
  const int cell_w = 70, cell_h = 40, left = 80, top = 50;
  Canvas c(left + cell_w * static_cast<int>(values.cols()) + 20, top + cell_h * static_cast<int>(values.rows()) + 50);
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  c.text((c.width() - Canvas::text_width(title, 2)) / 2, 10, title, kBlack, 2);
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double t = hi > lo ? (values(i, j) - lo) / (hi - lo) : 0.5;
      const Rgb col{static_cast<std::uint8_t>(235 - 200 * t), static_cast<std::uint8_t>(240 - 150 * t),
                    static_cast<std::uint8_t>(255 - 75 * t)};
      const int x = left + static_cast<int>(j) * cell_w, y = top + static_cast<int>(i) * cell_h;
      c.fill_rect(x, y, cell_w - 2, cell_h - 2, col);
      std::ostringstream os;
      os.precision(3);
      os << std::fixed << values(i, j);
      c.text(x + (cell_w - Canvas::text_width(os.str())) / 2, y + cell_h / 2 - 4, os.str(), t > 0.6 ? kWhite : kBlack);
    }
  for (std::size_t i = 0; i < row_labels.size(); ++i)
    c.text(left - 8 - Canvas::text_width(row_labels[i]), top + static_cast<int>(i) * cell_h + cell_h / 2 - 4,
           row_labels[i], kBlack);
  for (std::size_t j = 0; j < col_labels.size(); ++j)
    c.text(left + static_cast<int>(j) * cell_w + (cell_w - Canvas::text_width(col_labels[j])) / 2,
           top + cell_h * static_cast<int>(values.rows()) + 6, col_labels[j], kBlack);
  c.text(left + (cell_w * static_cast<int>(values.cols()) - Canvas::text_width(col_name)) / 2,
         top + cell_h * static_cast<int>(values.rows()) + 24, col_name, kBlack);
  c.text_vertical(12, top + (cell_h * static_cast<int>(values.rows()) + Canvas::text_width(row_name)) / 2, row_name,
                  kBlack);
  return c;
}

}  // namespace selftune::plot
