#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nst/engine.hpp"

namespace nst {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr std::size_t kChartWidth = 640;
inline constexpr std::size_t kChartHeight = 480;
inline constexpr std::size_t kMaxChartPaths = 10;

/// Non-black palette for simulated paths.
std::span<const Rgb> path_palette();

class Canvas {
 public:
  Canvas(std::size_t width, std::size_t height, Rgb background = kWhite);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  Rgb at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }
  void set(long x, long y, Rgb c);
  void line(double x0, double y0, double x1, double y1, Rgb c);
  void text(long x, long y, std::string_view s, Rgb c, int scale = 1);
  std::span<const Rgb> pixels() const { return pixels_; }

 private:
  std::size_t width_, height_;
  std::vector<Rgb> pixels_;
};

/// Plot area mapping of the unit square, with room for tick labels.
struct PlotFrame {
  double left = 50, right = 620, top = 20, bottom = 440;
  double px(double u) const { return left + u * (right - left); }
  double py(double v) const { return bottom - v * (bottom - top); }
};

/// Draws axes and ticks at 0, 0.25, ..., 1 on both axes.
void draw_axes(Canvas& canvas, const PlotFrame& frame);
/// Polyline of a series spread evenly over x in [x_from, x_to].
void draw_series(Canvas& canvas, const PlotFrame& frame, std::span<const double> ys, Rgb color,
                 double x_from = 0.0, double x_to = 1.0);

struct FitChart {
  Canvas canvas;
  std::size_t paths_drawn = 0;
};

/// Historical series in black over up to 10 simulated paths in colour, on
/// the unit square.
FitChart draw_fit_chart(std::span<const double> dataset, const PathEnsemble& ensemble);
std::size_t render_fit_chart(std::span<const double> dataset, const PathEnsemble& ensemble,
                             const std::filesystem::path& path);

/// Historical vs simulated price with vertical window separators. Both series
/// share the same scale; boundaries are indices into the series.
Canvas draw_market_chart(std::span<const double> historical, std::span<const double> simulated,
                         std::span<const std::size_t> boundaries);
void render_market_chart(std::span<const double> historical, std::span<const double> simulated,
                         std::span<const std::size_t> boundaries, const std::filesystem::path& path);

/// 8-bit RGB PNG without timestamps or other variable chunks.
void write_png(const Canvas& canvas, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Canvas& canvas);

}  // namespace nst
