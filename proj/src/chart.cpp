#include "nst/chart.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace nst {

namespace {

constexpr std::array<Rgb, 10> kPalette{{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189},
    {140, 86, 75}, {227, 119, 194}, {127, 127, 127}, {188, 189, 34}, {23, 190, 207},
}};

constexpr Rgb kGrey{170, 170, 170};

// 3x5 glyphs, one row per 3 bits.
std::array<std::uint8_t, 5> glyph(char ch) {
  switch (ch) {
    case '0': return {7, 5, 5, 5, 7};
    case '1': return {2, 6, 2, 2, 7};
    case '2': return {7, 1, 7, 4, 7};
    case '3': return {7, 1, 7, 1, 7};
    case '4': return {5, 5, 7, 1, 1};
    case '5': return {7, 4, 7, 1, 7};
    case '6': return {7, 4, 7, 5, 7};
    case '7': return {7, 1, 1, 1, 1};
    case '8': return {7, 5, 7, 5, 7};
    case '9': return {7, 5, 7, 1, 7};
    case '.': return {0, 0, 0, 0, 2};
    default: return {0, 0, 0, 0, 0};
  }
}

void append(std::vector<std::uint8_t>* out, png_bytep data, png_size_t n) {
  out->insert(out->end(), data, data + n);
}

}  // namespace

std::span<const Rgb> path_palette() { return kPalette; }

Canvas::Canvas(std::size_t width, std::size_t height, Rgb background)
    : width_(width), height_(height), pixels_(width * height, background) {}

void Canvas::set(long x, long y, Rgb c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(width_) || y >= static_cast<long>(height_)) return;
  pixels_[static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x)] = c;
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c) {
  const double steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1.0});
  const int n = static_cast<int>(std::ceil(steps));
  for (int i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) / n;
    set(std::lround(x0 + s * (x1 - x0)), std::lround(y0 + s * (y1 - y0)), c);
  }
}

void Canvas::text(long x, long y, std::string_view s, Rgb c, int scale) {
  for (char ch : s) {
    const auto g = glyph(ch);
    for (int row = 0; row < 5; ++row)
      for (int col = 0; col < 3; ++col)
        if (g[row] & (4 >> col))
          for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx) set(x + col * scale + dx, y + row * scale + dy, c);
    x += 4 * scale;
  }
}

void draw_axes(Canvas& canvas, const PlotFrame& f) {
  canvas.line(f.left, f.bottom, f.right, f.bottom, kBlack);
  canvas.line(f.left, f.bottom, f.left, f.top, kBlack);
  const char* labels[] = {"0", "0.25", "0.5", "0.75", "1"};
  for (int i = 0; i <= 4; ++i) {
    const double u = i / 4.0;
    canvas.line(f.px(u), f.bottom, f.px(u), f.bottom + 5, kBlack);
    canvas.line(f.left - 5, f.py(u), f.left, f.py(u), kBlack);
    const std::string_view s = labels[i];
    const long w = static_cast<long>(s.size()) * 8;
    canvas.text(std::lround(f.px(u)) - w / 2, std::lround(f.bottom) + 10, s, kBlack, 2);
    canvas.text(std::lround(f.left) - 10 - w, std::lround(f.py(u)) - 5, s, kBlack, 2);
  }
}

void draw_series(Canvas& canvas, const PlotFrame& f, std::span<const double> ys, Rgb color,
                 double x_from, double x_to) {
  if (ys.empty()) return;
  auto clampy = [&](double v) {
    const double lo = f.top - 2.0, hi = f.bottom + 2.0;
    return std::clamp(f.py(std::isfinite(v) ? v : 0.0), lo, hi);
  };
  const double n = static_cast<double>(std::max<std::size_t>(ys.size() - 1, 1));
  double px = f.px(x_from), py = clampy(ys[0]);
  if (ys.size() == 1) canvas.line(px, py, px, py, color);
  for (std::size_t i = 1; i < ys.size(); ++i) {
    const double x = f.px(x_from + (x_to - x_from) * static_cast<double>(i) / n);
    const double y = clampy(ys[i]);
    canvas.line(px, py, x, y, color);
    px = x;
    py = y;
  }
}

FitChart draw_fit_chart(std::span<const double> dataset, const PathEnsemble& ensemble) {
  FitChart chart{Canvas(kChartWidth, kChartHeight), 0};
  const PlotFrame frame;
  draw_axes(chart.canvas, frame);
  for (std::size_t p = 0; p < ensemble.n_paths && chart.paths_drawn < kMaxChartPaths; ++p) {
    if (ensemble.diverged[p]) continue;
    draw_series(chart.canvas, frame, ensemble.path(p), kPalette[chart.paths_drawn]);
    ++chart.paths_drawn;
  }
  draw_series(chart.canvas, frame, dataset, kBlack);
  return chart;
}

std::size_t render_fit_chart(std::span<const double> dataset, const PathEnsemble& ensemble,
                             const std::filesystem::path& path) {
  const auto chart = draw_fit_chart(dataset, ensemble);
  write_png(chart.canvas, path);
  return chart.paths_drawn;
}

Canvas draw_market_chart(std::span<const double> historical, std::span<const double> simulated,
                         std::span<const std::size_t> boundaries) {
  Canvas canvas(kChartWidth, kChartHeight);
  const PlotFrame frame;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : historical) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : simulated)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1.0;
  auto scale = [&](std::span<const double> s) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - lo) / (hi - lo);
    return out;
  };
  draw_axes(canvas, frame);
  const std::size_t n = std::max(historical.size(), simulated.size());
  const double span = static_cast<double>(std::max<std::size_t>(n, 2) - 1);
  for (std::size_t b : boundaries) {
    const double x = frame.px(static_cast<double>(b) / span);
    canvas.line(x, frame.top, x, frame.bottom, kGrey);
  }
  draw_series(canvas, frame, scale(historical), kBlack, 0.0,
              static_cast<double>(historical.size() - 1) / span);
  // Each window in its own colour.
  const auto sim = scale(simulated);
  std::vector<std::size_t> cuts(boundaries.begin(), boundaries.end());
  if (cuts.empty() || cuts.front() != 0) cuts.insert(cuts.begin(), 0);
  if (cuts.back() != sim.size() - 1) cuts.push_back(sim.size() - 1);
  for (std::size_t w = 0; w + 1 < cuts.size(); ++w) {
    const std::size_t a = cuts[w], b = std::min(cuts[w + 1], sim.size() - 1);
    if (b <= a) continue;
    draw_series(canvas, frame, std::span<const double>(sim).subspan(a, b - a + 1),
                kPalette[w % kPalette.size()], static_cast<double>(a) / span,
                static_cast<double>(b) / span);
  }
  return canvas;
}

void render_market_chart(std::span<const double> historical, std::span<const double> simulated,
                         std::span<const std::size_t> boundaries, const std::filesystem::path& path) {
  write_png(draw_market_chart(historical, simulated, boundaries), path);
}

std::vector<std::uint8_t> encode_png(const Canvas& canvas) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> row(canvas.width() * 3);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw std::runtime_error("png: encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        append(static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p)), data, n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(canvas.width()),
               static_cast<png_uint_32>(canvas.height()), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  const auto px = canvas.pixels();
  for (std::size_t y = 0; y < canvas.height(); ++y) {
    for (std::size_t x = 0; x < canvas.width(); ++x) {
      const Rgb c = px[y * canvas.width() + x];
      row[3 * x] = c.r;
      row[3 * x + 1] = c.g;
      row[3 * x + 2] = c.b;
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const Canvas& canvas, const std::filesystem::path& path) {
  const auto bytes = encode_png(canvas);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write chart to " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("cannot write chart to " + path.string());
}

}  // namespace nst
