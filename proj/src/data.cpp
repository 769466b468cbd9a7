#include "nst/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <sstream>

namespace nst {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool valid_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  int y = 0, m = 0, d = 0;
  if (!parse_int(std::string_view(s).substr(0, 4), y) ||
      !parse_int(std::string_view(s).substr(5, 2), m) ||
      !parse_int(std::string_view(s).substr(8, 2), d))
    return false;
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  return ymd.ok();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

PriceSeries parse_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw DataError(source + ": line " + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split(line, ',');
  for (auto& h : header) std::transform(h.begin(), h.end(), h.begin(), ::tolower);
  const auto date_col = std::find(header.begin(), header.end(), "date") - header.begin();
  const auto close_col = std::find(header.begin(), header.end(), "close") - header.begin();
  if (date_col == static_cast<long>(header.size()) || close_col == static_cast<long>(header.size())) {
    fail("header must contain 'date' and 'close' columns");
  }

  std::vector<std::pair<std::string, double>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    const auto need = static_cast<std::size_t>(std::max(date_col, close_col));
    if (cells.size() <= need) fail("expected at least " + std::to_string(need + 1) + " columns");
    const std::string& date = cells[static_cast<std::size_t>(date_col)];
    if (!valid_iso_date(date)) fail("invalid date '" + date + "'");
    double close = 0.0;
    if (!parse_double(cells[static_cast<std::size_t>(close_col)], close) || !std::isfinite(close)) {
      fail("invalid close value '" + cells[static_cast<std::size_t>(close_col)] + "'");
    }
    if (!(close > 0.0)) fail("close must be positive");
    rows.emplace_back(date, close);
    row_lines.push_back(line_no);
  }
  if (rows.empty()) throw DataError(source + ": no data rows");

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rows[a].first < rows[b].first; });
  PriceSeries s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& [date, close] = rows[order[k]];
    if (k > 0 && date == s.dates.back()) {
      line_no = row_lines[order[k]];
      fail("duplicate date '" + date + "'");
    }
    s.dates.push_back(date);
    s.close.push_back(close);
  }
  return s;
}

PriceSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto s = parse_csv(in, path.string());
  s.asset = path.stem().string();
  if (!s.dates.empty()) s.period = s.dates.front() + " to " + s.dates.back();
  return s;
}

void write_csv(const PriceSeries& series, std::ostream& out) {
  out << "date,close\n";
  for (std::size_t i = 0; i < series.size(); ++i)
    out << series.dates[i] << ',' << format_number(series.close[i]) << '\n';
}

double NormalizedSeries::time(std::size_t i) const {
  return (static_cast<double>(i) - t_min) / (t_max - t_min);
}

NormalizedSeries normalize(std::span<const double> series) {
  if (series.size() < 2) throw DataError("normalization needs at least 2 points");
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  if (!(*hi > *lo)) throw DataError("constant series cannot be normalized");
  NormalizedSeries n;
  n.y_min = *lo;
  n.y_max = *hi;
  n.t_min = 0.0;
  n.t_max = static_cast<double>(series.size() - 1);
  const double range = n.y_max - n.y_min;
  n.values.reserve(series.size());
  for (double v : series) n.values.push_back((v - n.y_min) / range);
  return n;
}

std::vector<double> denormalize(std::span<const double> values, const NormalizedSeries& t) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(t.y_min + v * (t.y_max - t.y_min));
  return out;
}

std::vector<double> denormalize(const NormalizedSeries& series) {
  return denormalize(series.values, series);
}

std::vector<std::string> synthetic_dates(std::size_t n) {
  using namespace std::chrono;
  std::vector<std::string> out;
  sys_days day = year{2023} / January / 1;
  char buf[16];
  for (std::size_t i = 0; i < n; ++i, day += days{1}) {
    const year_month_day ymd{day};
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    out.emplace_back(buf);
  }
  return out;
}

namespace {

PriceSeries synthesize(const std::string& source,
                       std::initializer_list<std::pair<std::string_view, double>> values, double x0,
                       std::uint64_t seed, const Grid& grid, const std::string& label) {
  auto model = parse_model(source);
  for (const auto& [name, v] : values) {
    auto it = std::find_if(model.params.begin(), model.params.end(),
                           [&](const ParamDecl& p) { return p.name == name; });
    it->initial = v;
  }
  const auto noise = generate_noise(seed, 1, grid, kMaxEquations);
  const auto ens = simulate(model, model.initial_values(), {x0, 0.1}, grid, noise);
  PriceSeries s;
  const auto p = ens.path(0);
  s.close.assign(p.begin(), p.end());
  s.dates = synthetic_dates(s.close.size());
  s.asset = label;
  s.period = s.dates.front() + " to " + s.dates.back();
  return s;
}

}  // namespace

PriceSeries synthesize_gbm(double mu, double sigma, std::uint64_t seed, const Grid& grid,
                           double x0) {
  return synthesize("dV = mu*V dt + sigma*V dW", {{"mu", mu}, {"sigma", sigma}}, x0, seed, grid, "synthetic-gbm");
}

PriceSeries synthesize_ou_seasonal(const OuSeasonalSpec& spec, std::uint64_t seed,
                                   const Grid& grid) {
  return synthesize("param A = 0\ndV = theta*(m - V) + A*sin(2*pi*f*t) dt + sigma dW",
                    {{"theta", spec.theta},
                     {"m", spec.level},
                     {"A", spec.amplitude},
                     {"f", spec.frequency},
                     {"sigma", spec.sigma}},
                    spec.x0, seed, grid, "synthetic-ou-seasonal");
}

bool is_synthetic(const std::string& spec) { return spec.rfind("synthetic:", 0) == 0; }

PriceSeries load_dataset(const std::string& spec) {
  if (!is_synthetic(spec)) return load_csv(spec);
  const auto parts = split(spec, ':');
  if (parts.size() != 3) throw DataError("bad synthetic spec '" + spec + "'");
  std::vector<double> v;
  for (const auto& cell : split(parts[2], ',')) {
    double x = 0.0;
    if (!parse_double(cell, x)) throw DataError("bad number '" + cell + "' in '" + spec + "'");
    v.push_back(x);
  }
  auto grid_for = [&](std::size_t n_fixed) {
    const std::size_t n = v.size() > n_fixed ? static_cast<std::size_t>(v[n_fixed]) : 101;
    if (n < 3) throw DataError("synthetic series needs at least 3 points");
    return Grid{0.0, n - 1, 1.0 / static_cast<double>(n - 1)};
  };
  if (parts[1] == "gbm") {
    if (v.size() != 3 && v.size() != 4) throw DataError("expected synthetic:gbm:mu,sigma,seed[,n]");
    return synthesize_gbm(v[0], v[1], static_cast<std::uint64_t>(v[2]), grid_for(3));
  }
  if (parts[1] == "ou") {
    if (v.size() != 6 && v.size() != 7) {
      throw DataError("expected synthetic:ou:theta,level,amplitude,frequency,sigma,seed[,n]");
    }
    OuSeasonalSpec s{v[0], v[1], v[2], v[3], v[4], 1.0};
    return synthesize_ou_seasonal(s, static_cast<std::uint64_t>(v[5]), grid_for(6));
  }
  throw DataError("unknown synthetic family '" + parts[1] + "'");
}

}  // namespace nst
