#pragma once

// Empirical state series: loading from disk and the quantile-threshold
// local-dimension pipeline with every series point as a center.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"
#include "gdim/evt.hpp"
#include "gdim/io.hpp"
#include "gdim/parallel.hpp"

namespace gdim {

enum class SeriesFormat { Csv, RawF64 };

inline std::string_view to_string(SeriesFormat f) { return f == SeriesFormat::Csv ? "csv" : "raw-f64"; }

inline std::optional<SeriesFormat> series_format_from_string(std::string_view s) {
  if (s == "csv") return SeriesFormat::Csv;
  if (s == "raw-f64") return SeriesFormat::RawF64;
  return std::nullopt;
}

/// A loaded series of d-dimensional states with its per-coordinate range.
struct EmpiricalSeries {
  Trajectory states;
  std::vector<std::pair<double, double>> bounding_box;

  std::size_t dim() const noexcept { return states.dim(); }
  std::size_t size() const noexcept { return states.size(); }
  const std::string& label() const noexcept { return states.label(); }
};

struct LoadOptions {
  std::size_t dim = 0;  // required for raw-f64, checked against the rows for csv when set
  Metric metric = Metric::Euclidean;
  std::string label;
};

namespace detail {

inline EmpiricalSeries make_series(std::vector<double> data, std::size_t dim, const LoadOptions& opts) {
  if (data.empty()) throw InsufficientData("load_series: states", 0, 1);
  EmpiricalSeries s{Trajectory(std::move(data), dim, opts.metric, opts.label.empty() ? "external" : opts.label), {}};
  s.bounding_box.assign(dim, {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double* x = s.states.raw(i);
    for (std::size_t k = 0; k < dim; ++k) {
      s.bounding_box[k].first = std::min(s.bounding_box[k].first, x[k]);
      s.bounding_box[k].second = std::max(s.bounding_box[k].second, x[k]);
    }
  }
  return s;
}

}  // namespace detail

/// CSV: leading or interleaved lines starting with '#' and blank lines are
/// skipped; every other line is one state, comma-separated.
inline EmpiricalSeries parse_series_csv(std::istream& in, const LoadOptions& opts = {}) {
  std::vector<double> data;
  std::size_t dim = opts.dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = io::split(t, ',');
    if (dim == 0) dim = fields.size();
    if (fields.size() != dim)
      throw ParseError("expected " + std::to_string(dim) + " fields, found " + std::to_string(fields.size()), line_no);
    for (auto f : fields) {
      const auto v = io::parse_double(f);
      if (!v) throw ParseError("not a number: '" + std::string(f) + "'", line_no);
      if (!std::isfinite(*v)) throw NonFiniteError("non-finite value '" + std::string(f) + "'", line_no);
      data.push_back(*v);
    }
  }
  return detail::make_series(std::move(data), dim, opts);
}

/// raw-f64: little-endian IEEE doubles, row-major, opts.dim per state.
/// Errors report the 1-based state index as the line.
inline EmpiricalSeries parse_series_raw(std::istream& in, const LoadOptions& opts) {
  if (opts.dim == 0) throw ArgumentError("load_series: raw-f64 needs the state dimension");
  std::vector<double> data;
  unsigned char buf[8];
  std::size_t n = 0;
  while (in.read(reinterpret_cast<char*>(buf), 8)) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | buf[b];
    const double v = std::bit_cast<double>(bits);
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value", n / opts.dim + 1);
    data.push_back(v);
    ++n;
  }
  if (in.gcount() != 0) throw ParseError("trailing partial value", n / opts.dim + 1);
  if (n % opts.dim != 0) throw ParseError("value count not a multiple of dim", n / opts.dim + 1);
  return detail::make_series(std::move(data), opts.dim, opts);
}

inline EmpiricalSeries load_series(const std::string& path, SeriesFormat format, LoadOptions opts = {}) {
  std::ifstream in(path, format == SeriesFormat::RawF64 ? std::ios::binary : std::ios::in);
  if (!in) throw ArgumentError("load_series: cannot open " + path);
  if (opts.label.empty()) opts.label = path;
  return format == SeriesFormat::Csv ? parse_series_csv(in, opts) : parse_series_raw(in, opts);
}

inline void write_series_raw(std::ostream& out, const Trajectory& traj) {
  for (std::size_t i = 0; i < traj.size(); ++i) {
    for (double v : traj.state(i)) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char buf[8];
      for (int b = 0; b < 8; ++b, bits >>= 8) buf[b] = static_cast<char>(bits & 0xff);
      out.write(buf, 8);
    }
  }
}

// ---------------------------------------------------------------------------
// Quantile spectrum

struct QuantileOptions {
  std::size_t stride = 1;           // every stride-th series point is a center
  std::size_t exclusion = 0;        // indices within +-exclusion of the center are left out
  std::size_t min_exceedances = kMinExceedances;
  unsigned threads = 0;
};

/// One Table-1 row.
struct QuantileRow {
  double p = 0.0;
  double d_min = 0.0;   // D_inf estimate
  double d_mean = 0.0;  // D_1
  std::vector<double> dq;
  double d_max = 0.0;   // D_-inf estimate
  double r_eff = 0.0;
  double d_sd = 0.0;
  std::size_t n_centers = 0;
  std::size_t n_dropped = 0;
  bool spread_decrease = false;  // sd below the row with the next smaller p
};

struct QuantileTable {
  std::vector<double> q_list;
  std::vector<QuantileRow> rows;
};

/// Smallest series length with room for min_exceedances above the p-quantile
/// at ten times the bare requirement.
inline std::size_t feasible_length(double p, std::size_t min_exceedances) {
  return static_cast<std::size_t>(std::ceil(10.0 * static_cast<double>(min_exceedances) / (1.0 - p)));
}

namespace detail {

// POT local dimensions from the distances d_j to the center, one per
// quantile, each equal bit for bit to local_dimension_pot on phi = -log d.
// Order statistics are located on d (phi is decreasing in d), so only the
// quantile neighbours and the exceedances need a logarithm, and one partition
// of the smallest distances serves every quantile.
inline std::vector<std::optional<LocalDimension>> pot_from_distances(std::span<const double> d,
                                                                     std::span<const double> ps,
                                                                     std::size_t min_exceedances) {
  std::vector<std::optional<LocalDimension>> out(ps.size());
  std::vector<double> pos;
  pos.reserve(d.size());
  std::size_t n_infinite = 0;
  for (double v : d) {
    if (v > 0.0)
      pos.push_back(v);
    else
      ++n_infinite;
  }
  if (pos.empty()) return out;
  const std::size_t m = pos.size();
  std::vector<std::size_t> order(ps.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ps[a] < ps[b]; });
  std::size_t prefix = m;  // pos[0, prefix) holds the prefix smallest distances
  for (std::size_t idx : order) {
    const double p = ps[idx];
    const double h = static_cast<double>(m - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t k = m - 1 - lo;  // phi rank lo is d rank k (ascending)
    std::nth_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k),
                     pos.begin() + static_cast<std::ptrdiff_t>(prefix));
    prefix = k + 1;
    const double a = -std::log(pos[k]);
    double u = a;
    if (lo + 1 < m) {
      const double b = -std::log(*std::max_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k)));
      u = a + (h - static_cast<double>(lo)) * (b - a);
    }
    const double d_cut = std::exp(-u) * (1.0 + 1e-12);
    double excess = 0.0;
    std::size_t count = 0;
    for (double v : d) {
      if (!(v > 0.0) || v > d_cut) continue;
      const double phi = -std::log(v);
      if (phi > u) {
        excess += phi - u;
        ++count;
      }
    }
    if (count < min_exceedances || count == 0) continue;
    excess /= static_cast<double>(count);
    if (!(excess > 0.0)) continue;
    out[idx] = LocalDimension{1.0 / excess, std::exp(-u), count, n_infinite};
  }
  return out;
}

inline std::vector<double> distances_to(const Trajectory& states, std::size_t i, std::size_t exclusion) {
  const std::size_t lo = i >= exclusion ? i - exclusion : 0;
  const std::size_t hi = std::min(states.size() - 1, i + exclusion);
  std::vector<double> d;
  d.reserve(states.size());
  const double* z = states.raw(i);
  for (std::size_t j = 0; j < states.size(); ++j) {
    if (j >= lo && j <= hi) continue;
    d.push_back(distance_unchecked(states.metric(), states.raw(j), z, states.dim()));
  }
  return d;
}

}  // namespace detail

/// POT local dimension of the series around its own point i, leaving out
/// indices within the exclusion window.
inline LocalDimension series_local_dimension(const Trajectory& states, std::size_t i, double p,
                                             const QuantileOptions& opts) {
  if (i >= states.size()) throw ArgumentError("series_local_dimension: index out of range");
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("series_local_dimension: p must lie in (0, 1)");
  const double ps[1] = {p};
  auto r = detail::pot_from_distances(detail::distances_to(states, i, opts.exclusion), ps, opts.min_exceedances);
  if (!r[0]) throw InsufficientData("series_local_dimension: usable exceedances above the quantile", 0,
                                    opts.min_exceedances);
  return *r[0];
}

inline QuantileTable quantile_spectrum(const EmpiricalSeries& series, std::span<const double> p_list,
                                       std::span<const double> q_list, const QuantileOptions& opts = {}) {
  if (p_list.empty()) throw ArgumentError("quantile_spectrum: empty p list");
  if (opts.stride == 0) throw ArgumentError("quantile_spectrum: stride must be >= 1");
  for (double p : p_list)
    if (!(p > 0.0 && p < 1.0)) throw ArgumentError("quantile_spectrum: p must lie in (0, 1)");
  for (double q : q_list)
    if (!std::isfinite(q)) throw ArgumentError("quantile_spectrum: q must be finite");
  const double p_max = *std::max_element(p_list.begin(), p_list.end());
  if (series.size() < feasible_length(p_max, opts.min_exceedances))
    throw InsufficientData("quantile_spectrum: series length for p = " + io::fmt(p_max), series.size(),
                           feasible_length(p_max, opts.min_exceedances));

  QuantileTable table;
  table.q_list.assign(q_list.begin(), q_list.end());
  const std::size_t n_centers = (series.size() + opts.stride - 1) / opts.stride;
  const std::size_t np = p_list.size();
  // distances are computed once per center and shared by every quantile
  std::vector<std::optional<LocalDimension>> out(n_centers * np);
  parallel_for(n_centers, opts.threads, [&](std::size_t c) {
    const auto d = detail::distances_to(series.states, c * opts.stride, opts.exclusion);
    auto r = detail::pot_from_distances(d, p_list, opts.min_exceedances);
    std::move(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(c * np));
  });
  for (std::size_t k = 0; k < np; ++k) {
    const double p = p_list[k];
    std::vector<double> d1r, r_cut;
    for (std::size_t c = 0; c < n_centers; ++c) {
      const auto& o = out[c * np + k];
      if (!o) continue;
      d1r.push_back(o->d1r);
      r_cut.push_back(o->r_cut);
    }
    if (d1r.empty())
      throw InsufficientData("quantile_spectrum: centers with an estimate at p = " + io::fmt(p), 0, 1);
    QuantileRow row;
    row.p = p;
    row.n_centers = d1r.size();
    row.n_dropped = n_centers - d1r.size();
    const auto [mn, mx] = std::minmax_element(d1r.begin(), d1r.end());
    row.d_min = *mn;
    row.d_max = *mx;
    const auto mean = dq_from_local_dims(d1r, r_cut, 1.0);
    row.d_mean = mean.dq;
    row.r_eff = mean.r_eff;
    double ss = 0.0;
    for (double d : d1r) ss += (d - row.d_mean) * (d - row.d_mean);
    row.d_sd = d1r.size() > 1 ? std::sqrt(ss / static_cast<double>(d1r.size() - 1)) : 0.0;
    for (double q : q_list) row.dq.push_back(dq_from_local_dims(d1r, r_cut, q).dq);
    table.rows.push_back(std::move(row));
  }
  // spread diagnostic in order of increasing p
  std::vector<std::size_t> order(table.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return table.rows[a].p < table.rows[b].p; });
  for (std::size_t k = 1; k < order.size(); ++k)
    table.rows[order[k]].spread_decrease = table.rows[order[k]].d_sd < table.rows[order[k - 1]].d_sd;
  return table;
}

/// Columns: p,d_min,d_mean,D<q>...,d_max,r_eff,n_dropped
inline void write_quantile_table_csv(std::ostream& out, const QuantileTable& t) {
  out << "p,d_min,d_mean";
  for (double q : t.q_list) out << ",D" << io::fmt(q);
  out << ",d_max,r_eff,n_dropped\n";
  for (const auto& r : t.rows) {
    out << io::fmt(r.p) << ',' << io::fmt(r.d_min) << ',' << io::fmt(r.d_mean);
    for (double v : r.dq) out << ',' << io::fmt(v);
    out << ',' << io::fmt(r.d_max) << ',' << io::fmt(r.r_eff) << ',' << r.n_dropped << '\n';
  }
}

}  // namespace gdim
