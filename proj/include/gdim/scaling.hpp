#pragma once

// Scaling exponents from ScalingTables: local slopes, least-squares fits of
// log-integrals against log r, and the slow-convergence extrapolation of
// local slopes toward r -> 0.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdim/error.hpp"
#include "gdim/io.hpp"
#include "gdim/recurrence.hpp"

namespace gdim {

/// Ordinary least squares y = intercept + slope * x.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  double residual_ss = 0.0;
  std::size_t n = 0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("linear_fit: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw FitError("linear_fit: need at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(x[i] - mx));
  if (!(sxx > 0.0) || scale == 0.0 || sxx <= 1e-28 * scale * scale * static_cast<double>(n))
    throw FitError("linear_fit: singular design (all abscissae equal)");
  LinearFit f;
  f.n = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - f.intercept - f.slope * x[i];
    f.residual_ss += e * e;
  }
  if (n > 2) {
    const double s2 = f.residual_ss / static_cast<double>(n - 2);
    f.slope_stderr = std::sqrt(s2 / sxx);
    f.intercept_stderr = std::sqrt(s2 * (1.0 / static_cast<double>(n) + mx * mx / sxx));
  }
  return f;
}

/// Radii admitted to a fit, inclusive. Unset bounds mean the full grid.
struct FitRange {
  std::optional<double> r_lo;
  std::optional<double> r_hi;

  bool contains(double r) const {
    // Relative slack so that bounds typed from printed grid values match.
    constexpr double slack = 1e-9;
    if (r_lo && r < *r_lo * (1.0 - slack)) return false;
    if (r_hi && r > *r_hi * (1.0 + slack)) return false;
    return true;
  }
};

struct SlopePoint {
  double r = 0.0;      // geometric midpoint of the two radii
  double sigma = 0.0;  // dimension-scale slope
};

/// sigma_q(r) between consecutive radii: the secant of log_value against
/// log r divided by (q - 1). Pairs touching a flagged or non-finite cell are
/// skipped.
inline std::vector<SlopePoint> local_slopes(const ScalingTable& table, double q) {
  if (q == 1.0) throw ArgumentError("local_slopes: q = 1 has no slope; use information_dimension");
  if (table.grid.size() < 2) throw ArgumentError("local_slopes: need at least 2 radii");
  const std::size_t i = table.q_index(q);
  std::vector<SlopePoint> out;
  for (std::size_t k = 0; k + 1 < table.grid.size(); ++k) {
    const double a = table.log_values[i][k], b = table.log_values[i][k + 1];
    if (table.flagged[i][k] || table.flagged[i][k + 1] || !std::isfinite(a) || !std::isfinite(b)) continue;
    const double r0 = table.grid[k], r1 = table.grid[k + 1];
    out.push_back({std::sqrt(r0 * r1), (b - a) / (std::log(r1) - std::log(r0)) / (q - 1.0)});
  }
  return out;
}

/// Regressor for the slope drift. InverseLog fits sigma = D + B / log r,
/// whose correction vanishes as r -> 0. Log fits sigma = D + B log r, the
/// plain log-linear form. Power fits sigma = D + B r^gamma for a given
/// exponent gamma.
enum class ExtrapolationModel { InverseLog, Log, Power };

inline std::string_view to_string(ExtrapolationModel m) {
  switch (m) {
    case ExtrapolationModel::InverseLog: return "inverse-log";
    case ExtrapolationModel::Log: return "log";
    case ExtrapolationModel::Power: return "power";
  }
  return "?";
}

struct Extrapolation {
  double dimension = 0.0;  // intercept D_q
  double b = 0.0;
  double stderr = 0.0;     // of the intercept
  std::size_t n = 0;
  double gamma = 0.0;      // exponent used by the Power model
};

inline Extrapolation extrapolate_dimension(std::span<const SlopePoint> slopes,
                                           ExtrapolationModel model = ExtrapolationModel::InverseLog,
                                           double gamma = 1.0) {
  if (slopes.size() < 3) throw FitError("extrapolate_dimension: need at least 3 slope points");
  if (model == ExtrapolationModel::Power && !(gamma > 0.0))
    throw ArgumentError("extrapolate_dimension: power exponent must be > 0");
  std::vector<double> x, y;
  for (const auto& s : slopes) {
    if (!(s.r > 0.0)) throw ArgumentError("extrapolate_dimension: radii must be > 0");
    const double lr = std::log(s.r);
    switch (model) {
      case ExtrapolationModel::InverseLog:
        if (lr == 0.0) throw FitError("extrapolate_dimension: r = 1 has no inverse-log regressor");
        x.push_back(1.0 / lr);
        break;
      case ExtrapolationModel::Log: x.push_back(lr); break;
      case ExtrapolationModel::Power: x.push_back(std::pow(s.r, gamma)); break;
    }
    y.push_back(s.sigma);
  }
  const LinearFit f = linear_fit(x, y);
  return {f.intercept, f.slope, f.intercept_stderr, f.n, model == ExtrapolationModel::Power ? gamma : 0.0};
}

/// Dimension from hitting-integral slopes at q < 2. With exponential
/// hitting statistics the integral carries a relative correction of order
/// mu(B)^(2-q) ~ r^(D(2-q)), so the slopes approach D like a power of r
/// whose exponent depends on D itself; gamma and D are iterated to a fixed
/// point starting from the mean slope.
inline Extrapolation extrapolate_hitting_dimension(std::span<const SlopePoint> slopes, double q,
                                                   int max_iter = 50) {
  if (!(q < 2.0)) throw ArgumentError("extrapolate_hitting_dimension: needs q < 2");
  if (slopes.size() < 3) throw FitError("extrapolate_hitting_dimension: need at least 3 slope points");
  double d = 0.0;
  for (const auto& s : slopes) d += s.sigma;
  d /= static_cast<double>(slopes.size());
  Extrapolation e;
  for (int it = 0; it < max_iter; ++it) {
    const double gamma = std::max(d, 1e-3) * (2.0 - q);
    e = extrapolate_dimension(slopes, ExtrapolationModel::Power, gamma);
    if (std::abs(e.dimension - d) < 1e-10) return e;
    d = e.dimension;
  }
  return e;
}

struct TauFit {
  double tau = 0.0;
  double stderr = 0.0;
  double r_lo = 0.0;  // smallest radius used
  double r_hi = 0.0;  // largest radius used
  std::size_t n_points = 0;
};

/// Least-squares slope of log_value against log r over the fit range,
/// flagged and non-finite cells excluded. For every table kind the slope is
/// the exponent tau at the requested q itself: the Upsilon table is already
/// indexed so that its slope tracks tau(q) for q <= 2, and above q = 2 it
/// saturates at tau(2).
inline TauFit fit_tau(const ScalingTable& table, double q, const FitRange& range = {}) {
  const std::size_t i = table.q_index(q);
  std::vector<double> x, y;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 0; k < table.grid.size(); ++k) {
    const double r = table.grid[k];
    if (!range.contains(r) || table.flagged[i][k] || !std::isfinite(table.log_values[i][k])) continue;
    x.push_back(std::log(r));
    y.push_back(table.log_values[i][k]);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  if (x.size() < 3) throw FitError("fit_tau: fewer than 3 usable radii at q = " + io::fmt(q));
  const LinearFit f = linear_fit(x, y);
  return {f.slope, f.slope_stderr, lo, hi, f.n};
}

struct InformationDimension {
  double d1 = 0.0;
  double stderr = 0.0;
  std::size_t dropped = 0;  // zero-measure centers, summed over radii
};

/// Slope of the average of log mu(B(z, r)) against log r.
inline InformationDimension information_dimension(const LogMeasureAverage& avg, const FitRange& range = {}) {
  std::vector<double> x, y;
  std::size_t dropped = 0;
  for (std::size_t k = 0; k < avg.grid.size(); ++k) {
    dropped += avg.dropped[k];
    if (!range.contains(avg.grid[k]) || !std::isfinite(avg.mean_log_measure[k])) continue;
    x.push_back(std::log(avg.grid[k]));
    y.push_back(avg.mean_log_measure[k]);
  }
  if (x.size() < 2) throw FitError("information_dimension: fewer than 2 usable radii");
  const LinearFit f = linear_fit(x, y);
  return {f.slope, f.slope_stderr, dropped};
}

/// Mean of finite-resolution local dimensions, with the standard error of
/// the mean.
inline InformationDimension information_dimension(std::span<const double> local_dims) {
  if (local_dims.empty()) throw InsufficientData("information_dimension: no local dimensions", 0, 1);
  double m = 0.0;
  for (double d : local_dims) m += d;
  m /= static_cast<double>(local_dims.size());
  double v = 0.0;
  for (double d : local_dims) v += (d - m) * (d - m);
  const double n = static_cast<double>(local_dims.size());
  const double se = local_dims.size() > 1 ? std::sqrt(v / (n - 1.0) / n) : 0.0;
  return {m, se, 0};
}

enum class SpectrumMethod { GammaFit, UpsilonFit, ReturnFit, ExceedanceFit, GevFit, LocalDimFormula };

inline std::string_view to_string(SpectrumMethod m) {
  switch (m) {
    case SpectrumMethod::GammaFit: return "gamma-fit";
    case SpectrumMethod::UpsilonFit: return "upsilon-fit";
    case SpectrumMethod::ReturnFit: return "return-fit";
    case SpectrumMethod::ExceedanceFit: return "exceedance-fit";
    case SpectrumMethod::GevFit: return "gev-fit";
    case SpectrumMethod::LocalDimFormula: return "local-dim-formula";
  }
  return "?";
}

inline SpectrumMethod spectrum_method_from_string(std::string_view s) {
  for (auto m : {SpectrumMethod::GammaFit, SpectrumMethod::UpsilonFit, SpectrumMethod::ReturnFit,
                 SpectrumMethod::ExceedanceFit, SpectrumMethod::GevFit, SpectrumMethod::LocalDimFormula})
    if (to_string(m) == s) return m;
  throw ArgumentError("unknown spectrum method '" + std::string(s) + "'");
}

inline SpectrumMethod method_for(IntegralKind k) {
  switch (k) {
    case IntegralKind::Gamma: return SpectrumMethod::GammaFit;
    case IntegralKind::Upsilon: return SpectrumMethod::UpsilonFit;
    case IntegralKind::GammaReturn: return SpectrumMethod::ReturnFit;
  }
  return SpectrumMethod::GammaFit;
}

/// Per-q estimates. stderr refers to dq. Non-monotone entries are flagged,
/// never altered.
struct DimensionSpectrum {
  std::vector<double> q_list;
  std::vector<double> tau;
  std::vector<double> dq;
  std::vector<double> stderr;
  SpectrumMethod method = SpectrumMethod::GammaFit;
  double r_lo = std::numeric_limits<double>::quiet_NaN();
  double r_hi = std::numeric_limits<double>::quiet_NaN();
  std::vector<bool> non_monotone;

  void push(double q, double tau_q, double dq_q, double se) {
    q_list.push_back(q);
    tau.push_back(tau_q);
    dq.push_back(dq_q);
    stderr.push_back(se);
  }

  std::size_t size() const noexcept { return q_list.size(); }

  std::size_t q_index(double q) const {
    for (std::size_t i = 0; i < q_list.size(); ++i)
      if (q_list[i] == q) return i;
    throw ArgumentError("DimensionSpectrum: q = " + io::fmt(q) + " not present");
  }
};

/// Marks i when dq at the next larger q exceeds dq[i] by more than twice the
/// larger of the two stderrs.
inline void flag_monotonicity(DimensionSpectrum& s) {
  s.non_monotone.assign(s.size(), false);
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s.q_list[a] < s.q_list[b]; });
  for (std::size_t k = 0; k + 1 < order.size(); ++k) {
    const std::size_t a = order[k], b = order[k + 1];
    if (!std::isfinite(s.dq[a]) || !std::isfinite(s.dq[b])) continue;
    const double tol = 2.0 * std::max(s.stderr[a], s.stderr[b]);
    if (s.dq[b] > s.dq[a] + tol) s.non_monotone[a] = s.non_monotone[b] = true;
  }
}

/// Discrete second differences of tau on a uniformly spaced q-grid that
/// exceed twice the local stderr of tau (concavity check). Returns the
/// interior indices that violate it.
inline std::vector<std::size_t> concavity_violations(const DimensionSpectrum& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    const double h0 = s.q_list[i] - s.q_list[i - 1], h1 = s.q_list[i + 1] - s.q_list[i];
    if (!(h0 > 0.0) || std::abs(h1 - h0) > 1e-9 * std::abs(h0)) continue;
    const double d2 = s.tau[i + 1] - 2.0 * s.tau[i] + s.tau[i - 1];
    auto tau_se = [&](std::size_t j) { return s.stderr[j] * std::abs(s.q_list[j] - 1.0); };
    const double tol = 2.0 * (tau_se(i - 1) + 2.0 * tau_se(i) + tau_se(i + 1));
    if (d2 > tol) out.push_back(i);
  }
  return out;
}

/// Solves p log(1/p) / (1 - p) = u for p in (0, 1). The left side is the
/// mean of 1/H for a geometric hitting time with success probability p, so
/// p is the ball measure implied by a q = 2 hitting-integral value u.
/// Returns NaN when u is outside (0, 1).
inline double geometric_hitting_measure(double u) {
  if (!(u > 0.0 && u < 1.0)) return std::numeric_limits<double>::quiet_NaN();
  auto g = [](double lp) {
    const double p = std::exp(lp);
    return p * (-lp) / (-std::expm1(lp));
  };
  double lo = -745.0, hi = -1e-12;  // log p
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::abs(lo); ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < u ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

/// tau(2) from a hitting-integral table through geometric_hitting_measure:
/// the slope of log p(r) against log r. This removes the logarithmic drift
/// that the q = 2 local slopes show under exponential hitting statistics.
inline TauFit fit_tau_hitting_q2(const ScalingTable& table, const FitRange& range = {}) {
  const std::size_t i = table.q_index(2.0);
  std::vector<double> x, y;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 0; k < table.grid.size(); ++k) {
    const double r = table.grid[k];
    if (!range.contains(r) || table.flagged[i][k] || !std::isfinite(table.log_values[i][k])) continue;
    const double p = geometric_hitting_measure(std::exp(table.log_values[i][k]));
    if (!std::isfinite(p)) continue;
    x.push_back(std::log(r));
    y.push_back(std::log(p));
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  if (x.size() < 3) throw FitError("fit_tau_hitting_q2: fewer than 3 usable radii");
  const LinearFit f = linear_fit(x, y);
  return {f.slope, f.slope_stderr, lo, hi, f.n};
}

/// How a dimension is read off a table.
///  LeastSquares: slope of the log-integral over the fit range.
///  Extrapolated: local slopes extrapolated with the chosen model.
///  Hitting: for hitting-time tables; power-law extrapolation below q = 2,
///    the geometric inversion at q = 2, and the plain slope above 2 where
///    the integral saturates at tau(2).
enum class SlopeEstimator { LeastSquares, Extrapolated, Hitting };

inline std::string_view to_string(SlopeEstimator e) {
  switch (e) {
    case SlopeEstimator::LeastSquares: return "least-squares";
    case SlopeEstimator::Extrapolated: return "extrapolated";
    case SlopeEstimator::Hitting: return "hitting";
  }
  return "?";
}

struct DimensionEstimate {
  double dq = 0.0;
  double stderr = 0.0;
  double r_lo = 0.0;
  double r_hi = 0.0;
};

struct SpectrumOptions {
  FitRange range;
  SlopeEstimator estimator = SlopeEstimator::LeastSquares;
  ExtrapolationModel model = ExtrapolationModel::InverseLog;
  /// Replace regression standard errors by a jackknife over target groups,
  /// which also carries the sampling noise shared by all radii.
  bool jackknife = false;
  std::optional<InformationDimension> d1;  // supplies the q = 1 entry
};

/// Delete-one-group jackknife of an estimator over the table's target groups.
template <typename Fn>
double jackknife_stderr(const ScalingTable& table, Fn&& estimator) {
  const std::size_t g = table.groups();
  if (g < 2) throw InsufficientData("jackknife_stderr: target groups", g, 2);
  std::vector<double> v(g);
  for (std::size_t b = 0; b < g; ++b) v[b] = estimator(table.without_group(b));
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(g);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss * static_cast<double>(g - 1) / static_cast<double>(g));
}

namespace detail {

inline DimensionEstimate estimate_once(const ScalingTable& table, double q, const SpectrumOptions& opts) {
  auto slopes_in_range = [&] {
    std::vector<SlopePoint> sl;
    for (const auto& p : local_slopes(table, q))
      if (opts.range.contains(p.r)) sl.push_back(p);
    return sl;
  };
  auto from_slopes = [](const std::vector<SlopePoint>& sl, const Extrapolation& e) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& p : sl) {
      lo = std::min(lo, p.r);
      hi = std::max(hi, p.r);
    }
    return DimensionEstimate{e.dimension, e.stderr, lo, hi};
  };
  auto from_fit = [q](const TauFit& f) {
    return DimensionEstimate{f.tau / (q - 1.0), f.stderr / std::abs(q - 1.0), f.r_lo, f.r_hi};
  };
  switch (opts.estimator) {
    case SlopeEstimator::LeastSquares: return from_fit(fit_tau(table, q, opts.range));
    case SlopeEstimator::Extrapolated: {
      const auto sl = slopes_in_range();
      return from_slopes(sl, extrapolate_dimension(sl, opts.model));
    }
    case SlopeEstimator::Hitting:
      if (q < 2.0) {
        const auto sl = slopes_in_range();
        return from_slopes(sl, extrapolate_hitting_dimension(sl, q));
      }
      if (q == 2.0) return from_fit(fit_tau_hitting_q2(table, opts.range));
      return from_fit(fit_tau(table, q, opts.range));
  }
  throw ArgumentError("unknown slope estimator");
}

}  // namespace detail

/// D_q from one row of a table (q != 1).
inline DimensionEstimate dimension_estimate(const ScalingTable& table, double q, const SpectrumOptions& opts = {}) {
  if (q == 1.0) throw ArgumentError("dimension_estimate: q = 1 needs the information-dimension path");
  DimensionEstimate e = detail::estimate_once(table, q, opts);
  if (opts.jackknife)
    e.stderr = jackknife_stderr(table, [&](const ScalingTable& t) { return detail::estimate_once(t, q, opts).dq; });
  return e;
}

/// Spectrum from one table. At q = 1 the entry comes from opts.d1 when
/// given and is NaN otherwise; it is never interpolated across q.
inline DimensionSpectrum spectrum_from_table(const ScalingTable& table, const SpectrumOptions& opts = {}) {
  DimensionSpectrum s;
  s.method = method_for(table.kind);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double q : table.q_list) {
    if (q == 1.0) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      if (opts.d1)
        s.push(q, 0.0, opts.d1->d1, opts.d1->stderr);
      else
        s.push(q, 0.0, nan, nan);
      continue;
    }
    const DimensionEstimate e = dimension_estimate(table, q, opts);
    s.push(q, e.dq * (q - 1.0), e.dq, e.stderr);
    lo = std::min(lo, e.r_lo);
    hi = std::max(hi, e.r_hi);
  }
  if (hi > 0.0) {
    s.r_lo = lo;
    s.r_hi = hi;
  }
  flag_monotonicity(s);
  return s;
}

/// CSV columns: q, tau, dq, stderr, method, r_lo, r_hi.
inline void write_spectrum_csv(std::ostream& out, const DimensionSpectrum& s) {
  out << "q,tau,dq,stderr,method,r_lo,r_hi\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    out << io::fmt(s.q_list[i]) << ',' << io::fmt(s.tau[i]) << ',' << io::fmt(s.dq[i]) << ','
        << io::fmt(s.stderr[i]) << ',' << to_string(s.method) << ',' << io::fmt(s.r_lo) << ',' << io::fmt(s.r_hi)
        << '\n';
}

inline double parse_csv_number(std::string_view tok, std::size_t line) {
  if (tok == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (tok == "inf") return std::numeric_limits<double>::infinity();
  if (tok == "-inf") return -std::numeric_limits<double>::infinity();
  auto v = io::parse_double(tok);
  if (!v) throw ParseError("not a number: '" + std::string(tok) + "'", line);
  return *v;
}

/// Reads a spectrum written by write_spectrum_csv. Lines starting with '#'
/// are skipped.
inline DimensionSpectrum read_spectrum_csv(std::istream& in) {
  DimensionSpectrum s;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!header) {
      if (t != "q,tau,dq,stderr,method,r_lo,r_hi") throw ParseError("unexpected spectrum header", lineno);
      header = true;
      continue;
    }
    const auto f = io::split(t, ',');
    if (f.size() != 7) throw ParseError("expected 7 fields", lineno);
    s.push(parse_csv_number(f[0], lineno), parse_csv_number(f[1], lineno), parse_csv_number(f[2], lineno),
           parse_csv_number(f[3], lineno));
    s.method = spectrum_method_from_string(f[4]);
    s.r_lo = parse_csv_number(f[5], lineno);
    s.r_hi = parse_csv_number(f[6], lineno);
  }
  if (!header) throw ParseError("missing spectrum header", lineno);
  flag_monotonicity(s);
  return s;
}

}  // namespace gdim
