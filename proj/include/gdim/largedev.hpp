#pragma once

// Free energy of hitting times, Legendre-Fenchel rate functions and their
// empirical finite-resolution counterparts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

// pchip calls isnan unqualified; this brings boost::math::isnan into scope
#include <boost/math/special_functions/fpclassify.hpp>
#include <boost/math/interpolators/pchip.hpp>

#include "gdim/ball_index.hpp"
#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"
#include "gdim/evt.hpp"
#include "gdim/io.hpp"
#include "gdim/parallel.hpp"
#include "gdim/rng.hpp"
#include "gdim/scaling.hpp"

namespace gdim {

/// A scaling exponent q -> tau(q) with its evaluable domain.
struct TauFunction {
  std::function<double(double)> fn;
  double q_lo = -std::numeric_limits<double>::infinity();
  double q_hi = std::numeric_limits<double>::infinity();

  double operator()(double q) const {
    if (!(q >= q_lo - 1e-12 && q <= q_hi + 1e-12))
      throw RangeError("tau: q = " + io::fmt(q) + " outside [" + io::fmt(q_lo) + ", " + io::fmt(q_hi) + "]");
    return fn(std::clamp(q, q_lo, q_hi));
  }
  bool contains(double q) const noexcept { return q >= q_lo - 1e-12 && q <= q_hi + 1e-12; }
};

/// Self-similar measure with equal contraction ratio: tau(q) = log(sum p_i^q) / log(ratio).
inline TauFunction self_similar_tau(std::vector<double> probs, double ratio) {
  if (probs.empty()) throw ArgumentError("self_similar_tau: no weights");
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("self_similar_tau: ratio must be in (0, 1)");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw DomainError("self_similar_tau: weights must be > 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw DomainError("self_similar_tau: weights must sum to 1");
  const double log_ratio = std::log(ratio);
  return {[probs = std::move(probs), log_ratio](double q) {
            // log-sum-exp keeps large |q| finite
            double m = -std::numeric_limits<double>::infinity();
            for (double p : probs) m = std::max(m, q * std::log(p));
            double acc = 0.0;
            for (double p : probs) acc += std::exp(q * std::log(p) - m);
            return (m + std::log(acc)) / log_ratio;
          }};
}

inline TauFunction sierpinski_tau(double p1 = 0.25, double p2 = 0.25, double p3 = 0.5) {
  return self_similar_tau({p1, p2, p3}, 0.5);
}

/// Lebesgue measure in the given dimension: tau(q) = dim (q - 1).
inline TauFunction uniform_tau(double dim) {
  if (!(dim > 0.0)) throw ArgumentError("uniform_tau: dim must be > 0");
  return {[dim](double q) { return dim * (q - 1.0); }};
}

/// Shape-preserving cubic through the fitted (q, tau) points; tau(1) = 0 is
/// added when the spectrum has no usable entry there.
inline TauFunction interpolated_tau(const DimensionSpectrum& s) {
  std::vector<std::pair<double, double>> pts;
  bool has_one = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s.q_list[i])) continue;
    if (s.q_list[i] == 1.0) {
      has_one = true;
      pts.emplace_back(1.0, std::isfinite(s.tau[i]) ? s.tau[i] : 0.0);
    } else if (std::isfinite(s.tau[i])) {
      pts.emplace_back(s.q_list[i], s.tau[i]);
    }
  }
  if (!has_one) pts.emplace_back(1.0, 0.0);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.first == b.first; }), pts.end());
  if (pts.size() < 4) throw InsufficientData("interpolated_tau: usable spectrum points", pts.size(), 4);
  std::vector<double> x, y;
  for (auto& [q, t] : pts) {
    x.push_back(q);
    y.push_back(t);
  }
  const double lo = x.front(), hi = x.back();
  auto spline = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(std::move(x), std::move(y));
  return {[spline](double q) { return (*spline)(q); }, lo, hi};
}

enum class FreeEnergySource { Analytic, Fitted };

inline std::string_view to_string(FreeEnergySource s) {
  return s == FreeEnergySource::Analytic ? "analytic" : "fitted";
}

inline constexpr double kConvexityTol = 1e-6;

/// R(q) = -tau(1 - q) tabulated on a grid, with the underlying tau kept for
/// evaluation between grid points.
struct FreeEnergy {
  std::vector<double> q_grid;
  std::vector<double> R;
  FreeEnergySource source = FreeEnergySource::Analytic;
  TauFunction tau;
  std::vector<std::size_t> convexity_violations;

  double operator()(double q) const { return -tau(1.0 - q); }
  double q_lo() const noexcept { return 1.0 - tau.q_hi; }
  double q_hi() const noexcept { return 1.0 - tau.q_lo; }
  std::size_t size() const noexcept { return q_grid.size(); }
};

namespace detail {
// Indices where the second difference (divided difference rescaled by the
// local spacing, so equal to y[i+1] - 2y[i] + y[i-1] on a uniform grid)
// drops below -tol.
inline std::vector<std::size_t> convexity_breaks(std::span<const double> x, std::span<const double> y, double tol) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    const double d2 = 2.0 * h0 * h1 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0) / (h0 + h1);
    if (d2 < -tol) out.push_back(i);
  }
  return out;
}
}  // namespace detail

inline FreeEnergy free_energy(TauFunction tau, std::span<const double> q_grid,
                              FreeEnergySource source = FreeEnergySource::Analytic) {
  if (q_grid.empty()) throw ArgumentError("free_energy: empty q grid");
  for (std::size_t i = 1; i < q_grid.size(); ++i)
    if (!(q_grid[i] > q_grid[i - 1])) throw ArgumentError("free_energy: q grid must be strictly increasing");
  FreeEnergy F;
  F.source = source;
  F.tau = std::move(tau);
  F.q_grid.assign(q_grid.begin(), q_grid.end());
  for (double q : q_grid) {
    if (!F.tau.contains(1.0 - q))
      throw RangeError("free_energy: q = " + io::fmt(q) + " outside interpolable range [" + io::fmt(F.q_lo()) +
                       ", " + io::fmt(F.q_hi()) + "]");
    F.R.push_back(F(q));
  }
  F.convexity_violations = detail::convexity_breaks(F.q_grid, F.R, kConvexityTol);
  if (source == FreeEnergySource::Analytic && !F.convexity_violations.empty())
    throw ValidationError("free_energy: analytic R is not convex near q = " +
                          io::fmt(F.q_grid[F.convexity_violations.front()]));
  return F;
}

inline FreeEnergy free_energy(const DimensionSpectrum& spectrum, std::span<const double> q_grid) {
  return free_energy(interpolated_tau(spectrum), q_grid, FreeEnergySource::Fitted);
}

enum class RateKind { Q, Qhat, FAlpha, EmpiricalLocalDim, EmpiricalHitting };

inline std::string_view to_string(RateKind k) {
  switch (k) {
    case RateKind::Q: return "Q";
    case RateKind::Qhat: return "Qhat";
    case RateKind::FAlpha: return "f_alpha";
    case RateKind::EmpiricalLocalDim: return "empirical-local-dim";
    case RateKind::EmpiricalHitting: return "empirical-hitting";
  }
  return "?";
}

/// A rate function (or f(alpha)) on an s grid.
///
/// censored marks values that are only bounds: Legendre extrema reached at
/// the edge of the q range, and empirical cells with no samples (the value is
/// then log(n)/|log r|).
struct RateCurve {
  RateKind kind = RateKind::Q;
  std::vector<double> s;
  std::vector<double> values;
  std::vector<bool> censored;
  std::vector<std::size_t> n_samples;
  std::vector<std::size_t> tail_count;  // empirical: samples beyond s
  std::optional<double> r_level;
  std::vector<double> q_star;          // Legendre optimiser per s
  std::vector<bool> flagged;           // hitting: right-censoring above 10% of the count
  std::vector<bool> out_of_window;     // Qhat and hitting: outside (D1, D1 + R(D1+1)/(D1+1))

  std::size_t size() const noexcept { return s.size(); }
  bool uncensored(std::size_t i) const { return !censored[i]; }
};

struct LegendreOptions {
  double q_lo = -10.0;
  double q_hi = 10.0;
  double q_step = 0.01;
  double tol = 1e-8;
};

namespace detail {

inline std::vector<double> q_lattice(double lo, double hi, double step) {
  if (!(hi > lo) || !(step > 0.0)) throw ArgumentError("legendre: bad q range");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  std::vector<double> out(n + 1);
  for (std::size_t i = 0; i <= n; ++i) out[i] = lo + static_cast<double>(i) * step;
  if (hi - out.back() > 1e-9 * step) out.push_back(hi);
  return out;
}

struct SupResult {
  double value = 0.0;
  double q = 0.0;
  bool at_edge = false;
};

// Discrete sup over the lattice, then golden section on the bracketing cells.
template <typename G>
SupResult lattice_sup(const std::vector<double>& qs, G&& g, double tol) {
  std::vector<double> v(qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) v[i] = g(qs[i]);
  const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  const std::size_t last = qs.size() - 1;
  const double scale = 1e-12 * std::max(1.0, std::abs(v[best]));
  if (best == 0 && qs.size() > 1 && v[0] > v[1] + scale) return {v[0], qs[0], true};
  if (best == last && qs.size() > 1 && v[last] > v[last - 1] + scale) return {v[last], qs[last], true};
  double a = qs[best == 0 ? 0 : best - 1], b = qs[std::min(best + 1, last)];
  constexpr double invphi = 0.6180339887498949;
  double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
  double f1 = g(x1), f2 = g(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = g(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = g(x1);
    }
  }
  const double qm = 0.5 * (a + b);
  const double gm = g(qm);
  if (gm >= v[best]) return {gm, qm, false};
  return {v[best], qs[best], false};
}

}  // namespace detail

/// Legendre-Fenchel transforms of tau:
///   Q(s)     = sup_q { -q s + tau(q + 1) }
///   Qhat(s)  = sup_q {  q s + tau(1 - q) }
///   f(alpha) = min_q { alpha q - tau(q) }
/// The q range is clipped to where tau can be evaluated.
inline RateCurve legendre(RateKind kind, const TauFunction& tau, std::span<const double> s_grid,
                          const LegendreOptions& opts = {}) {
  if (kind != RateKind::Q && kind != RateKind::Qhat && kind != RateKind::FAlpha)
    throw ArgumentError("legendre: kind must be Q, Qhat or f_alpha");
  if (s_grid.empty()) throw ArgumentError("legendre: empty s grid");
  for (double s : s_grid)
    if (!std::isfinite(s)) throw ArgumentError("legendre: s grid must be finite");
  // tau argument as a function of q, and the q interval that keeps it in range
  double lo = opts.q_lo, hi = opts.q_hi;
  switch (kind) {
    case RateKind::Q:
      lo = std::max(lo, tau.q_lo - 1.0);
      hi = std::min(hi, tau.q_hi - 1.0);
      break;
    case RateKind::Qhat:
      lo = std::max(lo, 1.0 - tau.q_hi);
      hi = std::min(hi, 1.0 - tau.q_lo);
      break;
    default:
      lo = std::max(lo, tau.q_lo);
      hi = std::min(hi, tau.q_hi);
  }
  const auto qs = detail::q_lattice(lo, hi, opts.q_step);
  RateCurve c;
  c.kind = kind;
  c.s.assign(s_grid.begin(), s_grid.end());
  for (double s : s_grid) {
    detail::SupResult r;
    switch (kind) {
      case RateKind::Q: r = detail::lattice_sup(qs, [&](double q) { return -q * s + tau(q + 1.0); }, opts.tol); break;
      case RateKind::Qhat: r = detail::lattice_sup(qs, [&](double q) { return q * s + tau(1.0 - q); }, opts.tol); break;
      default:
        r = detail::lattice_sup(qs, [&](double q) { return -(s * q - tau(q)); }, opts.tol);
        r.value = -r.value;
    }
    c.values.push_back(r.value);
    c.q_star.push_back(r.q);
    c.censored.push_back(r.at_edge);
    c.n_samples.push_back(0);
    c.tail_count.push_back(0);
  }
  c.flagged.assign(c.size(), false);
  c.out_of_window.assign(c.size(), false);
  return c;
}

inline RateCurve legendre(RateKind kind, const FreeEnergy& F, std::span<const double> s_grid,
                          const LegendreOptions& opts = {}) {
  return legendre(kind, F.tau, s_grid, opts);
}

/// Back-transform of a Q curve: min_s { Q(s) + q s } over uncensored points,
/// which recovers tau(q + 1) when the minimiser lies inside the grid.
inline double legendre_back(const RateCurve& c, double q) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!c.censored[i]) best = std::min(best, c.values[i] + q * c.s[i]);
  if (!std::isfinite(best)) throw InsufficientData("legendre_back: uncensored points", 0, 1);
  return best;
}

/// Indices of uncensored points whose divided second difference is below -tol.
inline std::vector<std::size_t> rate_convexity_violations(const RateCurve& c, double tol = 1e-8) {
  std::vector<double> x, y;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.censored[i]) continue;
    x.push_back(c.s[i]);
    y.push_back(c.values[i]);
    idx.push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t k : detail::convexity_breaks(x, y, tol)) out.push_back(idx[k]);
  return out;
}

/// Upper end R(D)/D of the deviation window for hitting times, D = D1 + 1.
inline double hitting_window(const FreeEnergy& F, double d1) {
  const double delta = d1 + 1.0;
  return F(delta) / delta;
}

/// Marks points whose offset s - D1 lies outside (0, window).
inline void mark_window(RateCurve& c, double d1, double window) {
  c.out_of_window.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double off = c.s[i] - d1;
    c.out_of_window[i] = !(off > 0.0 && off < window);
  }
}

// ---------------------------------------------------------------------------
// Empirical rate functions

/// Local dimensions at a fixed radius: d1r = log mu(B(z, r)) / log r with
/// mu estimated from the trajectory. Centers with an empty ball are skipped.
inline LocalDimSample local_dimensions_at_radius(const Trajectory& traj, const Trajectory& centers, double r,
                                                 unsigned threads = 0) {
  if (centers.dim() != traj.dim()) throw ArgumentError("local_dimensions_at_radius: dimension mismatch");
  if (!(r > 0.0 && r < 1.0)) throw ArgumentError("local_dimensions_at_radius: r must be in (0, 1)");
  const BallIndex index(traj, r / 8.0);
  std::vector<std::size_t> counts(centers.size());
  parallel_for(centers.size(), threads, [&](std::size_t i) { counts[i] = index.count(centers.state(i), r); });
  LocalDimSample s;
  s.dim = traj.dim();
  s.p = std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(traj.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      ++s.skipped;
      continue;
    }
    const auto c = centers.state(i);
    s.centers.insert(s.centers.end(), c.begin(), c.end());
    s.d1r.push_back(std::log(static_cast<double>(counts[i]) / n) / std::log(r));
    s.r_cut.push_back(r);
    s.n_exceedances.push_back(counts[i]);
  }
  return s;
}

namespace detail {

inline double geometric_mean(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += std::log(x);
  return std::exp(acc / static_cast<double>(v.size()));
}

// Upper tail (values >= s) for s at or above the split, lower tail (values
// < s) below it.
inline RateCurve tail_rate(std::span<const double> values, std::span<const double> s_grid, double split, double r,
                           RateKind kind, std::string_view who) {
  std::vector<double> sorted;
  for (double v : values)
    if (!std::isnan(v)) sorted.push_back(v);
  if (sorted.empty()) throw InsufficientData(std::string(who) + ": samples", 0, 1);
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  const double log_r = std::log(r);
  RateCurve c;
  c.kind = kind;
  c.r_level = r;
  c.s.assign(s_grid.begin(), s_grid.end());
  for (double s : s_grid) {
    std::size_t count;
    if (s >= split)
      count = static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), s));
    else
      count = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), s) - sorted.begin());
    c.tail_count.push_back(count);
    if (count == 0) {
      c.values.push_back(std::log(n) / std::abs(log_r));
      c.censored.push_back(true);
    } else {
      c.values.push_back(std::log(static_cast<double>(count) / n) / log_r);
      c.censored.push_back(false);
    }
    c.n_samples.push_back(sorted.size());
  }
  c.flagged.assign(c.size(), false);
  c.out_of_window.assign(c.size(), false);
  if (std::none_of(c.censored.begin(), c.censored.end(), [](bool b) { return !b; }))
    throw InsufficientData(std::string(who) + ": uncensored points", 0, 1);
  return c;
}

}  // namespace detail

/// Q_r(s) = log(fraction of centers with d1r beyond s) / log r, split at the
/// sample mean of d1r. r defaults to the geometric mean of the sample's r_cut.
inline RateCurve empirical_rate_local_dim(const LocalDimSample& sample, std::span<const double> s_grid,
                                          std::optional<double> r_level = std::nullopt) {
  if (sample.size() == 0) throw InsufficientData("empirical_rate_local_dim: local dimensions", 0, 1);
  if (s_grid.empty()) throw ArgumentError("empirical_rate_local_dim: empty s grid");
  const double r = r_level ? *r_level : detail::geometric_mean(sample.r_cut);
  if (!(r > 0.0 && r < 1.0)) throw ArgumentError("empirical_rate_local_dim: r level must be in (0, 1)");
  const auto [lo, hi] = std::minmax_element(sample.d1r.begin(), sample.d1r.end());
  // clamped so rounding cannot push the mean of a constant sample past it
  const double mean = std::clamp(
      std::accumulate(sample.d1r.begin(), sample.d1r.end(), 0.0) / static_cast<double>(sample.size()), *lo, *hi);
  return detail::tail_rate(sample.d1r, s_grid, mean, r, RateKind::EmpiricalLocalDim, "empirical_rate_local_dim");
}

inline std::vector<RateCurve> empirical_rate_local_dim(std::span<const LocalDimSample> samples,
                                                       std::span<const double> s_grid) {
  if (samples.size() < 2) throw InsufficientData("empirical_rate_local_dim: r levels", samples.size(), 2);
  std::vector<RateCurve> out;
  for (const auto& s : samples) out.push_back(empirical_rate_local_dim(s, s_grid));
  return out;
}

namespace detail {
inline bool usable(const RateCurve& c, std::size_t i, std::size_t min_count) {
  if (c.censored[i]) return false;
  const bool empirical = c.kind == RateKind::EmpiricalLocalDim || c.kind == RateKind::EmpiricalHitting;
  return !empirical || c.tail_count[i] >= min_count;
}
}  // namespace detail

/// Largest |a - b| over points uncensored in both curves, with at least
/// min_count tail samples behind empirical values. NaN if there are none.
inline double sup_distance(const RateCurve& a, const RateCurve& b, std::size_t min_count = 1) {
  if (a.s != b.s) throw ArgumentError("sup_distance: curves on different s grids");
  double d = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!detail::usable(a, i, min_count) || !detail::usable(b, i, min_count)) continue;
    const double e = std::abs(a.values[i] - b.values[i]);
    d = std::isnan(d) ? e : std::max(d, e);
  }
  return d;
}

/// Sup distance of each curve to the reference over the common window: the
/// s points usable (as in sup_distance) in every curve and the reference.
inline std::vector<double> approach_distances(std::span<const RateCurve> curves, const RateCurve& reference,
                                              std::size_t min_count = 1) {
  std::vector<bool> keep(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) keep[i] = detail::usable(reference, i, min_count);
  for (const auto& c : curves) {
    if (c.s != reference.s) throw ArgumentError("approach_distances: curves on different s grids");
    for (std::size_t i = 0; i < c.size(); ++i) keep[i] = keep[i] && detail::usable(c, i, min_count);
  }
  if (std::find(keep.begin(), keep.end(), true) == keep.end())
    throw InsufficientData("approach_distances: common window points", 0, 1);
  std::vector<double> out;
  for (const auto& c : curves) {
    double d = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (keep[i]) d = std::max(d, std::abs(c.values[i] - reference.values[i]));
    out.push_back(d);
  }
  return out;
}

struct HittingRateOptions {
  double d1 = 0.0;                         // deviations are measured from D1
  std::uint64_t seed = 1;
  std::size_t scan_len = std::size_t{1} << 22;
  std::size_t burn_in = kDefaultBurnIn;
  unsigned threads = 0;
};

inline constexpr double kRightCensorFlag = 0.1;

/// Hitting times H of B(z, r) by the orbit of x for independent pairs (x, z).
/// Pair i draws z from Orbit(seed'(2i)) and x from Orbit(seed'(2i+1)).
/// Unhit pairs come back as +inf.
inline std::vector<double> pair_hitting_times(const SystemSpec& spec, double r, std::size_t n_pairs,
                                              const HittingRateOptions& opts) {
  if (!(r > 0.0)) throw ArgumentError("pair_hitting_times: r must be > 0");
  if (n_pairs == 0) throw ArgumentError("pair_hitting_times: n_pairs must be >= 1");
  if (opts.scan_len == 0) throw ArgumentError("pair_hitting_times: scan length must be >= 1");
  const std::size_t dim = spec.dim();
  std::vector<double> H(n_pairs);
  parallel_for(n_pairs, opts.threads, [&](std::size_t i) {
    const Orbit zo(spec, derive_seed(opts.seed, 2 * i), opts.burn_in);
    const std::vector<double> z(zo.view().begin(), zo.view().end());
    Orbit x(spec, derive_seed(opts.seed, 2 * i + 1), opts.burn_in);
    H[i] = std::numeric_limits<double>::infinity();
    for (std::size_t n = 1; n <= opts.scan_len; ++n) {
      x.advance();
      if (detail::within(spec.metric, x.state(), z.data(), dim, r)) {
        H[i] = static_cast<double>(n);
        break;
      }
    }
  });
  return H;
}

/// Qhat_emp(D1 + s) = log(fraction of pairs with log H / (-log r) beyond
/// D1 + s) / log r. Offsets s >= 0 use the upper tail (unhit pairs count in
/// it), s < 0 the lower tail.
inline RateCurve empirical_rate_hitting(std::span<const double> hitting_times, double r,
                                        std::span<const double> s_offsets, const HittingRateOptions& opts) {
  if (!(r > 0.0 && r < 1.0)) throw ArgumentError("empirical_rate_hitting: r must be in (0, 1)");
  if (s_offsets.empty()) throw ArgumentError("empirical_rate_hitting: empty s grid");
  const double L = -std::log(r);
  std::vector<double> x(hitting_times.size());
  std::size_t unhit = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::isfinite(hitting_times[i]) ? std::log(hitting_times[i]) / L : std::numeric_limits<double>::infinity();
    if (!std::isfinite(hitting_times[i])) ++unhit;
  }
  std::vector<double> s_abs;
  for (double s : s_offsets) s_abs.push_back(opts.d1 + s);
  auto c = detail::tail_rate(x, s_abs, opts.d1, r, RateKind::EmpiricalHitting, "empirical_rate_hitting");
  const double log_scan = std::log(static_cast<double>(opts.scan_len)) / L;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (s_offsets[i] >= 0.0) {
      c.flagged[i] = unhit > 0 && static_cast<double>(unhit) > kRightCensorFlag * static_cast<double>(c.tail_count[i]);
    } else {
      c.flagged[i] = c.s[i] > log_scan && unhit > 0;
    }
  }
  return c;
}

inline RateCurve empirical_rate_hitting(const SystemSpec& spec, double r, std::span<const double> s_offsets,
                                        std::size_t n_pairs, const HittingRateOptions& opts) {
  const auto H = pair_hitting_times(spec, r, n_pairs, opts);
  return empirical_rate_hitting(H, r, s_offsets, opts);
}

/// Columns: s,value,kind,r_level,censored,n_samples
inline void write_rate_csv_header(std::ostream& out) { out << "s,value,kind,r_level,censored,n_samples\n"; }

inline void write_rate_csv_rows(std::ostream& out, const RateCurve& c) {
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << io::fmt(c.s[i]) << ',' << io::fmt(c.values[i]) << ',' << to_string(c.kind) << ','
        << (c.r_level ? io::fmt(*c.r_level) : std::string()) << ',' << (c.censored[i] ? 1 : 0) << ','
        << c.n_samples[i] << '\n';
  }
}

inline void write_rate_csv(std::ostream& out, std::span<const RateCurve> curves) {
  write_rate_csv_header(out);
  for (const auto& c : curves) write_rate_csv_rows(out, c);
}

}  // namespace gdim
