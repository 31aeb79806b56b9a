#pragma once

// Extreme-value estimators built on phi = -log distance: exceedance tails of
// q-fold products, peaks-over-threshold local dimensions, finite-resolution
// spectra from local dimensions, block maxima and the GEV fit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"
#include "gdim/io.hpp"
#include "gdim/parallel.hpp"
#include "gdim/rng.hpp"
#include "gdim/scaling.hpp"

namespace gdim {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// -log d(x, z); +inf when the points coincide.
inline double phi(Metric metric, std::span<const double> z, std::span<const double> x) {
  const double d = distance(metric, z, x);
  return d > 0.0 ? -std::log(d) : kInf;
}

/// -log max_{i >= 2} d(x_1, x_i) for q = points.size() >= 2.
inline double phi_product(Metric metric, std::span<const std::span<const double>> points) {
  if (points.size() < 2) throw ArgumentError("phi_product: needs q >= 2 points");
  double dmax = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) dmax = std::max(dmax, distance(metric, points[0], points[i]));
  return dmax > 0.0 ? -std::log(dmax) : kInf;
}

namespace detail {
inline double phi_product_raw(Metric metric, const double* const* x, std::size_t q, std::size_t dim) {
  double dmax = 0.0;
  for (std::size_t i = 1; i < q; ++i) dmax = std::max(dmax, distance_sq_unchecked(metric, x[0], x[i], dim));
  return dmax > 0.0 ? -0.5 * std::log(dmax) : kInf;
}
}  // namespace detail

/// Empirical p-quantile with linear interpolation between order statistics
/// (h = (n - 1) p). Non-finite values must be removed by the caller.
inline double empirical_quantile(std::vector<double> data, double p) {
  if (data.empty()) throw InsufficientData("empirical_quantile: empty sample", 0, 1);
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("empirical_quantile: p must lie in [0, 1]");
  const double h = static_cast<double>(data.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  std::nth_element(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(lo), data.end());
  const double a = data[lo];
  if (lo + 1 >= data.size()) return a;
  const double b = *std::min_element(data.begin() + static_cast<std::ptrdiff_t>(lo) + 1, data.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

/// Values of a series strictly above a threshold, with their time indices.
struct ExceedanceRecord {
  double threshold = 0.0;
  std::vector<double> values;
  std::vector<std::size_t> indices;
  std::size_t series_len = 0;
  std::optional<double> quantile;
  std::size_t n_infinite = 0;  // +inf sentinels left out of the series

  std::size_t count() const noexcept { return values.size(); }
};

inline ExceedanceRecord exceedances(std::span<const double> series, double u) {
  ExceedanceRecord rec;
  rec.threshold = u;
  rec.series_len = series.size();
  for (std::size_t j = 0; j < series.size(); ++j) {
    const double v = series[j];
    if (std::isinf(v) && v > 0.0) {
      ++rec.n_infinite;
      continue;
    }
    if (v > u) {
      rec.values.push_back(v);
      rec.indices.push_back(j);
    }
  }
  return rec;
}

/// Exceedances over the empirical p-quantile of the finite values.
inline ExceedanceRecord exceedances_over_quantile(std::span<const double> series, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("exceedances_over_quantile: p must lie in (0, 1)");
  std::vector<double> finite;
  finite.reserve(series.size());
  for (double v : series)
    if (std::isfinite(v)) finite.push_back(v);
  ExceedanceRecord rec = exceedances(series, empirical_quantile(std::move(finite), p));
  rec.quantile = p;
  return rec;
}

// ---------------------------------------------------------------------------
// Exceedance tails of q-fold products

/// Sampled complementary distribution F(u) = P(phi_product > u).
struct TailCurve {
  std::size_t q = 2;
  std::vector<double> u;
  std::vector<std::uint64_t> counts;
  std::vector<double> fbar;
  std::vector<bool> flagged;  // empty tail at this u
  std::uint64_t n = 0;        // finite samples
  std::uint64_t n_infinite = 0;
};

namespace detail {

inline void check_u_grid(std::span<const double> u) {
  if (u.empty()) throw ArgumentError("exceedance_tail: empty u grid");
  for (std::size_t k = 0; k + 1 < u.size(); ++k)
    if (!(u[k] < u[k + 1])) throw ArgumentError("exceedance_tail: u grid must be strictly increasing");
}

// hist[k] counts values in (u[k-1], u[k]]; hist[u.size()] those above u.back().
inline void bin_value(std::span<const double> u, double v, std::vector<std::uint64_t>& hist) {
  const auto k = static_cast<std::size_t>(std::lower_bound(u.begin(), u.end(), v) - u.begin());
  ++hist[k];
}

inline TailCurve finish_tail(std::size_t q, std::span<const double> u, const std::vector<std::uint64_t>& hist,
                             std::uint64_t n, std::uint64_t n_inf) {
  TailCurve t;
  t.q = q;
  t.u.assign(u.begin(), u.end());
  t.counts.assign(u.size(), 0);
  t.fbar.assign(u.size(), 0.0);
  t.flagged.assign(u.size(), false);
  t.n = n;
  t.n_infinite = n_inf;
  std::uint64_t above = hist[u.size()];
  for (std::size_t k = u.size(); k-- > 0;) {
    t.counts[k] = above;
    t.fbar[k] = n > 0 ? static_cast<double>(above) / static_cast<double>(n) : 0.0;
    t.flagged[k] = above == 0;
    above += hist[k];
  }
  return t;
}

}  // namespace detail

/// F(u) from q stored trajectories of equal length, aligned by time index.
inline TailCurve exceedance_tail(std::span<const Trajectory> systems, std::span<const double> u_grid) {
  const std::size_t q = systems.size();
  if (q < 2) throw ArgumentError("exceedance_tail: needs q >= 2 trajectories");
  detail::check_u_grid(u_grid);
  const std::size_t len = systems[0].size(), dim = systems[0].dim();
  const Metric metric = systems[0].metric();
  for (const auto& s : systems)
    if (s.size() != len || s.dim() != dim || s.metric() != metric)
      throw ArgumentError("exceedance_tail: trajectories differ in length, dimension or metric");
  std::vector<std::uint64_t> hist(u_grid.size() + 1, 0);
  std::uint64_t n = 0, n_inf = 0;
  std::vector<const double*> x(q);
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t i = 0; i < q; ++i) x[i] = systems[i].raw(j);
    const double v = detail::phi_product_raw(metric, x.data(), q, dim);
    if (std::isinf(v)) {
      ++n_inf;
      continue;
    }
    ++n;
    detail::bin_value(u_grid, v, hist);
  }
  return detail::finish_tail(q, u_grid, hist, n, n_inf);
}

/// Streaming variant: `replicas` independent products of q orbits, each run
/// for `len` steps, pooled into one curve. Replica b, component i uses
/// Orbit(spec, derive_seed(seed, b), burn_in, i).
inline TailCurve exceedance_tail(const SystemSpec& spec, std::size_t q, std::size_t len, std::size_t replicas,
                                 std::span<const double> u_grid, std::uint64_t seed,
                                 std::size_t burn_in = kDefaultBurnIn, unsigned threads = 0) {
  if (q < 2) throw ArgumentError("exceedance_tail: needs q >= 2");
  if (len == 0 || replicas == 0) throw ArgumentError("exceedance_tail: len and replicas must be >= 1");
  detail::check_u_grid(u_grid);
  const std::size_t nb = u_grid.size() + 1;
  std::vector<std::uint64_t> hist(replicas * nb, 0), n(replicas, 0), n_inf(replicas, 0);
  parallel_for(replicas, threads, [&](std::size_t b) {
    std::vector<Orbit> orbits;
    orbits.reserve(q);
    for (std::size_t i = 0; i < q; ++i) orbits.emplace_back(spec, derive_seed(seed, b), burn_in, i);
    std::vector<const double*> x(q);
    std::vector<std::uint64_t> h(nb, 0);
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t i = 0; i < q; ++i) x[i] = orbits[i].state();
      const double v = detail::phi_product_raw(spec.metric, x.data(), q, spec.dim());
      if (std::isinf(v))
        ++n_inf[b];
      else {
        ++n[b];
        detail::bin_value(u_grid, v, h);
      }
      for (auto& o : orbits) o.advance();
    }
    std::copy(h.begin(), h.end(), hist.begin() + static_cast<std::ptrdiff_t>(b * nb));
  });
  std::vector<std::uint64_t> total(nb, 0);
  for (std::size_t b = 0; b < replicas; ++b)
    for (std::size_t k = 0; k < nb; ++k) total[k] += hist[b * nb + k];
  return detail::finish_tail(q, u_grid, total, std::accumulate(n.begin(), n.end(), std::uint64_t{0}),
                             std::accumulate(n_inf.begin(), n_inf.end(), std::uint64_t{0}));
}

/// Inclusive window on u for tail fits; unset bounds are open.
struct URange {
  std::optional<double> u_lo;
  std::optional<double> u_hi;
  bool contains(double u) const { return (!u_lo || u >= *u_lo - 1e-12) && (!u_hi || u <= *u_hi + 1e-12); }
};

/// tau(q) = -slope of log F(u) against u, using grid points in range that
/// hold at least min_count exceedances.
inline TauFit tau_from_tail(const TailCurve& tail, const URange& range = {}, std::uint64_t min_count = 1) {
  std::vector<double> x, y;
  for (std::size_t k = 0; k < tail.u.size(); ++k) {
    if (!range.contains(tail.u[k]) || tail.counts[k] < std::max<std::uint64_t>(min_count, 1)) continue;
    x.push_back(tail.u[k]);
    y.push_back(std::log(tail.fbar[k]));
  }
  if (x.size() < 3) throw FitError("tau_from_tail: fewer than 3 usable u values");
  const LinearFit f = linear_fit(x, y);
  // r_lo / r_hi carry the radii e^{-u} spanned by the fit.
  return {-f.slope, f.slope_stderr, std::exp(-x.back()), std::exp(-x.front()), f.n};
}

/// u_k = u_lo + k (u_hi - u_lo) / (count - 1).
inline std::vector<double> linear_u_grid(double u_lo, double u_hi, std::size_t count) {
  if (!(u_hi > u_lo) || count < 2) throw ArgumentError("linear_u_grid: need u_hi > u_lo and count >= 2");
  std::vector<double> u(count);
  for (std::size_t k = 0; k < count; ++k)
    u[k] = u_lo + (u_hi - u_lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  return u;
}

// ---------------------------------------------------------------------------
// Peaks over threshold

struct LocalDimension {
  double d1r = 0.0;
  double r_cut = 0.0;
  std::size_t n_exceedances = 0;
  std::size_t n_infinite = 0;
};

inline constexpr std::size_t kMinExceedances = 50;

/// Inverse of the mean excess over the record's threshold.
inline double pot_dimension(const ExceedanceRecord& rec) {
  if (rec.count() == 0) throw InsufficientData("pot_dimension: no exceedances", 0, 1);
  double excess = 0.0;
  for (double v : rec.values) excess += v - rec.threshold;
  excess /= static_cast<double>(rec.count());
  if (!(excess > 0.0)) throw FitError("pot_dimension: zero mean excess");
  return 1.0 / excess;
}

/// Inverse mean excess of phi_z above its p-quantile u_cut; r_cut = e^{-u_cut}.
inline LocalDimension local_dimension_pot(const Trajectory& traj, std::span<const double> z, double p,
                                          std::size_t min_exceedances = kMinExceedances) {
  if (z.size() != traj.dim()) throw ArgumentError("local_dimension_pot: dimension mismatch");
  std::vector<double> series(traj.size());
  for (std::size_t j = 0; j < traj.size(); ++j) {
    const double d = detail::distance_unchecked(traj.metric(), traj.raw(j), z.data(), traj.dim());
    series[j] = d > 0.0 ? -std::log(d) : kInf;
  }
  const ExceedanceRecord rec = exceedances_over_quantile(series, p);
  if (rec.count() < min_exceedances)
    throw InsufficientData("local_dimension_pot: exceedances above the quantile", rec.count(), min_exceedances);
  return {pot_dimension(rec), std::exp(-rec.threshold), rec.count(), rec.n_infinite};
}

/// Local dimensions at a set of centers; centers whose estimate fails are
/// skipped and counted.
struct LocalDimSample {
  std::size_t dim = 0;
  std::vector<double> centers;  // row-major
  std::vector<double> d1r;
  std::vector<double> r_cut;
  std::vector<std::size_t> n_exceedances;
  double p = 0.0;
  std::size_t skipped = 0;

  std::size_t size() const noexcept { return d1r.size(); }
  std::span<const double> center(std::size_t i) const { return {centers.data() + i * dim, dim}; }
};

inline LocalDimSample local_dimensions(const Trajectory& traj, const Trajectory& centers, double p,
                                       std::size_t min_exceedances = kMinExceedances, unsigned threads = 0) {
  if (centers.dim() != traj.dim()) throw ArgumentError("local_dimensions: dimension mismatch");
  std::vector<std::optional<LocalDimension>> out(centers.size());
  parallel_for(centers.size(), threads, [&](std::size_t i) {
    try {
      out[i] = local_dimension_pot(traj, centers.state(i), p, min_exceedances);
    } catch (const InsufficientData&) {
    } catch (const FitError&) {
    }
  });
  LocalDimSample s;
  s.dim = traj.dim();
  s.p = p;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out[i]) {
      ++s.skipped;
      continue;
    }
    const auto c = centers.state(i);
    s.centers.insert(s.centers.end(), c.begin(), c.end());
    s.d1r.push_back(out[i]->d1r);
    s.r_cut.push_back(out[i]->r_cut);
    s.n_exceedances.push_back(out[i]->n_exceedances);
  }
  return s;
}

struct LocalDimSpectrumPoint {
  double dq = 0.0;
  double r_eff = 0.0;
};

/// Finite-resolution D_q from local dimensions: with the shared radius r_eff
/// (mean of r_cut), G = mean_j r_eff^{(q-1) d_j} and D_q = log G / ((q-1) log r_eff).
/// q = 1 returns the mean local dimension.
inline LocalDimSpectrumPoint dq_from_local_dims(std::span<const double> d1r, std::span<const double> r_cut, double q) {
  if (d1r.empty() || d1r.size() != r_cut.size())
    throw InsufficientData("dq_from_local_dims: empty or mismatched sample", d1r.size(), 1);
  const double n = static_cast<double>(d1r.size());
  double r_eff = 0.0;
  for (double r : r_cut) r_eff += r;
  r_eff /= n;
  if (q == 1.0) return {std::accumulate(d1r.begin(), d1r.end(), 0.0) / n, r_eff};
  const double lr = std::log(r_eff);
  if (!(lr < 0.0)) throw DomainError("dq_from_local_dims: r_eff must lie in (0, 1)");
  // log-sum-exp keeps large |q| finite.
  double m = -kInf;
  for (double d : d1r) m = std::max(m, (q - 1.0) * d * lr);
  double s = 0.0;
  for (double d : d1r) s += std::exp((q - 1.0) * d * lr - m);
  const double log_g = m + std::log(s / n);
  return {log_g / ((q - 1.0) * lr), r_eff};
}

inline LocalDimSpectrumPoint dq_from_local_dims(const LocalDimSample& s, double q) {
  return dq_from_local_dims(s.d1r, s.r_cut, q);
}

/// CSV columns: z0..z{d-1}, d1r, r_cut, n_exceedances.
inline void write_local_dims_csv(std::ostream& out, const LocalDimSample& s) {
  for (std::size_t c = 0; c < s.dim; ++c) out << 'z' << c << ',';
  out << "d1r,r_cut,n_exceedances\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (double v : s.center(i)) out << io::fmt(v) << ',';
    out << io::fmt(s.d1r[i]) << ',' << io::fmt(s.r_cut[i]) << ',' << s.n_exceedances[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Block maxima

inline constexpr std::size_t kMinBlocks = 10;

/// Maxima over consecutive non-overlapping blocks of length n; a trailing
/// partial block is dropped, as are +inf sentinels.
inline std::vector<double> block_maxima(std::span<const double> series, std::size_t n) {
  if (n == 0) throw ArgumentError("block_maxima: block length must be >= 1");
  if (series.size() < 2 * n) throw InsufficientData("block_maxima: series length", series.size(), 2 * n);
  const std::size_t blocks = series.size() / n;
  if (blocks < kMinBlocks) throw InsufficientData("block_maxima: blocks", blocks, kMinBlocks);
  std::vector<double> out(blocks, -kInf);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t j = b * n; j < (b + 1) * n; ++j)
      if (!std::isinf(series[j]) || series[j] < 0.0) out[b] = std::max(out[b], series[j]);
  return out;
}

/// Block maxima of phi_product over q streamed orbits: n_blocks blocks of
/// length n. Component i uses Orbit(spec, seed, burn_in, i).
inline std::vector<double> product_block_maxima(const SystemSpec& spec, std::size_t q, std::size_t n,
                                                std::size_t n_blocks, std::uint64_t seed,
                                                std::size_t burn_in = kDefaultBurnIn) {
  if (q < 2) throw ArgumentError("product_block_maxima: needs q >= 2");
  if (n == 0) throw ArgumentError("product_block_maxima: block length must be >= 1");
  if (n_blocks < kMinBlocks) throw InsufficientData("product_block_maxima: blocks", n_blocks, kMinBlocks);
  std::vector<Orbit> orbits;
  orbits.reserve(q);
  for (std::size_t i = 0; i < q; ++i) orbits.emplace_back(spec, seed, burn_in, i);
  std::vector<const double*> x(q);
  std::vector<double> out(n_blocks, -kInf);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    double m = -kInf;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < q; ++i) x[i] = orbits[i].state();
      const double v = detail::phi_product_raw(spec.metric, x.data(), q, spec.dim());
      if (!std::isinf(v)) m = std::max(m, v);
      for (auto& o : orbits) o.advance();
    }
    out[b] = m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// GEV maximum likelihood

struct GevParams {
  double mu = 0.0;
  double sigma = 1.0;
  double xi = 0.0;
};

struct GevFitResult {
  double mu = 0.0;
  double sigma = 1.0;
  double xi = 0.0;
  double loglik = 0.0;
  std::size_t n_blocks = 0;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  bool at_bound = false;  // |xi| pinned at the constraint

  GevParams params() const { return {mu, sigma, xi}; }
};

inline constexpr double kGevXiBound = 0.5;

namespace detail {

// t = log(1 + xi z) / xi and dt/dxi, with the series near xi = 0.
inline void gev_t(double xi, double z, double& t, double& dt_dxi) {
  if (std::abs(xi) < 1e-6) {
    t = z - xi * z * z / 2.0 + xi * xi * z * z * z / 3.0;
    dt_dxi = -z * z / 2.0 + 2.0 * xi * z * z * z / 3.0;
    return;
  }
  const double w = 1.0 + xi * z;
  t = std::log1p(xi * z) / xi;
  dt_dxi = (z / w - t) / xi;
}

}  // namespace detail

/// GEV log-likelihood; -inf outside the support or for sigma <= 0.
inline double gev_loglik(const GevParams& p, std::span<const double> x) {
  if (!(p.sigma > 0.0)) return -kInf;
  double ll = -static_cast<double>(x.size()) * std::log(p.sigma);
  for (double v : x) {
    const double z = (v - p.mu) / p.sigma;
    if (!(1.0 + p.xi * z > 0.0)) return -kInf;
    double t, dt;
    detail::gev_t(p.xi, z, t, dt);
    ll -= (1.0 + p.xi) * t + std::exp(-t);
  }
  return ll;
}

/// Analytic gradient (d/dmu, d/dsigma, d/dxi) of gev_loglik.
inline std::array<double, 3> gev_gradient(const GevParams& p, std::span<const double> x) {
  std::array<double, 3> g{0.0, 0.0, 0.0};
  for (double v : x) {
    const double z = (v - p.mu) / p.sigma;
    const double w = 1.0 + p.xi * z;
    double t, dt;
    detail::gev_t(p.xi, z, t, dt);
    const double e = std::exp(-t);
    const double dl_dz = (e - 1.0 - p.xi) / w;
    g[0] -= dl_dz / p.sigma;
    g[1] -= 1.0 / p.sigma + dl_dz * z / p.sigma;
    g[2] += -t + (e - 1.0 - p.xi) * dt;
  }
  return g;
}

/// Maximum likelihood GEV fit with |xi| <= 0.5. Starts from the moment
/// estimates (Gumbel) and runs a damped Newton iteration on the analytic
/// gradient, with the Hessian from central differences of that gradient.
inline GevFitResult fit_gev(std::span<const double> maxima, int max_iter = 200, double grad_tol = 1e-6) {
  const std::size_t n = maxima.size();
  if (n < kMinBlocks) throw InsufficientData("fit_gev: maxima", n, kMinBlocks);
  for (double v : maxima)
    if (!std::isfinite(v)) throw DomainError("fit_gev: non-finite maximum");
  double mean = 0.0;
  for (double v : maxima) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : maxima) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  if (!(var > 1e-24 * std::max(1.0, mean * mean))) throw FitError("fit_gev: maxima have zero spread");

  constexpr double kEulerGamma = 0.5772156649015329;
  const double sd = std::sqrt(var);
  GevParams p{0.0, std::sqrt(6.0) * sd / std::numbers::pi, 0.0};
  p.mu = mean - kEulerGamma * p.sigma;
  double ll = gev_loglik(p, maxima);

  auto clamp_xi = [](double xi) { return std::clamp(xi, -kGevXiBound, kGevXiBound); };
  auto as_array = [](const GevParams& q) { return std::array<double, 3>{q.mu, q.sigma, q.xi}; };
  auto from_array = [](const std::array<double, 3>& a) { return GevParams{a[0], a[1], a[2]}; };

  GevFitResult res;
  res.n_blocks = n;
  double lambda = 1e-3;
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    auto g = gev_gradient(p, maxima);
    const bool pinned = std::abs(p.xi) >= kGevXiBound && g[2] * p.xi > 0.0;
    if (pinned) g[2] = 0.0;
    const double gn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (gn < grad_tol) {
      res.converged = true;
      res.at_bound = pinned;
      break;
    }
    // Hessian by central differences of the gradient, with steps scaled to sigma.
    std::array<std::array<double, 3>, 3> h{};
    const auto base = as_array(p);
    for (int j = 0; j < 3; ++j) {
      const double step = (j == 2 ? 1e-5 : 1e-5 * p.sigma);
      auto a = base, b = base;
      a[j] += step;
      b[j] -= step;
      const auto ga = gev_gradient(from_array(a), maxima), gb = gev_gradient(from_array(b), maxima);
      for (int i = 0; i < 3; ++i) h[i][j] = (ga[i] - gb[i]) / (2.0 * step);
    }
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) h[i][j] = h[j][i] = 0.5 * (h[i][j] + h[j][i]);

    bool accepted = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries) {
      // Solve (-H + lambda diag(|H|)) d = g.
      std::array<std::array<double, 4>, 3> m{};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m[i][j] = -h[i][j];
        m[i][i] += lambda * std::max(std::abs(h[i][i]), 1e-12);
        m[i][3] = g[i];
      }
      if (pinned) {
        m[2] = {0.0, 0.0, 1.0, 0.0};
        m[0][2] = m[1][2] = 0.0;
      }
      bool singular = false;
      for (int c = 0; c < 3; ++c) {
        int piv = c;
        for (int r = c + 1; r < 3; ++r)
          if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
        if (std::abs(m[piv][c]) < 1e-300) {
          singular = true;
          break;
        }
        std::swap(m[c], m[piv]);
        for (int r = 0; r < 3; ++r) {
          if (r == c) continue;
          const double f = m[r][c] / m[c][c];
          for (int k = c; k < 4; ++k) m[r][k] -= f * m[c][k];
        }
      }
      if (singular) {
        lambda *= 10.0;
        continue;
      }
      GevParams trial{p.mu + m[0][3] / m[0][0], p.sigma + m[1][3] / m[1][1], clamp_xi(p.xi + m[2][3] / m[2][2])};
      const double lt = gev_loglik(trial, maxima);
      if (std::isfinite(lt) && lt >= ll - 1e-12 * std::abs(ll)) {
        p = trial;
        ll = lt;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  const auto g = gev_gradient(p, maxima);
  res.mu = p.mu;
  res.sigma = p.sigma;
  res.xi = p.xi;
  res.loglik = ll;
  res.grad_norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + (res.at_bound ? 0.0 : g[2] * g[2]));
  if (!res.converged)
    throw FitError("fit_gev: no convergence after " + std::to_string(res.iterations) +
                   " iterations (|grad| = " + io::fmt(res.grad_norm) + ", mu = " + io::fmt(p.mu) +
                   ", sigma = " + io::fmt(p.sigma) + ", xi = " + io::fmt(p.xi) + ")");
  return res;
}

/// Standard errors of (mu, sigma, xi) from the inverse observed information.
inline std::array<double, 3> gev_stderr(const GevParams& p, std::span<const double> x) {
  const std::array<double, 3> base{p.mu, p.sigma, p.xi};
  double h[3][3];
  for (int j = 0; j < 3; ++j) {
    const double step = (j == 2 ? 1e-5 : 1e-5 * p.sigma);
    auto a = base, b = base;
    a[j] += step;
    b[j] -= step;
    const auto ga = gev_gradient({a[0], a[1], a[2]}, x), gb = gev_gradient({b[0], b[1], b[2]}, x);
    for (int i = 0; i < 3; ++i) h[i][j] = -(ga[i] - gb[i]) / (2.0 * step);
  }
  // Inverse by cofactors of the symmetrised information matrix.
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) h[i][j] = h[j][i] = 0.5 * (h[i][j] + h[j][i]);
  const double c00 = h[1][1] * h[2][2] - h[1][2] * h[2][1];
  const double c11 = h[0][0] * h[2][2] - h[0][2] * h[2][0];
  const double c22 = h[0][0] * h[1][1] - h[0][1] * h[1][0];
  const double det = h[0][0] * c00 - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0]) +
                     h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
  if (!(det > 0.0)) throw FitError("gev_stderr: information matrix is not positive definite");
  return {std::sqrt(c00 / det), std::sqrt(c11 / det), std::sqrt(c22 / det)};
}

struct GevDimension {
  double dq = 0.0;        // from the scale: 1 / (sigma (q - 1))
  double dq_cross = 0.0;  // from the location: log n / (mu (q - 1))
};

inline GevDimension dq_from_gev(const GevFitResult& fit, double q, std::size_t n) {
  if (q == 1.0) throw ArgumentError("dq_from_gev: q = 1 is not defined");
  if (!(fit.sigma > 0.0)) throw DomainError("dq_from_gev: sigma must be > 0");
  return {1.0 / (fit.sigma * (q - 1.0)), std::log(static_cast<double>(n)) / (fit.mu * (q - 1.0))};
}

struct GevRow {
  double q = 2.0;
  std::size_t n = 0;
  GevFitResult fit;
  GevDimension dim;
};

/// CSV columns: q, n, mu, sigma, xi, dq, dq_cross, loglik.
inline void write_gev_csv(std::ostream& out, std::span<const GevRow> rows) {
  out << "q,n,mu,sigma,xi,dq,dq_cross,loglik\n";
  for (const auto& r : rows)
    out << io::fmt(r.q) << ',' << r.n << ',' << io::fmt(r.fit.mu) << ',' << io::fmt(r.fit.sigma) << ','
        << io::fmt(r.fit.xi) << ',' << io::fmt(r.dim.dq) << ',' << io::fmt(r.dim.dq_cross) << ','
        << io::fmt(r.fit.loglik) << '\n';
}

/// CSV columns: u, count, fbar, flagged (after a "# q,n,n_infinite" comment).
inline void write_tail_csv(std::ostream& out, const TailCurve& t) {
  out << "# q=" << t.q << ",n=" << t.n << ",n_infinite=" << t.n_infinite << '\n';
  out << "u,count,fbar,flagged\n";
  for (std::size_t k = 0; k < t.u.size(); ++k)
    out << io::fmt(t.u[k]) << ',' << t.counts[k] << ',' << io::fmt(t.fbar[k]) << ',' << (t.flagged[k] ? 1 : 0)
        << '\n';
}

}  // namespace gdim
