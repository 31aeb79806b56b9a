#pragma once

// Dynamical extremal index theta_q of q-fold product systems: the Suveges
// estimator on exceedances of phi_product, closed forms for the maps with a
// known invariant density, and the indicator H_q = log(1 - theta_q) / (q - 1).

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"
#include "gdim/evt.hpp"
#include "gdim/io.hpp"
#include "gdim/parallel.hpp"
#include "gdim/rng.hpp"

namespace gdim {

enum class DeiMethod { Suveges, AnalyticClosedForm, AnalyticQuadrature, EntropyScaling };

inline std::string_view to_string(DeiMethod m) {
  switch (m) {
    case DeiMethod::Suveges: return "suveges";
    case DeiMethod::AnalyticClosedForm: return "closed-form";
    case DeiMethod::AnalyticQuadrature: return "quadrature";
    case DeiMethod::EntropyScaling: return "entropy-scaling";
  }
  return "?";
}

/// log(1 - theta) / (q - 1). theta = 1 has no finite value.
inline double h_q(double theta, double q) {
  if (!(q > 1.0)) throw ArgumentError("h_q: q must be > 1");
  if (!(theta >= 0.0 && theta <= 1.0)) throw DomainError("h_q: theta must lie in [0, 1]");
  if (theta == 1.0) throw DomainError("h_q: undefined at theta = 1");
  return std::log1p(-theta) / (q - 1.0);
}

/// 1 - exp(-(q - 1) h_m), the extremal index expected for a constant
/// density and derivative with entropy h_m.
inline double entropy_scaling_theta(double q, double h_m) {
  if (!(h_m >= 0.0)) throw DomainError("entropy_scaling_theta: h_m must be >= 0");
  return -std::expm1(-(q - 1.0) * h_m);
}

struct DeiEstimate {
  int q = 2;
  double theta = 0.0;
  DeiMethod method = DeiMethod::AnalyticClosedForm;
  std::optional<double> h_q;  // absent when theta = 1
  std::optional<double> stderr;
  std::optional<double> quantile;
  std::size_t len = 0;
  std::size_t replicas = 0;
};

namespace detail {
inline DeiEstimate make_estimate(int q, double theta, DeiMethod m) {
  DeiEstimate e;
  e.q = q;
  e.theta = theta;
  e.method = m;
  if (theta < 1.0) e.h_q = h_q(theta, q);
  return e;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Suveges estimator

struct SuvegesDiagnostics {
  std::size_t n_exceedances = 0;
  std::size_t n_clusters = 0;  // gaps with S_i > 0
  double weighted_gaps = 0.0;  // sum p_exc * S_i
  bool small_denominator = false;
};

struct SuvegesResult {
  double theta = 0.0;
  SuvegesDiagnostics diag;
};

/// Maximum-likelihood extremal index from the gaps between consecutive
/// exceedances. With N exceedances, p_exc = N / series_len, S_i = T_i - 1,
/// N_c = #{S_i > 0}, A = sum p_exc S_i and B = (N - 1) + N_c:
///   theta = (A + B - sqrt((A + B)^2 - 8 N_c A)) / (2 A),
/// with the A -> 0 limit 2 N_c / B. Clamped to [0, 1].
inline SuvegesResult suveges_theta(const ExceedanceRecord& rec) {
  const std::size_t n = rec.indices.size();
  if (n < 2) throw InsufficientData("suveges_theta: exceedances", n, 2);
  if (rec.series_len == 0) throw ArgumentError("suveges_theta: series_len must be > 0");
  const double p = static_cast<double>(n) / static_cast<double>(rec.series_len);
  SuvegesDiagnostics d;
  d.n_exceedances = n;
  for (std::size_t i = 1; i < n; ++i) {
    if (rec.indices[i] <= rec.indices[i - 1]) throw ArgumentError("suveges_theta: indices must increase");
    const auto s = static_cast<double>(rec.indices[i] - rec.indices[i - 1] - 1);
    if (s > 0.0) ++d.n_clusters;
    d.weighted_gaps += p * s;
  }
  const double a = d.weighted_gaps;
  const double nc = static_cast<double>(d.n_clusters);
  const double b = static_cast<double>(n - 1) + nc;
  double theta;
  if (a < 1e-12) {
    d.small_denominator = true;
    theta = 2.0 * nc / b;
  } else {
    const double disc = std::max(0.0, (a + b) * (a + b) - 8.0 * nc * a);
    theta = (a + b - std::sqrt(disc)) / (2.0 * a);
  }
  return {std::clamp(theta, 0.0, 1.0), d};
}

// ---------------------------------------------------------------------------
// Empirical theta_q on product systems

inline constexpr std::size_t kDeiPreRun = 1000000;

struct DeiOptions {
  double quantile = 0.997;
  std::size_t replicas = 20;
  std::size_t pre_run = kDeiPreRun;
  std::size_t burn_in = kDefaultBurnIn;
  unsigned threads = 0;
};

namespace detail {

// Streams the product observable of q orbits for len steps and hands each
// value to fn(j, v).
template <typename Fn>
void stream_product(const SystemSpec& spec, std::size_t q, std::size_t len, std::uint64_t seed, std::size_t burn_in,
                    Fn&& fn) {
  std::vector<Orbit> orbits;
  orbits.reserve(q);
  for (std::size_t i = 0; i < q; ++i) orbits.emplace_back(spec, seed, burn_in, i);
  std::vector<const double*> x(q);
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t i = 0; i < q; ++i) x[i] = orbits[i].state();
    fn(j, phi_product_raw(spec.metric, x.data(), q, spec.dim()));
    for (auto& o : orbits) o.advance();
  }
}

}  // namespace detail

/// Threshold: the configured quantile of a pre-run of the product
/// observable (seed derive_seed(seed, 0)). Replica b then runs with seed
/// derive_seed(seed, b + 1); its exceedances feed suveges_theta. Reports
/// the mean over replicas and their standard deviation.
inline DeiEstimate theta_q_empirical(const SystemSpec& spec, int q, std::size_t len, std::uint64_t seed,
                                     const DeiOptions& opts = {}) {
  if (q < 2) throw ArgumentError("theta_q_empirical: q must be an integer >= 2");
  if (len < 100000) throw InsufficientData("theta_q_empirical: series length", len, 100000);
  if (opts.replicas == 0) throw ArgumentError("theta_q_empirical: replicas must be >= 1");
  if (!(opts.quantile > 0.0 && opts.quantile < 1.0)) throw ArgumentError("theta_q_empirical: quantile in (0, 1)");
  const auto qq = static_cast<std::size_t>(q);

  std::vector<double> pre;
  pre.reserve(opts.pre_run);
  detail::stream_product(spec, qq, opts.pre_run, derive_seed(seed, 0), opts.burn_in, [&](std::size_t, double v) {
    if (std::isfinite(v)) pre.push_back(v);
  });
  const double u = empirical_quantile(std::move(pre), opts.quantile);

  std::vector<double> thetas(opts.replicas);
  parallel_for(opts.replicas, opts.threads, [&](std::size_t b) {
    ExceedanceRecord rec;
    rec.threshold = u;
    rec.series_len = len;
    rec.quantile = opts.quantile;
    detail::stream_product(spec, qq, len, derive_seed(seed, b + 1), opts.burn_in, [&](std::size_t j, double v) {
      if (std::isinf(v)) {
        ++rec.n_infinite;
        return;
      }
      if (v > u) {
        rec.values.push_back(v);
        rec.indices.push_back(j);
      }
    });
    thetas[b] = suveges_theta(rec).theta;
  });

  double mean = 0.0;
  for (double t : thetas) mean += t;
  mean /= static_cast<double>(thetas.size());
  double var = 0.0;
  for (double t : thetas) var += (t - mean) * (t - mean);
  DeiEstimate e = detail::make_estimate(q, mean, DeiMethod::Suveges);
  e.stderr = thetas.size() > 1 ? std::sqrt(var / static_cast<double>(thetas.size() - 1)) : 0.0;
  e.quantile = opts.quantile;
  e.len = len;
  e.replicas = opts.replicas;
  return e;
}

// ---------------------------------------------------------------------------
// Closed forms

namespace detail {

inline double binomial(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

inline double theta_markov_pl(int q) {
  const double h[3] = {0.6, 1.2, 1.2}, d[3] = {3.0, 2.0, 3.0};
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 3; ++i) {
    num += std::pow(h[i], q) / std::pow(d[i], q - 1);
    den += std::pow(h[i], q);
  }
  return 1.0 - num / den;
}

// Integral of x^{2(q-1)} (1+x)^{-q} over [0, 1] by expanding x = (1+x) - 1,
// divided by the integral of (1+x)^{-q}; the (log 2)^{-q} factors cancel.
inline double theta_gauss(int q) {
  const int m = 2 * (q - 1);
  double num = 0.0;
  for (int k = 0; k <= m; ++k) {
    if (k == q - 1) continue;
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    num += sign * binomial(m, k) * (std::pow(2.0, k - q + 1) - 1.0) / static_cast<double>(k - q + 1);
  }
  num += ((q - 1) % 2 == 0 ? 1.0 : -1.0) * binomial(m, q - 1) * std::numbers::ln2;
  const double den = (std::pow(2.0, 1 - q) - 1.0) / static_cast<double>(1 - q);
  return 1.0 - num / den;
}

// h = (1 - x) / 2 on [-1, 1] and |T'|^{1-q} = |x|^{(q-1)/2}. Expanding
// (1 - x)^q, odd powers of x integrate to zero against |x|^{(q-1)/2}, which
// leaves the bracket 1 + (-1)^k. Printed variants with (-1)^{k+q-1} give
// 2/5 at q = 2 instead of 2/7 and disagree with the quadrature.
inline double theta_hemmer(int q) {
  double s = 0.0;
  for (int k = 0; k <= q; ++k) {
    const double bracket = 1.0 + ((k % 2 == 0) ? 1.0 : -1.0);
    s += binomial(q, k) * bracket / static_cast<double>(2 * k + q + 1);
  }
  return 1.0 - static_cast<double>(q + 1) / std::pow(2.0, q) * s;
}

}  // namespace detail

/// Closed-form theta_q for ThreeXMod1, MarkovPL, Gauss and Hemmer.
inline DeiEstimate theta_q_analytic(SystemKind kind, int q) {
  if (q < 2) throw ArgumentError("theta_q_analytic: q must be an integer >= 2");
  double theta;
  switch (kind) {
    case SystemKind::ThreeXMod1: {
      // (p - 1) / p with p = 3^(q-1) exact: one rounding, so theta_2 is the double nearest 2/3
      const double p = std::pow(3.0, q - 1);
      theta = (p - 1.0) / p;
      break;
    }
    case SystemKind::MarkovPL: theta = detail::theta_markov_pl(q); break;
    case SystemKind::Gauss: theta = detail::theta_gauss(q); break;
    case SystemKind::Hemmer: theta = detail::theta_hemmer(q); break;
    default: throw UnsupportedError("theta_q_analytic: no closed form for " + std::string(to_string(kind)));
  }
  return detail::make_estimate(q, theta, DeiMethod::AnalyticClosedForm);
}

/// theta_q = 1 - int h^q / |T'|^(q-1) / int h^q by adaptive Gauss-Kronrod
/// quadrature on each smooth piece of the density model.
inline DeiEstimate theta_q_quadrature(const DensityModel& model, double q, double tol = 1e-12) {
  if (!(q > 1.0)) throw ArgumentError("theta_q_quadrature: q must be > 1");
  std::vector<double> cuts{model.lo};
  for (double b : model.breakpoints) cuts.push_back(b);
  cuts.push_back(model.hi);
  using boost::math::quadrature::gauss_kronrod;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    // Evaluate on the open piece so one-sided values apply at the cuts.
    const double a = cuts[i], b = cuts[i + 1];
    auto f_num = [&](double x) {
      const double h = model.density(x), d = model.abs_derivative(x);
      if (std::isinf(d)) return 0.0;
      return std::pow(h, q) / std::pow(d, q - 1.0);
    };
    auto f_den = [&](double x) { return std::pow(model.density(x), q); };
    num += gauss_kronrod<double, 61>::integrate(f_num, a, b, 15, tol);
    den += gauss_kronrod<double, 61>::integrate(f_den, a, b, 15, tol);
  }
  const int qi = static_cast<int>(std::lround(q));
  DeiEstimate e = detail::make_estimate(qi, 1.0 - num / den, DeiMethod::AnalyticQuadrature);
  return e;
}

inline DeiEstimate theta_q_quadrature(SystemKind kind, int q) { return theta_q_quadrature(density_model(kind), q); }

/// CSV columns: q, theta, theta_stderr, h_q, method, quantile, len, replicas.
/// Absent values are written as empty fields.
inline void write_dei_csv(std::ostream& out, std::span<const DeiEstimate> rows) {
  out << "q,theta,theta_stderr,h_q,method,quantile,len,replicas\n";
  auto opt = [](const std::optional<double>& v) { return v ? io::fmt(*v) : std::string(); };
  for (const auto& e : rows)
    out << e.q << ',' << io::fmt(e.theta) << ',' << opt(e.stderr) << ',' << opt(e.h_q) << ',' << to_string(e.method)
        << ',' << opt(e.quantile) << ',' << e.len << ',' << e.replicas << '\n';
}

}  // namespace gdim
