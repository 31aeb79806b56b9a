#pragma once

// Generators for the maps and flows studied here, the phase-space metrics,
// and closed-form invariant densities of the one-dimensional maps.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gdim/error.hpp"
#include "gdim/io.hpp"
#include "gdim/rng.hpp"

namespace gdim {

enum class SystemKind { ArnoldCat, Henon, SierpinskiIFS, Lorenz63, ThreeXMod1, Gauss, Hemmer, MarkovPL };

enum class Metric { TorusEuclidean, Euclidean, Interval1D };

inline constexpr std::size_t kDefaultBurnIn = 1000;

inline std::string_view to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::ArnoldCat: return "arnold-cat";
    case SystemKind::Henon: return "henon";
    case SystemKind::SierpinskiIFS: return "sierpinski";
    case SystemKind::Lorenz63: return "lorenz63";
    case SystemKind::ThreeXMod1: return "three-x-mod1";
    case SystemKind::Gauss: return "gauss";
    case SystemKind::Hemmer: return "hemmer";
    case SystemKind::MarkovPL: return "markov-pl";
  }
  return "?";
}

inline std::optional<SystemKind> system_kind_from_string(std::string_view name) {
  for (auto k : {SystemKind::ArnoldCat, SystemKind::Henon, SystemKind::SierpinskiIFS, SystemKind::Lorenz63,
                 SystemKind::ThreeXMod1, SystemKind::Gauss, SystemKind::Hemmer, SystemKind::MarkovPL}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::TorusEuclidean: return "torus";
    case Metric::Euclidean: return "euclidean";
    case Metric::Interval1D: return "interval";
  }
  return "?";
}

inline bool is_interval_map(SystemKind kind) {
  return kind == SystemKind::ThreeXMod1 || kind == SystemKind::Gauss || kind == SystemKind::Hemmer ||
         kind == SystemKind::MarkovPL;
}

/// A system together with its parameters and phase-space metric.
///
/// Parameter layout: Henon {a, b}; SierpinskiIFS {p1, p2, p3};
/// Lorenz63 {sigma, rho, beta, dt}; all other maps take none.
struct SystemSpec {
  SystemKind kind = SystemKind::ArnoldCat;
  std::vector<double> params;
  Metric metric = Metric::TorusEuclidean;

  static SystemSpec arnold_cat() { return {SystemKind::ArnoldCat, {}, Metric::TorusEuclidean}; }
  static SystemSpec henon(double a = 1.4, double b = 0.3) { return {SystemKind::Henon, {a, b}, Metric::Euclidean}; }
  static SystemSpec sierpinski(double p1 = 0.25, double p2 = 0.25, double p3 = 0.5) {
    return {SystemKind::SierpinskiIFS, {p1, p2, p3}, Metric::Euclidean};
  }
  static SystemSpec lorenz63(double dt = 0.013, double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0) {
    return {SystemKind::Lorenz63, {sigma, rho, beta, dt}, Metric::Euclidean};
  }
  static SystemSpec three_x_mod1() { return {SystemKind::ThreeXMod1, {}, Metric::Interval1D}; }
  static SystemSpec gauss() { return {SystemKind::Gauss, {}, Metric::Interval1D}; }
  static SystemSpec hemmer() { return {SystemKind::Hemmer, {}, Metric::Interval1D}; }
  static SystemSpec markov_pl() { return {SystemKind::MarkovPL, {}, Metric::Interval1D}; }

  /// Default-parameter system for a kind.
  static SystemSpec standard(SystemKind kind) {
    switch (kind) {
      case SystemKind::ArnoldCat: return arnold_cat();
      case SystemKind::Henon: return henon();
      case SystemKind::SierpinskiIFS: return sierpinski();
      case SystemKind::Lorenz63: return lorenz63();
      case SystemKind::ThreeXMod1: return three_x_mod1();
      case SystemKind::Gauss: return gauss();
      case SystemKind::Hemmer: return hemmer();
      case SystemKind::MarkovPL: return markov_pl();
    }
    throw UnsupportedError("unknown system kind");
  }

  std::size_t dim() const {
    switch (kind) {
      case SystemKind::ArnoldCat:
      case SystemKind::Henon:
      case SystemKind::SierpinskiIFS: return 2;
      case SystemKind::Lorenz63: return 3;
      default: return 1;
    }
  }

  std::optional<double> dt() const {
    if (kind == SystemKind::Lorenz63 && params.size() == 4) return params[3];
    return std::nullopt;
  }

  std::string name() const { return std::string(to_string(kind)); }

  /// Throws DomainError when the parameters or metric violate the invariants.
  void validate() const {
    const std::size_t expected = kind == SystemKind::Henon            ? 2
                                 : kind == SystemKind::SierpinskiIFS ? 3
                                 : kind == SystemKind::Lorenz63      ? 4
                                                                     : 0;
    if (params.size() != expected)
      throw DomainError(name() + ": expected " + std::to_string(expected) + " parameters, got " +
                        std::to_string(params.size()));
    for (double p : params)
      if (!std::isfinite(p)) throw DomainError(name() + ": non-finite parameter");
    if (kind == SystemKind::SierpinskiIFS) {
      double sum = 0.0;
      for (double p : params) {
        if (!(p > 0.0)) throw DomainError("sierpinski: probabilities must be > 0");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) throw DomainError("sierpinski: probabilities must sum to 1");
    }
    if (kind == SystemKind::Lorenz63 && !(params[3] > 0.0)) throw DomainError("lorenz63: dt must be > 0");
    const Metric want = kind == SystemKind::ArnoldCat ? Metric::TorusEuclidean
                        : is_interval_map(kind)       ? Metric::Interval1D
                                                      : Metric::Euclidean;
    if (metric != want) throw DomainError(name() + ": metric must be " + std::string(to_string(want)));
  }
};

/// Per-coordinate closed box that every state of the system lies in.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;
};

inline Box phase_space_box(const SystemSpec& spec) {
  switch (spec.kind) {
    case SystemKind::ArnoldCat:
    case SystemKind::SierpinskiIFS: return {{0.0, 0.0}, {1.0, 1.0}};
    case SystemKind::Henon: return {{-10.0, -10.0}, {10.0, 10.0}};
    case SystemKind::Lorenz63: return {{-100.0, -100.0, -100.0}, {100.0, 100.0, 100.0}};
    case SystemKind::Hemmer: return {{-1.0}, {1.0}};
    default: return {{0.0}, {1.0}};
  }
}

inline bool in_phase_space(const SystemSpec& spec, std::span<const double> x) {
  if (x.size() != spec.dim()) return false;
  for (double v : x)
    if (!std::isfinite(v)) return false;
  switch (spec.kind) {
    case SystemKind::ArnoldCat: return x[0] >= 0.0 && x[0] < 1.0 && x[1] >= 0.0 && x[1] < 1.0;
    case SystemKind::SierpinskiIFS: return x[0] >= 0.0 && x[0] <= 1.0 && x[1] >= 0.0 && x[1] <= 1.0;
    case SystemKind::Henon: return std::abs(x[0]) <= 10.0 && std::abs(x[1]) <= 10.0;
    case SystemKind::Lorenz63: return std::abs(x[0]) <= 100.0 && std::abs(x[1]) <= 100.0 && std::abs(x[2]) <= 100.0;
    case SystemKind::ThreeXMod1:
    case SystemKind::MarkovPL: return x[0] >= 0.0 && x[0] < 1.0;
    case SystemKind::Gauss: return x[0] > 0.0 && x[0] <= 1.0;
    case SystemKind::Hemmer: return x[0] >= -1.0 && x[0] <= 1.0;
  }
  return false;
}

namespace detail {

inline constexpr double kGaussFloor = 1e-300;

inline double frac(double v) { return v - std::floor(v); }

// Advances x in place. Validation is the caller's job; the hot loops in
// generate_trajectory and the product-system streams call this directly.
inline void advance(const SystemSpec& spec, double* x, Rng& rng) {
  switch (spec.kind) {
    case SystemKind::ArnoldCat: {
      const double u = frac(2.0 * x[0] + x[1]);
      const double v = frac(x[0] + x[1]);
      x[0] = u;
      x[1] = v;
      return;
    }
    case SystemKind::Henon: {
      const double u = 1.0 - spec.params[0] * x[0] * x[0] + x[1];
      x[1] = spec.params[1] * x[0];
      x[0] = u;
      return;
    }
    case SystemKind::SierpinskiIFS: {
      const double r = rng.uniform();
      if (r < spec.params[0]) {
        x[0] = 0.5 * x[0];
        x[1] = 0.5 * (x[1] + 1.0);
      } else if (r < spec.params[0] + spec.params[1]) {
        x[0] = 0.5 * (x[0] + 1.0);
        x[1] = 0.5 * (x[1] + 1.0);
      } else {
        x[0] = 0.5 * x[0];
        x[1] = 0.5 * x[1];
      }
      return;
    }
    case SystemKind::Lorenz63: {
      const double sigma = spec.params[0], rho = spec.params[1], beta = spec.params[2], dt = spec.params[3];
      const double dx = sigma * (x[1] - x[0]);
      const double dy = x[0] * (rho - x[2]) - x[1];
      const double dz = x[0] * x[1] - beta * x[2];
      x[0] += dt * dx;
      x[1] += dt * dy;
      x[2] += dt * dz;
      return;
    }
    case SystemKind::ThreeXMod1: x[0] = frac(3.0 * x[0]); return;
    case SystemKind::Gauss: x[0] = frac(1.0 / x[0]); return;
    case SystemKind::Hemmer: x[0] = 1.0 - 2.0 * std::sqrt(std::abs(x[0])); return;
    case SystemKind::MarkovPL: {
      const double v = x[0];
      if (v < 1.0 / 3.0)
        x[0] = 3.0 * v;
      else if (v < 2.0 / 3.0)
        x[0] = 5.0 / 3.0 - 2.0 * v;
      else
        x[0] = 3.0 * v - 2.0;
      // Rounding at the branch ends can land a hair outside [0, 1).
      if (x[0] < 0.0) x[0] = 0.0;
      if (x[0] >= 1.0) x[0] = std::nextafter(1.0, 0.0);
      return;
    }
  }
}

inline void draw_initial(const SystemSpec& spec, double* x, Rng& rng) {
  switch (spec.kind) {
    case SystemKind::ArnoldCat:
    case SystemKind::SierpinskiIFS:
      x[0] = rng.uniform();
      x[1] = rng.uniform();
      return;
    case SystemKind::Henon:
      // A neighbourhood of the origin lies in the basin of the attractor.
      x[0] = rng.uniform(-0.1, 0.1);
      x[1] = rng.uniform(-0.1, 0.1);
      return;
    case SystemKind::Lorenz63:
      x[0] = rng.uniform(-20.0, 20.0);
      x[1] = rng.uniform(-20.0, 20.0);
      x[2] = rng.uniform(5.0, 45.0);
      return;
    case SystemKind::Hemmer: x[0] = rng.uniform(-1.0, 1.0); return;
    case SystemKind::Gauss:
      do x[0] = 1.0 - rng.uniform();
      while (x[0] <= kGaussFloor);
      return;
    default: x[0] = rng.uniform(); return;
  }
}

// True when the state must be discarded and redrawn (Henon escape, Gauss
// pathologies near 0).
inline bool needs_restart(const SystemSpec& spec, const double* x) {
  switch (spec.kind) {
    case SystemKind::Henon: return !(std::abs(x[0]) <= 10.0 && std::abs(x[1]) <= 10.0);
    case SystemKind::Gauss: return !(x[0] > kGaussFloor);
    case SystemKind::Lorenz63:
      return !(std::abs(x[0]) <= 100.0 && std::abs(x[1]) <= 100.0 && std::abs(x[2]) <= 100.0);
    default: return false;
  }
}

}  // namespace detail

/// One iterate of the system. Only SierpinskiIFS consumes the generator.
inline std::vector<double> step(const SystemSpec& spec, std::span<const double> state, Rng& rng) {
  spec.validate();
  if (!in_phase_space(spec, state)) throw DomainError(spec.name() + ": state outside phase space");
  if (spec.kind == SystemKind::Gauss && state[0] <= detail::kGaussFloor)
    throw DomainError("gauss: 1/x is not representable at x <= 1e-300");
  std::vector<double> next(state.begin(), state.end());
  detail::advance(spec, next.data(), rng);
  return next;
}

inline double distance(Metric metric, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("distance: dimension mismatch");
  if (metric == Metric::Interval1D) {
    if (a.size() != 1) throw ArgumentError("distance: interval metric needs 1-d points");
    return std::abs(a[0] - b[0]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (metric == Metric::TorusEuclidean) d -= std::nearbyint(d);
    sum += d * d;
  }
  return std::sqrt(sum);
}

namespace detail {
// Unchecked distance for the inner loops.
inline double distance_unchecked(Metric metric, const double* a, const double* b, std::size_t dim) {
  if (metric == Metric::Interval1D) return std::abs(a[0] - b[0]);
  double sum = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double d = a[i] - b[i];
    if (metric == Metric::TorusEuclidean) d -= std::nearbyint(d);
    sum += d * d;
  }
  return std::sqrt(sum);
}

inline double wrap_unit(double d) {
  if (d > 0.5) return d - 1.0;
  if (d < -0.5) return d + 1.0;
  return d;
}

// Squared distance without the square root; torus coordinates are assumed
// to lie in [0, 1) so a single wrap suffices.
inline double distance_sq_unchecked(Metric metric, const double* a, const double* b, std::size_t dim) {
  double sum = 0.0;
  if (metric == Metric::TorusEuclidean) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = wrap_unit(a[i] - b[i]);
      sum += d * d;
    }
  } else {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = a[i] - b[i];
      sum += d * d;
    }
  }
  return sum;
}

// Ball membership d(a, b) < r, the single predicate shared by every
// estimator so that indexed and brute-force paths agree exactly.
inline bool within(Metric metric, const double* a, const double* b, std::size_t dim, double r) {
  if (metric == Metric::Interval1D) return std::abs(a[0] - b[0]) < r;
  return distance_sq_unchecked(metric, a, b, dim) < r * r;
}
}  // namespace detail

/// Immutable sequence of states stored row-major.
class Trajectory {
 public:
  Trajectory() = default;

  /// Wraps externally produced states (e.g. an ingested series).
  Trajectory(std::vector<double> data, std::size_t dim, Metric metric, std::string label = "external")
      : data_(std::move(data)), dim_(dim), metric_(metric), label_(std::move(label)) {
    if (dim_ == 0 || data_.size() % dim_ != 0) throw ArgumentError("trajectory: data size not a multiple of dim");
  }

  Trajectory(std::vector<double> data, const SystemSpec& spec, std::uint64_t seed, std::size_t burn_in)
      : data_(std::move(data)),
        dim_(spec.dim()),
        metric_(spec.metric),
        label_(spec.name()),
        seed_(seed),
        burn_in_(burn_in),
        system_(spec) {}

  std::size_t size() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  Metric metric() const noexcept { return metric_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t burn_in() const noexcept { return burn_in_; }
  const std::optional<SystemSpec>& system() const noexcept { return system_; }
  const std::string& label() const noexcept { return label_; }

  std::span<const double> state(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const double* raw(std::size_t i) const noexcept { return data_.data() + i * dim_; }
  std::span<const double> data() const noexcept { return data_; }

 private:
  std::vector<double> data_;
  std::size_t dim_ = 0;
  Metric metric_ = Metric::Euclidean;
  std::string label_ = "external";
  std::uint64_t seed_ = 0;
  std::size_t burn_in_ = 0;
  std::optional<SystemSpec> system_;
};

/// Streams iterates of one system without storing them. Used where
/// trajectories are too long to keep (product systems, block maxima).
class Orbit {
 public:
  Orbit(const SystemSpec& spec, std::uint64_t seed, std::size_t burn_in = kDefaultBurnIn, std::uint64_t stream = 0)
      : spec_(spec), rng_(seed, stream), burn_in_(burn_in) {
    spec_.validate();
    restart();
  }

  const double* state() const noexcept { return x_.data(); }
  std::span<const double> view() const noexcept { return {x_.data(), spec_.dim()}; }
  const SystemSpec& spec() const noexcept { return spec_; }

  void advance() {
    raw_step();
    if (detail::needs_restart(spec_, x_.data())) {
      if (spec_.kind == SystemKind::Gauss) {
        // Measure-zero pathology: redraw in place instead of re-running burn-in.
        detail::draw_initial(spec_, x_.data(), rng_);
      } else {
        restart();
      }
    }
  }

 private:
  // MarkovPL runs on the lattice n / M with M = 3P, P prime. Every branch
  // is exact there, and multiplication by 2 or 3 is invertible mod P, so the
  // orbit cannot collapse onto a dyadic cycle the way the double-precision
  // iteration does (it falls onto 1/4 -> 3/4 within a few hundred steps).
  static constexpr std::uint64_t kLatticeP = (std::uint64_t{1} << 60) - 93;
  static constexpr std::uint64_t kLatticeM = 3 * kLatticeP;

  void lattice_sync() {
    const double v = static_cast<double>(n_) / static_cast<double>(kLatticeM);
    x_[0] = v < 1.0 ? v : std::nextafter(1.0, 0.0);
  }

  void raw_step() {
    if (spec_.kind != SystemKind::MarkovPL) {
      detail::advance(spec_, x_.data(), rng_);
      return;
    }
    if (n_ < kLatticeP)
      n_ = 3 * n_;
    else if (n_ < 2 * kLatticeP)
      n_ = 5 * kLatticeP - 2 * n_;  // maps the left end 1/3 to 1; kept inside [0, 1)
    else
      n_ = 3 * n_ - 2 * kLatticeM;
    if (n_ >= kLatticeM) n_ = kLatticeM - 1;
    lattice_sync();
  }

  void draw() {
    if (spec_.kind == SystemKind::MarkovPL) {
      n_ = static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng_.next()) * kLatticeM) >> 64);
      lattice_sync();
    } else {
      detail::draw_initial(spec_, x_.data(), rng_);
    }
  }

  void restart() {
    for (;;) {
      draw();
      bool ok = true;
      for (std::size_t i = 0; i < burn_in_; ++i) {
        raw_step();
        if (detail::needs_restart(spec_, x_.data())) {
          if (spec_.kind == SystemKind::Gauss) {
            detail::draw_initial(spec_, x_.data(), rng_);
            continue;
          }
          ok = false;
          break;
        }
      }
      if (ok) return;
    }
  }

  SystemSpec spec_;
  Rng rng_;
  std::size_t burn_in_;
  std::array<double, 3> x_{};
  std::uint64_t n_ = 0;  // lattice state, MarkovPL only
};

/// Trajectory of len states after discarding burn_in iterates. The initial
/// state is drawn from the phase-space box with the (seed, stream) generator;
/// the same arguments reproduce the same states bit for bit.
inline Trajectory generate_trajectory(const SystemSpec& spec, std::uint64_t seed, std::size_t burn_in,
                                      std::size_t len, std::uint64_t stream = 0) {
  if (len == 0) throw ArgumentError("generate_trajectory: len must be >= 1");
  spec.validate();
  Orbit orbit(spec, seed, burn_in, stream);
  const std::size_t d = spec.dim();
  std::vector<double> data(len * d);
  for (std::size_t i = 0; i < len; ++i) {
    const double* x = orbit.state();
    for (std::size_t k = 0; k < d; ++k) data[i * d + k] = x[k];
    if (i + 1 < len) orbit.advance();
  }
  return Trajectory(std::move(data), spec, seed, burn_in);
}

/// Writes the trajectory as CSV: two comment lines (field names, then
/// values; dt is empty for maps) followed by one state per row.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << "# system,seed,burn_in,dt\n";
  out << "# " << traj.label() << ',' << traj.seed() << ',' << traj.burn_in() << ',';
  if (traj.system() && traj.system()->dt()) out << io::fmt(*traj.system()->dt());
  out << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    auto s = traj.state(i);
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k) out << ',';
      out << io::fmt(s[k]);
    }
    out << '\n';
  }
}

/// Closed-form invariant density h and |T'| of an interval map.
struct DensityModel {
  SystemKind kind;
  std::function<double(double)> density;
  std::function<double(double)> abs_derivative;
  std::optional<double> metric_entropy;
  double lo = 0.0;
  double hi = 1.0;
  /// Interior points where h or |T'| is non-smooth; quadrature splits there.
  std::vector<double> breakpoints;
};

inline DensityModel density_model(SystemKind kind) {
  using std::numbers::ln2;
  switch (kind) {
    case SystemKind::ThreeXMod1:
      return {kind, [](double) { return 1.0; }, [](double) { return 3.0; }, std::log(3.0), 0.0, 1.0, {}};
    case SystemKind::Gauss:
      return {kind,
              [](double x) { return 1.0 / (ln2 * (1.0 + x)); },
              [](double x) { return 1.0 / (x * x); },
              std::numbers::pi * std::numbers::pi / (6.0 * ln2),
              0.0,
              1.0,
              {}};
    case SystemKind::Hemmer:
      return {kind,
              [](double x) { return 0.5 * (1.0 - x); },
              [](double x) { return 1.0 / std::sqrt(std::abs(x)); },
              0.5,
              -1.0,
              1.0,
              {0.0}};
    case SystemKind::MarkovPL:
      return {kind,
              [](double x) { return x < 1.0 / 3.0 ? 0.6 : 1.2; },
              [](double x) { return (x >= 1.0 / 3.0 && x < 2.0 / 3.0) ? 2.0 : 3.0; },
              0.6 * std::log(3.0) + 0.4 * ln2,
              0.0,
              1.0,
              {1.0 / 3.0, 2.0 / 3.0}};
    default: throw UnsupportedError("density_model: no closed-form density for " + std::string(to_string(kind)));
  }
}

}  // namespace gdim
