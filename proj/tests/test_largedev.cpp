#include "catch_amalgamated.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "gdim/largedev.hpp"

using namespace gdim;
using Catch::Approx;

namespace {

double sierpinski_tau_direct(double q) { return -std::log2(2.0 * std::pow(0.25, q) + std::pow(0.5, q)); }

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

// Legendre transform by exhaustive search on a much finer q lattice.
double brute_sup(const std::function<double(double)>& g, double lo, double hi, double step) {
  double best = -std::numeric_limits<double>::infinity();
  for (double q = lo; q <= hi + 1e-12; q += step) best = std::max(best, g(q));
  return best;
}

LocalDimSample sample_of(std::vector<double> d, double r) {
  LocalDimSample s;
  s.dim = 1;
  s.d1r = std::move(d);
  s.centers.assign(s.d1r.size(), 0.0);
  s.r_cut.assign(s.d1r.size(), r);
  s.n_exceedances.assign(s.d1r.size(), 0);
  return s;
}

}  // namespace

TEST_CASE("Sierpinski tau matches the closed form", "[largedev]") {
  const auto tau = sierpinski_tau();
  for (double q : {-8.0, -2.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 9.5})
    CHECK(tau(q) == Approx(sierpinski_tau_direct(q)).epsilon(1e-13).margin(1e-13));
  CHECK(tau(1.0) == Approx(0.0).margin(1e-15));
  CHECK(tau(0.0) == Approx(-std::log2(3.0)).epsilon(1e-14));
  // large |q| stays finite
  CHECK(std::isfinite(tau(400.0)));
  CHECK(tau(400.0) == Approx(400.0).epsilon(1e-12));
  CHECK(tau(-400.0) == Approx(-801.0).epsilon(1e-12));
  CHECK_THROWS_AS(self_similar_tau({0.5, 0.6}, 0.5), DomainError);
  CHECK_THROWS_AS(self_similar_tau({0.5, 0.5}, 1.5), DomainError);
}

TEST_CASE("free energy of the Sierpinski measure", "[largedev]") {
  const auto qs = grid(-5.0, 5.0, 0.25);
  const auto F = free_energy(sierpinski_tau(), qs);
  REQUIRE(F.size() == qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const double e = 1.0 - qs[i];
    const double expected = std::log2(2.0 * std::pow(0.25, e) + std::pow(0.5, e));
    CHECK(F.R[i] == Approx(expected).epsilon(1e-12).margin(1e-12));
  }
  CHECK(F(0.0) == Approx(0.0).margin(1e-15));
  CHECK(F.convexity_violations.empty());
  CHECK(F.source == FreeEnergySource::Analytic);
}

TEST_CASE("free energy of the uniform 2-torus is 2q", "[largedev]") {
  const auto qs = grid(-3.0, 3.0, 0.5);
  const auto F = free_energy(uniform_tau(2.0), qs);
  for (std::size_t i = 0; i < qs.size(); ++i) CHECK(F.R[i] == Approx(2.0 * qs[i]).margin(1e-14));
}

TEST_CASE("free energy rejects a concave analytic source", "[largedev]") {
  const TauFunction bad{[](double q) { return (q - 1.0) * (q - 1.0); }};
  const auto qs = grid(-1.0, 1.0, 0.1);
  CHECK_THROWS_AS(free_energy(bad, qs), ValidationError);
  // the same shape from a fit is recorded, not rejected
  const auto F = free_energy(bad, qs, FreeEnergySource::Fitted);
  CHECK(F.convexity_violations.size() == qs.size() - 2);
}

TEST_CASE("free energy from a fitted spectrum interpolates tau", "[largedev]") {
  const auto tau = sierpinski_tau();
  DimensionSpectrum s;
  for (double q = -4.0; q <= 6.0; q += 0.5) {
    const double t = q == 1.0 ? std::numeric_limits<double>::quiet_NaN() : tau(q);
    s.push(q, t, t / (q - 1.0), 0.01);
  }
  const auto T = interpolated_tau(s);
  CHECK(T.q_lo == -4.0);
  CHECK(T.q_hi == 6.0);
  // nodes are reproduced, including the implied tau(1) = 0
  for (double q : {-4.0, -1.5, 1.0, 2.5, 6.0}) CHECK(T(q) == Approx(tau(q)).margin(1e-12));
  // between nodes the shape-preserving cubic stays close to the smooth curve
  for (double q = -3.9; q < 5.9; q += 0.37) CHECK(T(q) == Approx(tau(q)).margin(0.02));
  const auto qs = grid(-3.0, 3.0, 0.5);
  const auto F = free_energy(s, qs);
  CHECK(F.source == FreeEnergySource::Fitted);
  CHECK(F(0.5) == Approx(-T(0.5)).margin(1e-15));
  CHECK(F.q_lo() == -5.0);
  CHECK(F.q_hi() == 5.0);
  const std::vector<double> too_wide{-6.0, 0.0};
  CHECK_THROWS_AS(free_energy(s, too_wide), RangeError);

  DimensionSpectrum few;
  few.push(2.0, 1.4, 1.4, 0.0);
  few.push(3.0, 2.7, 1.35, 0.0);
  CHECK_THROWS_AS(interpolated_tau(few), InsufficientData);
}

TEST_CASE("Legendre Q of the Sierpinski tau", "[largedev][legendre]") {
  const auto tau = sierpinski_tau();
  const auto sg = grid(1.02, 1.98, 0.02);
  const auto Q = legendre(RateKind::Q, tau, sg);
  REQUIRE(Q.size() == sg.size());
  for (std::size_t i = 0; i < Q.size(); ++i) {
    CHECK_FALSE(Q.censored[i]);
    CHECK(Q.values[i] >= -1e-9);
  }
  const std::vector<double> at_d1{1.5};
  CHECK(legendre(RateKind::Q, tau, at_d1).values[0] == Approx(0.0).margin(1e-6));
  CHECK(legendre(RateKind::Qhat, tau, at_d1).values[0] == Approx(0.0).margin(1e-6));
  CHECK(rate_convexity_violations(Q, 1e-8).empty());

  // against an exhaustive search on a 1e-4 lattice
  for (std::size_t i = 0; i < sg.size(); i += 6) {
    const double s = sg[i];
    const double oracle = brute_sup([&](double q) { return -q * s + sierpinski_tau_direct(q + 1.0); }, -10, 10, 1e-4);
    CHECK(Q.values[i] == Approx(oracle).margin(1e-7));
  }
}

TEST_CASE("Q and Qhat coincide for the same tau", "[largedev][legendre]") {
  const auto tau = sierpinski_tau();
  const auto sg = grid(1.05, 1.95, 0.05);
  const auto Q = legendre(RateKind::Q, tau, sg);
  const auto Qh = legendre(RateKind::Qhat, tau, sg);
  for (std::size_t i = 0; i < sg.size(); ++i) {
    CHECK(Qh.values[i] == Approx(Q.values[i]).margin(1e-10));
    CHECK(Qh.q_star[i] == Approx(-Q.q_star[i]).margin(1e-6));
  }
}

TEST_CASE("double Legendre transform recovers tau", "[largedev][legendre]") {
  const auto tau = sierpinski_tau();
  const auto sg = grid(1.0, 2.0, 0.0005);
  const auto Q = legendre(RateKind::Q, tau, sg);
  for (double q = -3.0; q <= 3.0; q += 0.25) CHECK(legendre_back(Q, q) == Approx(tau(q + 1.0)).margin(1e-4));
}

TEST_CASE("Legendre suprema at the edge of the q range are censored", "[largedev][legendre]") {
  const auto tau = sierpinski_tau();
  // local dimensions of this measure lie in [1, 2]
  const std::vector<double> sg{0.9, 0.99, 1.5, 2.01, 2.2};
  const auto Q = legendre(RateKind::Q, tau, sg);
  CHECK(Q.censored[0]);
  CHECK(Q.censored[1]);
  CHECK_FALSE(Q.censored[2]);
  CHECK(Q.censored[3]);
  CHECK(Q.censored[4]);
  CHECK(Q.q_star[0] == Approx(10.0));
  CHECK(Q.q_star[4] == Approx(-10.0));
}

TEST_CASE("Legendre transform of the uniform measure is degenerate", "[largedev][legendre]") {
  const std::vector<double> sg{1.5, 2.0, 2.5};
  const auto Q = legendre(RateKind::Q, uniform_tau(2.0), sg);
  CHECK(Q.censored[0]);
  CHECK_FALSE(Q.censored[1]);
  CHECK(Q.values[1] == Approx(0.0).margin(1e-12));
  CHECK(Q.censored[2]);
}

TEST_CASE("f(alpha) touches the diagonal at D1", "[largedev][legendre]") {
  const auto tau = sierpinski_tau();
  const auto ag = grid(1.02, 1.98, 0.02);
  const auto f = legendre(RateKind::FAlpha, tau, ag);
  for (std::size_t i = 0; i < f.size(); ++i) {
    REQUIRE_FALSE(f.censored[i]);
    CHECK(f.values[i] <= ag[i] + 1e-9);
  }
  const std::vector<double> at_d1{1.5};
  CHECK(legendre(RateKind::FAlpha, tau, at_d1).values[0] == Approx(1.5).margin(1e-6));
  // maximum of f is the box dimension -tau(0), reached at alpha = tau'(0)
  const double h = 1e-6;
  const std::vector<double> at_a0{(tau(h) - tau(-h)) / (2.0 * h)};
  CHECK(legendre(RateKind::FAlpha, tau, at_a0).values[0] == Approx(std::log2(3.0)).margin(1e-7));
  // f is concave
  auto neg = f;
  for (auto& v : neg.values) v = -v;
  CHECK(rate_convexity_violations(neg, 1e-8).empty());
}

TEST_CASE("Legendre transform clips to the domain of a fitted tau", "[largedev][legendre]") {
  const auto tau = sierpinski_tau();
  DimensionSpectrum s;
  for (double q = -3.0; q <= 5.0; q += 0.25) s.push(q, tau(q), 0.0, 0.0);
  const auto F = free_energy(s, std::vector<double>{0.0});
  const std::vector<double> sg{1.5, 1.99};
  const auto Q = legendre(RateKind::Q, F, sg);
  CHECK(Q.values[0] == Approx(0.0).margin(1e-6));
  CHECK_FALSE(Q.censored[0]);
  // the optimiser for s near 2 runs off the fitted range (tau(q+1) needs q >= -4)
  CHECK(Q.censored[1]);
  CHECK(Q.q_star[1] == Approx(-4.0));
}

TEST_CASE("hitting deviation window", "[largedev]") {
  // uniform 1D map: R(2)/2 = 1
  const auto U = free_energy(uniform_tau(1.0), std::vector<double>{0.0});
  CHECK(hitting_window(U, 1.0) == Approx(1.0).margin(1e-14));
  const auto S = free_energy(sierpinski_tau(), std::vector<double>{0.0});
  const double expected = std::log2(2.0 * std::pow(0.25, -1.5) + std::pow(0.5, -1.5)) / 2.5;
  CHECK(hitting_window(S, 1.5) == Approx(expected).epsilon(1e-13));

  const std::vector<double> sg{1.4, 1.5, 1.6, 3.0, 3.5};
  auto Qh = legendre(RateKind::Qhat, sierpinski_tau(), sg);
  mark_window(Qh, 1.5, hitting_window(S, 1.5));
  CHECK(Qh.out_of_window == std::vector<bool>{true, true, false, false, true});
}

TEST_CASE("empirical rate at the median", "[largedev][empirical]") {
  const auto sample = sample_of({1.0, 2.0, 3.0, 4.0}, 0.1);
  const std::vector<double> sg{2.5};
  const auto c1 = empirical_rate_local_dim(sample, sg);
  CHECK(*c1.r_level == Approx(0.1));
  CHECK(c1.values[0] == Approx(std::log(0.5) / std::log(0.1)));
  CHECK(c1.values[0] > 0.0);
  const auto c2 = empirical_rate_local_dim(sample, sg, 0.01);
  CHECK(c2.values[0] < c1.values[0]);
  CHECK(c2.tail_count[0] == 2);
  CHECK(c2.n_samples[0] == 4);
}

TEST_CASE("empirical rate uses both tails around the mean", "[largedev][empirical]") {
  const auto sample = sample_of({1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4, 2.6, 3.8}, 0.05);
  // mean is 2.0
  const std::vector<double> sg{1.1, 1.5, 2.0, 2.5, 3.0};
  const auto c = empirical_rate_local_dim(sample, sg);
  const std::vector<std::size_t> expected_counts{1, 3, 5, 2, 1};
  CHECK(c.tail_count == expected_counts);
  for (std::size_t i = 0; i < sg.size(); ++i) {
    CHECK(c.values[i] == Approx(std::log(static_cast<double>(expected_counts[i]) / 10.0) / std::log(0.05)));
    CHECK(c.values[i] >= 0.0);
  }
}

TEST_CASE("degenerate sample is censored away from its value", "[largedev][empirical]") {
  const auto sample = sample_of(std::vector<double>(50, 1.7), 0.125);
  const std::vector<double> sg{1.0, 1.7, 2.5};
  const auto c = empirical_rate_local_dim(sample, sg);
  const double bound = std::log(50.0) / std::abs(std::log(0.125));
  CHECK(c.censored == std::vector<bool>{true, false, true});
  CHECK(c.values[0] == Approx(bound));
  CHECK(c.values[1] == Approx(0.0).margin(1e-15));
  CHECK(c.values[2] == Approx(bound));

  const std::vector<double> far{5.0, 6.0};
  CHECK_THROWS_AS(empirical_rate_local_dim(sample, far), InsufficientData);
  const std::vector<LocalDimSample> one{sample};
  CHECK_THROWS_AS(empirical_rate_local_dim(one, sg), InsufficientData);
}

TEST_CASE("local dimensions at a fixed radius match brute-force ball measures", "[largedev][empirical]") {
  const auto spec = SystemSpec::sierpinski();
  const auto traj = generate_trajectory(spec, 3, 200, 20000, 0);
  const auto centers = generate_trajectory(spec, 4, 200, 200, 0);
  const double r = 1.0 / 32.0;
  const auto s = local_dimensions_at_radius(traj, centers, r, 2);
  REQUIRE(s.size() + s.skipped == centers.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double mu = ball_measure(traj, centers.state(i), r);
    if (mu == 0.0) continue;
    CHECK(s.d1r[k] == Approx(std::log(mu) / std::log(r)).epsilon(1e-14));
    CHECK(s.r_cut[k] == r);
    ++k;
  }
  CHECK(k == s.size());
}

TEST_CASE("Sierpinski Q_r moves toward the Legendre curve as r shrinks", "[largedev][empirical]") {
  const auto spec = SystemSpec::sierpinski();
  const auto traj = generate_trajectory(spec, 1, 1000, 1000000, 0);
  const auto centers = generate_trajectory(spec, 101, 1000, 10000, 0);
  const auto sg = grid(0.9, 2.3, 0.02);
  const auto Q = legendre(RateKind::Q, sierpinski_tau(), sg);
  std::vector<RateCurve> curves;
  for (int k : {4, 8}) {
    const double r = std::ldexp(1.0, -k);
    curves.push_back(empirical_rate_local_dim(local_dimensions_at_radius(traj, centers, r), sg, r));
  }
  const auto d = approach_distances(curves, Q, 10);
  CHECK(d[1] < d[0]);
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.size(); ++i)
      if (!c.censored[i]) CHECK(c.values[i] >= 0.0);
}

TEST_CASE("pair hitting times match a direct scan", "[largedev][hitting]") {
  const auto spec = SystemSpec::three_x_mod1();
  HittingRateOptions o;
  o.seed = 9;
  o.burn_in = 50;
  o.scan_len = 5000;
  o.threads = 1;
  const double r = 0.01;
  const auto H = pair_hitting_times(spec, r, 40, o);
  for (std::size_t i = 0; i < 40; ++i) {
    const Orbit zo(spec, derive_seed(9, 2 * i), 50);
    const double z = zo.state()[0];
    Orbit xo(spec, derive_seed(9, 2 * i + 1), 50);
    double expected = std::numeric_limits<double>::infinity();
    for (std::size_t n = 1; n <= 5000; ++n) {
      xo.advance();
      if (std::abs(xo.state()[0] - z) < r) {
        expected = static_cast<double>(n);
        break;
      }
    }
    CHECK(H[i] == expected);
  }
  o.threads = 3;
  CHECK(pair_hitting_times(spec, r, 40, o) == H);
}

TEST_CASE("hitting rate near the typical value is small and positive", "[largedev][hitting]") {
  HittingRateOptions o;
  o.d1 = 1.0;
  o.seed = 4;
  o.burn_in = 50;
  const std::vector<double> off{0.05, 0.2};
  const auto c = empirical_rate_hitting(SystemSpec::three_x_mod1(), 1e-3, off, 20000, o);
  CHECK(c.s[0] == Approx(1.05));
  CHECK_FALSE(c.censored[0]);
  CHECK_FALSE(c.censored[1]);
  CHECK(c.values[0] > 0.0);
  CHECK(c.values[0] < 0.5 * c.values[1]);
  CHECK_FALSE(c.flagged[0]);
}

TEST_CASE("Sierpinski hitting rate at an interior s", "[largedev][hitting]") {
  HittingRateOptions o;
  o.d1 = 1.5;
  o.seed = 1;
  o.burn_in = 60;
  const double r = std::ldexp(1.0, -8);
  const std::vector<double> off{-0.2};
  const auto c = empirical_rate_hitting(SystemSpec::sierpinski(), r, off, 100000, o);
  const auto Qh = legendre(RateKind::Qhat, sierpinski_tau(), c.s);
  REQUIRE_FALSE(c.censored[0]);
  REQUIRE_FALSE(Qh.censored[0]);
  CHECK(c.values[0] == Approx(Qh.values[0]).margin(0.15));
}

TEST_CASE("unhit pairs count in the upper tail and raise a flag", "[largedev][hitting]") {
  std::vector<double> H(100, 10.0);
  for (std::size_t i = 0; i < 5; ++i) H[i] = std::numeric_limits<double>::infinity();
  HittingRateOptions o;
  o.d1 = 1.0;
  o.scan_len = 1000;
  const double r = 0.1;  // log H / (-log r) = 1 for the hit pairs
  const std::vector<double> off{0.5, -0.5};
  const auto c = empirical_rate_hitting(H, r, off, o);
  CHECK(c.tail_count[0] == 5);
  CHECK(c.values[0] == Approx(std::log(0.05) / std::log(0.1)));
  CHECK(c.flagged[0]);
  CHECK(c.tail_count[1] == 0);
  CHECK(c.censored[1]);
}

TEST_CASE("rate curve CSV layout", "[largedev][io]") {
  const std::vector<double> sg{1.5, 2.5};
  std::vector<RateCurve> curves{legendre(RateKind::Q, sierpinski_tau(), sg),
                                empirical_rate_local_dim(sample_of({1.0, 2.0, 3.0}, 0.25), sg)};
  std::ostringstream out;
  write_rate_csv(out, curves);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "s,value,kind,r_level,censored,n_samples");
  std::getline(in, line);
  CHECK(line.find(",Q,,0,0") != std::string::npos);
  std::getline(in, line);
  CHECK(line.find(",Q,,1,0") != std::string::npos);
  std::getline(in, line);
  CHECK(line.find(",empirical-local-dim,0.25,0,3") != std::string::npos);
}
