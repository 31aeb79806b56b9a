#pragma once

// Birkhoff estimators built on ball queries: ball measures, q-correlation
// integrals, hitting times and the hitting/return-time integrals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdim/ball_index.hpp"
#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"
#include "gdim/io.hpp"
#include "gdim/parallel.hpp"

namespace gdim {

/// Geometric radius grid r_k = r_max * ratio^k, k = 0..count-1.
class RadiusGrid {
 public:
  RadiusGrid() = default;

  RadiusGrid(double r_max, double ratio, std::size_t count) : r_max_(r_max), ratio_(ratio), count_(count) {
    if (!(r_max > 0.0) || !std::isfinite(r_max)) throw ArgumentError("RadiusGrid: r_max must be > 0");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("RadiusGrid: ratio must lie in (0, 1)");
    if (count < 2) throw ArgumentError("RadiusGrid: need at least 2 radii");
  }

  /// count radii spaced evenly in log r from r_hi down to r_lo.
  static RadiusGrid spanning(double r_hi, double r_lo, std::size_t count) {
    if (!(r_hi > r_lo && r_lo > 0.0)) throw ArgumentError("RadiusGrid: need r_hi > r_lo > 0");
    if (count < 2) throw ArgumentError("RadiusGrid: need at least 2 radii");
    return RadiusGrid(r_hi, std::pow(r_lo / r_hi, 1.0 / static_cast<double>(count - 1)), count);
  }

  /// Defaults: r_max = 0.1, ratio = 2^(-1/2), 12 radii.
  static RadiusGrid standard() { return RadiusGrid(0.1, 1.0 / std::sqrt(2.0), 12); }

  double r_max() const noexcept { return r_max_; }
  double ratio() const noexcept { return ratio_; }
  std::size_t size() const noexcept { return count_; }
  double operator[](std::size_t k) const { return r_max_ * std::pow(ratio_, static_cast<double>(k)); }

  std::vector<double> values() const {
    std::vector<double> v(count_);
    for (std::size_t k = 0; k < count_; ++k) v[k] = (*this)[k];
    return v;
  }

 private:
  double r_max_ = 0.1;
  double ratio_ = 0.7071067811865476;
  std::size_t count_ = 12;
};

enum class IntegralKind { Gamma, Upsilon, GammaReturn };

inline std::string_view to_string(IntegralKind k) {
  switch (k) {
    case IntegralKind::Gamma: return "gamma";
    case IntegralKind::Upsilon: return "upsilon";
    case IntegralKind::GammaReturn: return "gamma-return";
  }
  return "?";
}

struct SampleMeta {
  std::size_t sample_len = 0;   // N
  std::size_t targets = 0;      // N'
  std::size_t hits = 0;         // H (0 when unused)
  std::uint64_t target_seed = 0;
  std::uint64_t sample_seed = 0;
};

/// log-integral estimates indexed by (q, r).
struct ScalingTable {
  IntegralKind kind = IntegralKind::Gamma;
  std::vector<double> q_list;
  RadiusGrid grid;
  std::vector<std::vector<double>> log_values;     // [q][r]
  std::vector<std::vector<std::size_t>> dropped;   // [q][r]
  std::vector<std::vector<bool>> flagged;          // [q][r]
  std::vector<std::size_t> truncated;              // [r], Upsilon only: targets with < H hits
  SampleMeta meta;
  // Partial sums of the integrand over contiguous groups of targets, kept
  // for group-jackknife error bars. [q][r][group]
  std::vector<std::vector<std::vector<double>>> group_sum;
  std::vector<std::vector<std::vector<std::size_t>>> group_used;

  std::size_t groups() const { return group_sum.empty() || group_sum[0].empty() ? 0 : group_sum[0][0].size(); }

  /// Copy whose log_values are recomputed with target group g left out.
  ScalingTable without_group(std::size_t g) const {
    if (g >= groups()) throw ArgumentError("ScalingTable: group index out of range");
    ScalingTable t = *this;
    for (std::size_t i = 0; i < q_list.size(); ++i) {
      if (q_list[i] == 1.0) continue;  // the integrand is identically 1
      for (std::size_t k = 0; k < grid.size(); ++k) {
        double sum = 0.0;
        std::size_t used = 0;
        for (std::size_t b = 0; b < groups(); ++b) {
          if (b == g) continue;
          sum += group_sum[i][k][b];
          used += group_used[i][k][b];
        }
        t.log_values[i][k] = (used > 0 && sum > 0.0) ? std::log(sum / static_cast<double>(used))
                                                     : -std::numeric_limits<double>::infinity();
      }
    }
    return t;
  }

  std::size_t q_index(double q) const {
    for (std::size_t i = 0; i < q_list.size(); ++i)
      if (q_list[i] == q) return i;
    throw ArgumentError("ScalingTable: q = " + io::fmt(q) + " not in table");
  }

  void resize(std::size_t nq, std::size_t nr, std::size_t ngroups = 0) {
    group_sum.assign(nq, std::vector<std::vector<double>>(nr, std::vector<double>(ngroups, 0.0)));
    group_used.assign(nq, std::vector<std::vector<std::size_t>>(nr, std::vector<std::size_t>(ngroups, 0)));
    log_values.assign(nq, std::vector<double>(nr, 0.0));
    dropped.assign(nq, std::vector<std::size_t>(nr, 0));
    flagged.assign(nq, std::vector<bool>(nr, false));
    truncated.assign(nr, 0);
  }
};

/// CSV columns: q, r, log_r, log_value, n_dropped, flagged.
inline void write_scaling_table_csv(std::ostream& out, const ScalingTable& t) {
  out << "q,r,log_r,log_value,n_dropped,flagged\n";
  for (std::size_t i = 0; i < t.q_list.size(); ++i)
    for (std::size_t k = 0; k < t.grid.size(); ++k)
      out << io::fmt(t.q_list[i]) << ',' << io::fmt(t.grid[k]) << ',' << io::fmt(std::log(t.grid[k])) << ','
          << io::fmt(t.log_values[i][k]) << ',' << t.dropped[i][k] << ',' << (t.flagged[i][k] ? 1 : 0) << '\n';
}

/// Fraction of trajectory states inside the open ball B(z, r).
inline double ball_measure(const Trajectory& traj, std::span<const double> z, double r) {
  if (traj.empty()) throw ArgumentError("ball_measure: empty trajectory");
  if (!(r > 0.0)) throw ArgumentError("ball_measure: r must be > 0");
  if (z.size() != traj.dim()) throw ArgumentError("ball_measure: dimension mismatch");
  std::size_t inside = 0;
  for (std::size_t j = 0; j < traj.size(); ++j)
    if (detail::within(traj.metric(), traj.raw(j), z.data(), traj.dim(), r)) ++inside;
  return static_cast<double>(inside) / static_cast<double>(traj.size());
}

namespace detail {
// Finer cells than the radius let counts add whole interior cells at once.
inline constexpr double kCountCellsPerRadius = 8.0;

inline void check_pair(const Trajectory& a, const Trajectory& b, std::string_view who) {
  if (a.empty() || b.empty()) throw ArgumentError(std::string(who) + ": empty trajectory");
  if (a.dim() != b.dim() || a.metric() != b.metric())
    throw ArgumentError(std::string(who) + ": trajectories differ in dimension or metric");
}

inline void check_q_list(std::span<const double> q_list, std::string_view who) {
  if (q_list.empty()) throw ArgumentError(std::string(who) + ": empty q list");
  for (double q : q_list)
    if (!std::isfinite(q)) throw ArgumentError(std::string(who) + ": non-finite q");
}

inline constexpr std::size_t kJackknifeGroups = 16;

inline std::size_t group_count(std::size_t targets) { return std::min(kJackknifeGroups, targets); }

inline std::size_t group_of(std::size_t l, std::size_t targets, std::size_t groups) {
  return l * groups / targets;
}

inline SampleMeta meta_of(const Trajectory& target, const Trajectory& sample, std::size_t hits) {
  return {sample.size(), target.size(), hits, target.seed(), sample.seed()};
}

}  // namespace detail

/// q-correlation integral: entry (q, r) is log of the target average of
/// [ball_measure(sample, z_l, r)]^(q-1). Targets with empty balls are
/// dropped for q < 1 and the cell is flagged.
inline ScalingTable correlation_integral(const Trajectory& target, const Trajectory& sample, const RadiusGrid& grid,
                                         std::span<const double> q_list, unsigned threads = 0) {
  detail::check_pair(target, sample, "correlation_integral");
  detail::check_q_list(q_list, "correlation_integral");
  ScalingTable table;
  table.kind = IntegralKind::Gamma;
  table.q_list.assign(q_list.begin(), q_list.end());
  table.grid = grid;
  table.meta = detail::meta_of(target, sample, 0);
  const std::size_t ng = detail::group_count(target.size());
  table.resize(q_list.size(), grid.size(), ng);
  const double n = static_cast<double>(sample.size());
  std::vector<std::size_t> counts(target.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double r = grid[k];
    BallIndex index(sample, r / detail::kCountCellsPerRadius);
    parallel_for(target.size(), threads, [&](std::size_t l) { counts[l] = index.count(target.state(l), r); });
    for (std::size_t i = 0; i < q_list.size(); ++i) {
      const double q = q_list[i];
      if (q == 1.0) continue;
      double sum = 0.0;
      std::size_t used = 0;
      for (std::size_t l = 0; l < counts.size(); ++l) {
        if (counts[l] == 0 && q < 1.0) {
          ++table.dropped[i][k];
          continue;
        }
        const double v = std::pow(static_cast<double>(counts[l]) / n, q - 1.0);
        sum += v;
        ++used;
        const std::size_t g = detail::group_of(l, counts.size(), ng);
        table.group_sum[i][k][g] += v;
        ++table.group_used[i][k][g];
      }
      table.flagged[i][k] = table.dropped[i][k] > 0 || sum <= 0.0;
      table.log_values[i][k] = (used > 0 && sum > 0.0) ? std::log(sum / static_cast<double>(used))
                                                       : -std::numeric_limits<double>::infinity();
    }
  }
  return table;
}

/// Birkhoff average over targets of log mu(B(z, r)), one value per radius;
/// the slope against log r is the information dimension.
struct LogMeasureAverage {
  RadiusGrid grid;
  std::vector<double> mean_log_measure;
  std::vector<std::size_t> dropped;
};

inline LogMeasureAverage log_measure_average(const Trajectory& target, const Trajectory& sample,
                                             const RadiusGrid& grid, unsigned threads = 0) {
  detail::check_pair(target, sample, "log_measure_average");
  LogMeasureAverage out{grid, std::vector<double>(grid.size()), std::vector<std::size_t>(grid.size(), 0)};
  const double n = static_cast<double>(sample.size());
  std::vector<std::size_t> counts(target.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    BallIndex index(sample, grid[k] / detail::kCountCellsPerRadius);
    parallel_for(target.size(), threads, [&](std::size_t l) { counts[l] = index.count(target.state(l), grid[k]); });
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c : counts) {
      if (c == 0) {
        ++out.dropped[k];
        continue;
      }
      sum += std::log(static_cast<double>(c) / n);
      ++used;
    }
    out.mean_log_measure[k] = used ? sum / static_cast<double>(used) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

/// Entry times of an orbit into B(z, r).
struct HitRecord {
  std::vector<double> target;
  double r = 0.0;
  std::vector<std::size_t> hit_times;  // strictly increasing, first = hitting time
  bool truncated = false;
  std::size_t scanned = 0;
};

/// Scans the sample orbit from x_0 and records times n > 0 with x_n in
/// B(z, r), stopping after H hits or at the end of the trajectory.
inline HitRecord hit_times(const Trajectory& sample, std::span<const double> z, double r, std::size_t H) {
  if (H == 0) throw ArgumentError("hit_times: H must be >= 1");
  if (z.size() != sample.dim()) throw ArgumentError("hit_times: dimension mismatch");
  HitRecord rec{std::vector<double>(z.begin(), z.end()), r, {}, false, 0};
  std::size_t j = 1;
  for (; j < sample.size() && rec.hit_times.size() < H; ++j)
    if (detail::within(sample.metric(), sample.raw(j), z.data(), sample.dim(), r))
      rec.hit_times.push_back(j);
  rec.scanned = j;
  rec.truncated = rec.hit_times.size() < H;
  return rec;
}

/// Prefix sums S(g) = sum_{m=1..g} m^s, exact up to a table cap and
/// Euler-Maclaurin beyond it.
class PowerSum {
 public:
  explicit PowerSum(double exponent, std::size_t cap = std::size_t{1} << 16) : s_(exponent), cap_(cap) {
    prefix_.resize(cap_ + 1, 0.0);
    for (std::size_t m = 1; m <= cap_; ++m) prefix_[m] = prefix_[m - 1] + std::pow(static_cast<double>(m), s_);
  }

  double exponent() const noexcept { return s_; }

  double operator()(std::size_t g) const {
    if (g <= cap_) return prefix_[g];
    const double a = static_cast<double>(cap_);
    const double b = static_cast<double>(g);
    auto f = [&](double x) { return std::pow(x, s_); };
    auto f1 = [&](double x) { return s_ * std::pow(x, s_ - 1.0); };
    auto f3 = [&](double x) { return s_ * (s_ - 1.0) * (s_ - 2.0) * std::pow(x, s_ - 3.0); };
    const double integral =
        s_ == -1.0 ? std::log(b / a) : (std::pow(b, s_ + 1.0) - std::pow(a, s_ + 1.0)) / (s_ + 1.0);
    const double tail = integral + 0.5 * (f(b) - f(a)) + (f1(b) - f1(a)) / 12.0 - (f3(b) - f3(a)) / 720.0;
    return prefix_[cap_] + tail;
  }

 private:
  double s_;
  std::size_t cap_;
  std::vector<double> prefix_;
};

/// Hitting double integral: entry (q, r) is log of the target average of
/// (1/N_l) sum_{j<N_l} H_{B(z_l,r)}(x_j)^(1-q), where the sample orbit runs
/// from x_0 until its H-th entry into the ball (N_l = that entry time).
/// With entry times e_1 < ... < e_H the inner sum collapses to
/// sum_k S(e_k - e_{k-1}), S(g) = sum_{m=1..g} m^(1-q).
inline ScalingTable hitting_integral(const Trajectory& target, const Trajectory& sample, const RadiusGrid& grid,
                                     std::span<const double> q_list, std::size_t H, unsigned threads = 0) {
  detail::check_pair(target, sample, "hitting_integral");
  detail::check_q_list(q_list, "hitting_integral");
  if (H == 0) throw ArgumentError("hitting_integral: H must be >= 1");
  ScalingTable table;
  table.kind = IntegralKind::Upsilon;
  table.q_list.assign(q_list.begin(), q_list.end());
  table.grid = grid;
  table.meta = detail::meta_of(target, sample, H);
  const std::size_t ng = detail::group_count(target.size());
  table.resize(q_list.size(), grid.size(), ng);
  std::vector<PowerSum> sums;
  sums.reserve(q_list.size());
  for (double q : q_list) sums.emplace_back(1.0 - q);

  const std::size_t nq = q_list.size();
  std::vector<double> inner(target.size() * nq);
  std::vector<std::uint8_t> status(target.size());  // 0 = dropped, 1 = complete, 2 = truncated
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double r = grid[k];
    BallIndex index(sample, r);
    parallel_for(target.size(), threads, [&](std::size_t l) {
      const auto entries = index.first_in_ball(target.state(l), r, H, 1);
      if (entries.empty()) {
        status[l] = 0;
        return;
      }
      status[l] = entries.size() < H ? 2 : 1;
      const double steps = static_cast<double>(entries.back());
      for (std::size_t i = 0; i < nq; ++i) {
        double acc = 0.0;
        std::size_t prev = 0;
        for (std::size_t e : entries) {
          acc += sums[i](e - prev);
          prev = e;
        }
        inner[l * nq + i] = acc / steps;
      }
    });
    std::size_t dropped = 0;
    for (std::size_t l = 0; l < target.size(); ++l) {
      if (status[l] == 0) ++dropped;
      if (status[l] == 2) ++table.truncated[k];
    }
    const std::size_t used = target.size() - dropped;
    const bool column_flag = 2 * dropped > target.size();
    for (std::size_t i = 0; i < nq; ++i) {
      table.dropped[i][k] = dropped;
      table.flagged[i][k] = column_flag || used == 0;
      if (q_list[i] == 1.0) continue;
      double sum = 0.0;
      for (std::size_t l = 0; l < target.size(); ++l) {
        if (status[l] == 0) continue;
        sum += inner[l * nq + i];
        const std::size_t g = detail::group_of(l, target.size(), ng);
        table.group_sum[i][k][g] += inner[l * nq + i];
        ++table.group_used[i][k][g];
      }
      table.log_values[i][k] =
          used ? std::log(sum / static_cast<double>(used)) : -std::numeric_limits<double>::infinity();
    }
  }
  return table;
}

/// First-return integral: entry (q, r) is log of the average over centers
/// x_i (i < centers) of H_{B(x_i,r)}(x_i)^(1-q), the first return of the
/// center into its own ball. Centers that never return are dropped.
inline ScalingTable first_return_integral(const Trajectory& traj, const RadiusGrid& grid,
                                          std::span<const double> q_list, std::size_t centers = 0,
                                          unsigned threads = 0) {
  if (traj.size() < 2) throw ArgumentError("first_return_integral: trajectory too short");
  detail::check_q_list(q_list, "first_return_integral");
  if (centers == 0) centers = std::max<std::size_t>(1, traj.size() / 4);
  centers = std::min(centers, traj.size() - 1);
  ScalingTable table;
  table.kind = IntegralKind::GammaReturn;
  table.q_list.assign(q_list.begin(), q_list.end());
  table.grid = grid;
  table.meta = {traj.size(), centers, 1, traj.seed(), traj.seed()};
  const std::size_t ng = detail::group_count(centers);
  table.resize(q_list.size(), grid.size(), ng);
  std::vector<std::size_t> ret(centers);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double r = grid[k];
    BallIndex index(traj, r);
    parallel_for(centers, threads, [&](std::size_t i) {
      const auto e = index.first_in_ball(traj.state(i), r, 1, i + 1);
      ret[i] = e.empty() ? 0 : e.front() - i;
    });
    std::size_t dropped = 0;
    for (std::size_t t : ret) dropped += t == 0;
    for (std::size_t qi = 0; qi < q_list.size(); ++qi) {
      table.dropped[qi][k] = dropped;
      table.flagged[qi][k] = 2 * dropped > centers || dropped == centers;
      if (q_list[qi] == 1.0) continue;
      double sum = 0.0;
      for (std::size_t c = 0; c < centers; ++c) {
        if (!ret[c]) continue;
        const double v = std::pow(static_cast<double>(ret[c]), 1.0 - q_list[qi]);
        sum += v;
        const std::size_t g = detail::group_of(c, centers, ng);
        table.group_sum[qi][k][g] += v;
        ++table.group_used[qi][k][g];
      }
      const std::size_t used = centers - dropped;
      table.log_values[qi][k] =
          used ? std::log(sum / static_cast<double>(used)) : -std::numeric_limits<double>::infinity();
    }
  }
  return table;
}

}  // namespace gdim
