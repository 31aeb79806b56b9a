#pragma once

// Uniform-grid spatial hash over the states of a trajectory. Cell lists hold
// state indices in increasing order, which lets hitting-time queries pull
// the first k entries into a ball with a k-way merge instead of a scan.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <vector>

#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"

namespace gdim {

class BallIndex {
 public:
  static constexpr std::size_t kMaxGridDim = 3;
  static constexpr std::size_t kMaxCells = std::size_t{1} << 24;

  /// Builds the grid with cells no smaller than cell_side. Queries with any
  /// radius are answered; radii close to cell_side are the cheap case.
  BallIndex(const Trajectory& traj, double cell_side) : traj_(&traj) {
    if (traj.empty()) throw ArgumentError("BallIndex: empty trajectory");
    if (!(cell_side > 0.0)) throw ArgumentError("BallIndex: cell side must be > 0");
    if (traj.size() > std::numeric_limits<std::uint32_t>::max())
      throw ArgumentError("BallIndex: trajectory too long for 32-bit indices");
    dim_ = traj.dim();
    metric_ = traj.metric();
    if (dim_ > kMaxGridDim) return;  // brute-force mode
    build(cell_side);
  }

  const Trajectory& trajectory() const noexcept { return *traj_; }

  /// Number of states with d(x_j, z) < r.
  std::size_t count(std::span<const double> z, double r) const {
    check_query(z);
    if (grid_.empty()) {
      std::size_t c = 0;
      for_each(z, r, [&](std::size_t) { ++c; });
      return c;
    }
    // Cells lying wholly inside the ball are counted without a scan, cells
    // wholly outside are skipped.
    struct AxisCell {
      std::size_t cell;
      double near2;
      double far2;
    };
    std::array<std::vector<AxisCell>, kMaxGridDim> axes;
    const double* zp = z.data();
    for (std::size_t k = 0; k < dim_; ++k) {
      const long long n = static_cast<long long>(cells_[k]);
      auto& list = axes[k];
      long long lo = 0, hi = n - 1;
      double zk = zp[k];
      bool wrap = false;
      if (metric_ == Metric::TorusEuclidean) {
        const long long span = static_cast<long long>(std::ceil(r / width_[k]));
        if (2 * span + 1 >= n) {
          for (long long c = 0; c < n; ++c)
            list.push_back({static_cast<std::size_t>(c), 0.0, std::numeric_limits<double>::infinity()});
          continue;
        }
        zk -= std::floor(zk);
        const long long c0 = axis_coord(zk, k);
        lo = c0 - span;
        hi = c0 + span;
        wrap = true;
      } else {
        lo = std::max(0LL, axis_coord(zk - r, k));
        hi = std::min(n - 1, axis_coord(zk + r, k));
      }
      for (long long c = lo; c <= hi; ++c) {
        double a = origin_[k] + static_cast<double>(c) * width_[k] - zk;
        double b = a + width_[k];
        if (!wrap && (c == 0 || c == n - 1)) {
          // Edge cells of a clamped grid may hold points beyond the box.
          if (c == 0) a = -std::numeric_limits<double>::infinity();
          if (c == n - 1) b = std::numeric_limits<double>::infinity();
        }
        const double near = (a > 0.0) ? a : (b < 0.0 ? -b : 0.0);
        const double far = std::max(std::abs(a), std::abs(b));
        const std::size_t idx = static_cast<std::size_t>(wrap ? ((c % n) + n) % n : c);
        list.push_back({idx, near * near, far * far});
      }
      if (list.empty()) return 0;
    }
    const double r2 = r * r;
    const double* pts = coords_.data();
    std::size_t total = 0;
    std::array<std::size_t, kMaxGridDim> pos{};
    for (;;) {
      std::size_t idx = 0;
      double near2 = 0.0, far2 = 0.0;
      for (std::size_t k = dim_; k-- > 0;) {
        const AxisCell& ac = axes[k][pos[k]];
        idx = idx * cells_[k] + ac.cell;
        near2 += ac.near2;
        far2 += ac.far2;
      }
      // Small margins keep the shortcuts on the safe side of rounding.
      if (far2 < r2 * (1.0 - 1e-9)) {
        total += start_[idx + 1] - start_[idx];
      } else if (near2 < r2 * (1.0 + 1e-9)) {
        for (std::uint32_t p = start_[idx]; p < start_[idx + 1]; ++p)
          if (inside(pts + std::size_t{p} * dim_, zp, r)) ++total;
      }
      std::size_t k = 0;
      while (k < dim_ && ++pos[k] == axes[k].size()) pos[k++] = 0;
      if (k == dim_) break;
    }
    return total;
  }

  /// Calls fn(j) for every state within r of z (cell order, not index order).
  template <typename Fn>
  void for_each(std::span<const double> z, double r, Fn&& fn) const {
    check_query(z);
    const double* zp = z.data();
    if (grid_.empty()) {
      for (std::size_t j = 0; j < traj_->size(); ++j)
        if (inside(traj_->raw(j), zp, r)) fn(j);
      return;
    }
    const double* pts = coords_.data();
    if (metric_ == Metric::TorusEuclidean && dim_ == 2) {
      // Hot path for the cat map.
      const double r2 = r * r;
      visit_cells(zp, r, [&](std::size_t cell) {
        for (std::uint32_t p = start_[cell]; p < start_[cell + 1]; ++p) {
          const double dx = detail::wrap_unit(pts[2 * p] - zp[0]);
          const double dy = detail::wrap_unit(pts[2 * p + 1] - zp[1]);
          if (dx * dx + dy * dy < r2) fn(grid_[p]);
        }
      });
      return;
    }
    visit_cells(zp, r, [&](std::size_t cell) {
      for (std::uint32_t p = start_[cell]; p < start_[cell + 1]; ++p)
        if (inside(pts + p * dim_, zp, r)) fn(grid_[p]);
    });
  }

  /// Sorted indices of all states within r of z.
  std::vector<std::size_t> indices(std::span<const double> z, double r) const {
    std::vector<std::size_t> out;
    for_each(z, r, [&](std::size_t j) { out.push_back(j); });
    std::sort(out.begin(), out.end());
    return out;
  }

  /// The k smallest indices j >= min_index with d(x_j, z) < r, ascending.
  std::vector<std::size_t> first_in_ball(std::span<const double> z, double r, std::size_t k,
                                         std::size_t min_index) const {
    check_query(z);
    std::vector<std::size_t> out;
    if (k == 0) return out;
    const double* zp = z.data();
    if (grid_.empty()) {
      for (std::size_t j = min_index; j < traj_->size() && out.size() < k; ++j)
        if (inside(traj_->raw(j), zp, r)) out.push_back(j);
      return out;
    }
    struct Cursor {
      std::uint32_t pos;
      std::uint32_t end;
    };
    auto later = [&](const Cursor& a, const Cursor& b) { return grid_[a.pos] > grid_[b.pos]; };
    std::vector<Cursor> heap;
    visit_cells(zp, r, [&](std::size_t cell) {
      const auto first = grid_.begin() + start_[cell];
      const auto last = grid_.begin() + start_[cell + 1];
      const auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(std::min<std::size_t>(
                                                         min_index, std::numeric_limits<std::uint32_t>::max())));
      if (it != last)
        heap.push_back({static_cast<std::uint32_t>(it - grid_.begin()), static_cast<std::uint32_t>(last - grid_.begin())});
    });
    std::make_heap(heap.begin(), heap.end(), later);
    while (!heap.empty() && out.size() < k) {
      std::pop_heap(heap.begin(), heap.end(), later);
      Cursor& c = heap.back();
      if (inside(coords_.data() + std::size_t{c.pos} * dim_, zp, r)) out.push_back(grid_[c.pos]);
      if (++c.pos < c.end)
        std::push_heap(heap.begin(), heap.end(), later);
      else
        heap.pop_back();
    }
    return out;
  }

 private:
  bool inside(const double* x, const double* z, double r) const {
    return detail::within(metric_, x, z, dim_, r);
  }

  void check_query(std::span<const double> z) const {
    if (z.size() != dim_) throw ArgumentError("BallIndex: query dimension mismatch");
  }

  void build(double side) {
    const std::size_t n = traj_->size();
    origin_.fill(0.0);
    cells_.fill(1);
    width_.fill(1.0);
    if (metric_ == Metric::TorusEuclidean) {
      for (std::size_t k = 0; k < dim_; ++k) {
        cells_[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(1.0 / side)));
        width_[k] = 1.0 / static_cast<double>(cells_[k]);
      }
    } else {
      std::array<double, kMaxGridDim> lo{}, hi{};
      for (std::size_t k = 0; k < dim_; ++k) {
        lo[k] = std::numeric_limits<double>::infinity();
        hi[k] = -std::numeric_limits<double>::infinity();
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double* x = traj_->raw(j);
        for (std::size_t k = 0; k < dim_; ++k) {
          lo[k] = std::min(lo[k], x[k]);
          hi[k] = std::max(hi[k], x[k]);
        }
      }
      // Grow the cell side until the grid fits the cell budget.
      for (;;) {
        std::size_t total = 1;
        for (std::size_t k = 0; k < dim_; ++k) {
          const double extent = hi[k] - lo[k];
          cells_[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(extent / side)));
          width_[k] = side;
          origin_[k] = lo[k];
          total *= cells_[k];
        }
        if (total <= kMaxCells) break;
        side *= 1.5;
      }
    }
    std::size_t total = 1;
    for (std::size_t k = 0; k < dim_; ++k) total *= cells_[k];
    start_.assign(total + 1, 0);
    std::vector<std::uint32_t> cell_of(n);
    for (std::size_t j = 0; j < n; ++j) {
      cell_of[j] = static_cast<std::uint32_t>(cell_index(traj_->raw(j)));
      ++start_[cell_of[j] + 1];
    }
    for (std::size_t c = 0; c < total; ++c) start_[c + 1] += start_[c];
    grid_.resize(n);
    std::vector<std::uint32_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t j = 0; j < n; ++j) grid_[fill[cell_of[j]]++] = static_cast<std::uint32_t>(j);
    // Coordinates copied in cell order so that scans stay sequential.
    coords_.resize(n * dim_);
    for (std::size_t p = 0; p < n; ++p) std::copy_n(traj_->raw(grid_[p]), dim_, coords_.data() + p * dim_);
  }

  long long axis_coord(double x, std::size_t k) const {
    return static_cast<long long>(std::floor((x - origin_[k]) / width_[k]));
  }

  std::size_t cell_index(const double* x) const {
    std::size_t idx = 0;
    for (std::size_t k = dim_; k-- > 0;) {
      long long c = axis_coord(x[k], k);
      const long long n = static_cast<long long>(cells_[k]);
      if (metric_ == Metric::TorusEuclidean)
        c = ((c % n) + n) % n;
      else
        c = std::clamp(c, 0LL, n - 1);
      idx = idx * cells_[k] + static_cast<std::size_t>(c);
    }
    return idx;
  }

  template <typename Fn>
  void visit_cells(const double* z, double r, Fn&& fn) const {
    std::array<std::vector<std::size_t>, kMaxGridDim> axis_cells;
    for (std::size_t k = 0; k < dim_; ++k) {
      const long long n = static_cast<long long>(cells_[k]);
      auto& list = axis_cells[k];
      if (metric_ == Metric::TorusEuclidean) {
        const long long span = static_cast<long long>(std::ceil(r / width_[k]));
        if (2 * span + 1 >= n) {
          for (long long c = 0; c < n; ++c) list.push_back(static_cast<std::size_t>(c));
        } else {
          const long long c0 = axis_coord(z[k] - std::floor(z[k]), k);
          for (long long c = c0 - span; c <= c0 + span; ++c) list.push_back(static_cast<std::size_t>(((c % n) + n) % n));
        }
      } else {
        const long long lo = std::max(0LL, axis_coord(z[k] - r, k));
        const long long hi = std::min(n - 1, axis_coord(z[k] + r, k));
        for (long long c = lo; c <= hi; ++c) list.push_back(static_cast<std::size_t>(c));
      }
      if (list.empty()) return;
    }
    // Odometer over the per-axis candidate lists.
    std::array<std::size_t, kMaxGridDim> pos{};
    for (;;) {
      std::size_t idx = 0;
      for (std::size_t k = dim_; k-- > 0;) idx = idx * cells_[k] + axis_cells[k][pos[k]];
      fn(idx);
      std::size_t k = 0;
      while (k < dim_ && ++pos[k] == axis_cells[k].size()) pos[k++] = 0;
      if (k == dim_) break;
    }
  }

  const Trajectory* traj_;
  std::size_t dim_ = 0;
  Metric metric_ = Metric::Euclidean;
  std::array<double, kMaxGridDim> origin_{};
  std::array<double, kMaxGridDim> width_{};
  std::array<std::size_t, kMaxGridDim> cells_{};
  std::vector<std::uint32_t> start_;
  std::vector<std::uint32_t> grid_;
  std::vector<double> coords_;
};

}  // namespace gdim
