#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace pcox {

// Uniform grid of L cells partitioning the rescaled time axis (0,1].
// Cell l (1-based) covers ((l-1)/L, l/L] with center s_l = (l-0.5)/L.
struct GridSpec {
  int L = 100;

  explicit GridSpec(int cells = 100) : L(cells) {
    if (L < 2) throw std::invalid_argument("grid must have at least 2 cells");
  }

  double cell_length() const { return 1.0 / L; }

  std::vector<double> cell_centers() const {
    std::vector<double> s(L);
    for (int l = 0; l < L; ++l) s[l] = (l + 0.5) / L;
    return s;
  }
};

enum class CurveKind { observation, event };

// Log-intensity evaluated at grid cells. The values store the total log
// baseline; mean_level is the Gaussian-process mean it is shrunk toward.
struct LatentCurve {
  Eigen::VectorXd values;
  double mean_level = 0.0;
  CurveKind which = CurveKind::observation;

  int size() const { return static_cast<int>(values.size()); }
};

// 1-based cell index of a rescaled time t in (0,1].
inline int cell_index(double t, const GridSpec& grid) {
  if (!(t > 0.0) || t > 1.0) throw std::domain_error("cell_index: time outside (0,1]");
  int c = static_cast<int>(std::ceil(t * grid.L));
  if (c < 1) c = 1;
  if (c > grid.L) c = grid.L;
  return c;
}

// Prefix sums P[k] = (1/L) * sum_{l<=k} exp(g_l), P[0] = 0. Interval
// integrals are differences of these, which makes partitions telescope
// exactly.
inline Eigen::VectorXd exp_prefix(const LatentCurve& g, const GridSpec& grid) {
  if (g.size() != grid.L) throw std::invalid_argument("curve length does not match grid");
  Eigen::VectorXd p(grid.L + 1);
  p[0] = 0.0;
  const double inv_l = 1.0 / grid.L;
  for (int l = 0; l < grid.L; ++l) p[l + 1] = p[l] + std::exp(g.values[l]) * inv_l;
  return p;
}

// Half-open cell attribution: the cells of (a, b] are {ceil(aL)+1, ..., ceil(bL)},
// empty when both endpoints fall in the same cell.
inline std::pair<int, int> interval_cells(double a, double b, const GridSpec& grid) {
  const int lo = (a <= 0.0) ? 1 : static_cast<int>(std::ceil(a * grid.L)) + 1;
  const int hi = (b <= 0.0) ? 0 : cell_index(b, grid);
  return {lo, hi};
}

// Piecewise-constant approximation of the integral of exp(g) over (a, b].
inline double integral_exp(const LatentCurve& g, const GridSpec& grid, double a, double b) {
  if (a < 0.0 || b < a || b > 1.0) throw std::domain_error("integral_exp: need 0 <= a <= b <= 1");
  if (a == b) return 0.0;
  const Eigen::VectorXd p = exp_prefix(g, grid);
  auto [lo, hi] = interval_cells(a, b, grid);
  if (lo > hi) return 0.0;
  return p[hi] - p[lo - 1];
}

// Integral of exp(g) from 0 to each cell's right edge; `rescaled` divides by
// the final entry so the curve ends at one.
inline Eigen::VectorXd cumulative_curve(const LatentCurve& g, const GridSpec& grid,
                                        bool rescaled = false) {
  Eigen::VectorXd p = exp_prefix(g, grid).tail(grid.L);
  if (rescaled) {
    const double total = p[grid.L - 1];
    if (total > 0.0) p /= total;
  }
  return p;
}

}  // namespace pcox
