#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "kernels.hpp"
#include "panel_data.hpp"

namespace pcox {

// One complete draw of all model blocks. Latent curves carry the total log
// baseline; gamma0/beta0 enter only as the Gaussian-process mean levels.
struct ModelState {
  Eigen::VectorXd gamma;             // observation-process regression, length p
  Eigen::VectorXd beta;              // event-process regression, length p
  double gamma0 = 0.0;               // mean level of g1
  double beta0 = 0.0;                // mean level of g2
  Eigen::MatrixXd z;                 // n x 2, rows (log u^O_i, log u^N_i)
  Eigen::Matrix2d D = Eigen::Matrix2d::Identity();
  LatentCurve g1, g2;
  std::array<double, 2> sigma2 = {1.0, 1.0};
  std::array<double, 2> theta = {1.0, 1.0};
};

struct GammaPrior {
  double shape = 4.0;
  double rate = 4.0;
};

struct PriorConfig {
  double k0 = 3.0;                                    // inverse-Wishart df
  Eigen::Matrix2d V0 = Eigen::Matrix2d::Identity();   // inverse-Wishart scale
  double a0 = 1.0, b0 = 1.0;                          // inverse-gamma for sigma2
  std::array<GammaPrior, 2> theta_prior = {GammaPrior{}, GammaPrior{}};

  void validate() const {
    if (k0 <= 1.0) throw std::invalid_argument("prior k0 must exceed 1");
    if (a0 <= 0.0 || b0 <= 0.0) throw std::invalid_argument("prior a0, b0 must be positive");
    Eigen::LLT<Eigen::Matrix2d> llt(V0);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("prior V0 must be positive-definite");
    for (const auto& gp : theta_prior)
      if (gp.shape <= 0.0 || gp.rate <= 0.0)
        throw std::invalid_argument("theta prior shape/rate must be positive");
  }
};

// Interval (t_{j-1}, t_j] mapped to grid cells [lo, hi] with its count.
// When both endpoints land in one cell the interval collapses to that cell
// so a positive count never meets a zero-length exposure.
struct IntervalCells {
  int lo = 1, hi = 0;
  long y = 0;
};

struct SubjectFrame {
  int m = 0;             // number of visits
  long n_last = 0;       // final cumulative count
  int censor_cell = 0;   // ceil(C_i * L) after rescaling
  int last_cell = 0;     // cell of the last visit; 0 when no visits
  std::vector<int> visit_cells;
  std::vector<IntervalCells> intervals;
};

// Dataset rescaled to (0,1] and discretized against a grid, computed once
// per fit. All conditional evaluations work from this cache.
class ModelFrame {
 public:
  ModelFrame(const PanelDataset& data, const GridSpec& grid)
      : grid_(grid), t_max_(data.subjects.empty() ? 1.0 : data.time_horizon()) {
    const int n = static_cast<int>(data.size());
    const int p = static_cast<int>(data.n_covariates());
    x_.resize(n, p);
    subjects_.resize(n);
    f1_ = Eigen::VectorXd::Zero(grid_.L);
    for (int i = 0; i < n; ++i) {
      const Subject& s = data.subjects[i];
      for (int k = 0; k < p; ++k) x_(i, k) = s.covariates[k];
      SubjectFrame& f = subjects_[i];
      f.m = static_cast<int>(s.n_visits());
      f.n_last = s.final_count();
      f.censor_cell = cell_index(s.censor_time / t_max_, grid_);
      double prev_t = 0.0;
      long prev_n = 0;
      for (int j = 0; j < f.m; ++j) {
        const double tj = s.obs_times[j] / t_max_;
        const int cj = cell_index(tj, grid_);
        f.visit_cells.push_back(cj);
        f1_[cj - 1] += 1.0;
        auto [lo, hi] = interval_cells(prev_t / t_max_, tj, grid_);
        if (lo > hi) lo = hi = cj;  // same-cell visit: floor to one cell
        f.intervals.push_back({lo, hi, s.cum_counts[j] - prev_n});
        prev_t = s.obs_times[j];
        prev_n = s.cum_counts[j];
      }
      f.last_cell = f.m > 0 ? f.visit_cells.back() : 0;
    }
  }

  const GridSpec& grid() const { return grid_; }
  double t_max() const { return t_max_; }
  int n() const { return static_cast<int>(subjects_.size()); }
  int p() const { return static_cast<int>(x_.cols()); }
  const Eigen::MatrixXd& covariates() const { return x_; }
  const SubjectFrame& subject(int i) const { return subjects_[i]; }
  const Eigen::VectorXd& visit_cell_counts() const { return f1_; }

  // (1/L) sum over cells 1..k of exp(g), for k = censor or last-visit cell.
  Eigen::VectorXd integrals_to(const Eigen::VectorXd& prefix, bool to_censor) const {
    Eigen::VectorXd out(n());
    for (int i = 0; i < n(); ++i) {
      const int c = to_censor ? subjects_[i].censor_cell : subjects_[i].last_cell;
      out[i] = prefix[c];
    }
    return out;
  }

 private:
  GridSpec grid_;
  double t_max_;
  Eigen::MatrixXd x_;
  std::vector<SubjectFrame> subjects_;
  Eigen::VectorXd f1_;  // visits per cell, summed over subjects
};

inline constexpr double neg_inf() { return -std::numeric_limits<double>::infinity(); }

namespace detail {
// exp with the exponent clamped so extreme sampler excursions yield huge
// finite penalties instead of inf/NaN in hull arithmetic.
inline double exp_clamped(double x) { return std::exp(x < 700.0 ? x : 700.0); }
}  // namespace detail

// log L1: the observation-time likelihood under the grid approximation.
inline double loglik_obs(const ModelState& state, const ModelFrame& frame) {
  const Eigen::VectorXd p1 = exp_prefix(state.g1, frame.grid());
  double ll = 0.0;
  for (int i = 0; i < frame.n(); ++i) {
    const SubjectFrame& f = frame.subject(i);
    const double lin = frame.covariates().row(i).dot(state.gamma) + state.z(i, 0);
    ll -= detail::exp_clamped(lin) * p1[f.censor_cell];
    for (int c : f.visit_cells) ll += state.g1.values[c - 1] + lin;
  }
  return ll;
}

// log L2: Poisson increments given the visit pattern.
inline double loglik_events(const ModelState& state, const ModelFrame& frame) {
  const Eigen::VectorXd p2 = exp_prefix(state.g2, frame.grid());
  double ll = 0.0;
  for (int i = 0; i < frame.n(); ++i) {
    const SubjectFrame& f = frame.subject(i);
    const double lin = frame.covariates().row(i).dot(state.beta) + state.z(i, 1);
    const double v = detail::exp_clamped(lin);
    for (const IntervalCells& iv : f.intervals) {
      const double integral = p2[iv.hi] - p2[iv.lo - 1];
      const double lambda = v * integral;
      if (lambda <= 0.0) {
        if (iv.y > 0) return neg_inf();
        continue;
      }
      ll += iv.y * std::log(lambda) - lambda - std::lgamma(static_cast<double>(iv.y) + 1.0);
    }
  }
  return ll;
}

enum class RegressionSide { observation, event };

// Unnormalized full conditional of gamma (observation side) or beta (event
// side) at `coef`, holding everything else in `state` fixed.
inline double cond_regression_logpdf(RegressionSide side, const Eigen::VectorXd& coef,
                                     const ModelState& state, const ModelFrame& frame) {
  const bool obs = side == RegressionSide::observation;
  const Eigen::VectorXd prefix = exp_prefix(obs ? state.g1 : state.g2, frame.grid());
  double lp = 0.0;
  for (int i = 0; i < frame.n(); ++i) {
    const SubjectFrame& f = frame.subject(i);
    const double xi_c = frame.covariates().row(i).dot(coef);
    const double count = obs ? static_cast<double>(f.m) : static_cast<double>(f.n_last);
    const double u = detail::exp_clamped(state.z(i, obs ? 0 : 1));
    const double integral = prefix[obs ? f.censor_cell : f.last_cell];
    lp += count * xi_c - detail::exp_clamped(xi_c) * u * integral;
  }
  return lp;
}

struct NormalMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Conjugate normal full conditional of a curve's mean level, with Omega the
// precision of the discretized GP; both actions go through Cholesky solves.
inline NormalMoments intercept_posterior(const LatentCurve& curve, const GramFactor& precision) {
  if (curve.size() != precision.size())
    throw std::invalid_argument("intercept_posterior: curve/factor size mismatch");
  const Eigen::VectorXd s1 = precision.solve(Eigen::VectorXd::Ones(curve.size()));
  const double denom = s1.sum();            // 1' Omega 1
  const double num = s1.dot(curve.values);  // 1' Omega g
  return {num / denom, 1.0 / denom};
}

// Unnormalized full conditional of the frailty vector z_i = (z1, z2).
inline double cond_z_logpdf(int i, const Eigen::Vector2d& z_i, const ModelState& state,
                            const ModelFrame& frame, double a_i, double b_i) {
  const SubjectFrame& f = frame.subject(i);
  const double det = state.D(0, 0) * state.D(1, 1) - state.D(0, 1) * state.D(1, 0);
  const double q = (state.D(1, 1) * z_i[0] * z_i[0] - 2.0 * state.D(0, 1) * z_i[0] * z_i[1] +
                    state.D(0, 0) * z_i[1] * z_i[1]) /
                   det;
  const double xg = frame.covariates().row(i).dot(state.gamma);
  const double xb = frame.covariates().row(i).dot(state.beta);
  return -0.5 * q + z_i[0] * f.m + z_i[1] * f.n_last -
         detail::exp_clamped(z_i[0] + xg) * a_i - detail::exp_clamped(z_i[1] + xb) * b_i;
}

inline double cond_z_logpdf(int i, const Eigen::Vector2d& z_i, const ModelState& state,
                            const ModelFrame& frame) {
  const double a_i = exp_prefix(state.g1, frame.grid())[frame.subject(i).censor_cell];
  const double b_i = exp_prefix(state.g2, frame.grid())[frame.subject(i).last_cell];
  return cond_z_logpdf(i, z_i, state, frame, a_i, b_i);
}

struct CurveConditional {
  double logpdf = 0.0;
  Eigen::VectorXd grad;
};

// Log density (up to a constant) and analytic gradient of the full
// conditional of one latent curve. `gram` factors the curve's covariance
// sigma2 * R(theta); the precision acts through its solves.
inline CurveConditional cond_g_logpdf_grad(CurveKind which, const LatentCurve& g,
                                           const ModelState& state, const ModelFrame& frame,
                                           const GramFactor& gram) {
  const int L = frame.grid().L;
  if (g.size() != L || gram.size() != L)
    throw std::invalid_argument("cond_g_logpdf_grad: dimension mismatch");
  const bool obs = which == CurveKind::observation;

  const Eigen::VectorXd diff = g.values.array() - g.mean_level;
  const Eigen::VectorXd omega_diff = gram.solve(diff);
  double lp = -0.5 * diff.dot(omega_diff);
  Eigen::VectorXd grad = -omega_diff;

  Eigen::VectorXd expg(L);
  for (int l = 0; l < L; ++l) expg[l] = std::exp(g.values[l]);

  // exposure weights bucketed by terminal cell, then suffix-summed
  Eigen::VectorXd q = Eigen::VectorXd::Zero(L + 1);
  for (int i = 0; i < frame.n(); ++i) {
    const SubjectFrame& f = frame.subject(i);
    const int c = obs ? f.censor_cell : f.last_cell;
    if (c < 1) continue;
    const double lin = obs ? frame.covariates().row(i).dot(state.gamma) + state.z(i, 0)
                           : frame.covariates().row(i).dot(state.beta) + state.z(i, 1);
    q[c] += detail::exp_clamped(lin);
  }
  double tail = 0.0;
  for (int l = L; l >= 1; --l) {
    tail += q[l];
    q[l] = -tail;  // q_l = -sum of weights of subjects still under observation in cell l
  }

  const double inv_l = 1.0 / L;
  for (int l = 0; l < L; ++l) {
    const double e_l = expg[l] * inv_l;
    lp += q[l + 1] * e_l;
    grad[l] += q[l + 1] * e_l;
  }

  if (obs) {
    const Eigen::VectorXd& f1 = frame.visit_cell_counts();
    lp += f1.dot(g.values);
    grad += f1;
  } else {
    // y_ij * log of the interval sum, accumulated as a ratio over cell ranges
    Eigen::VectorXd pe(L + 1);
    pe[0] = 0.0;
    for (int l = 0; l < L; ++l) pe[l + 1] = pe[l] + expg[l];
    Eigen::VectorXd ratio = Eigen::VectorXd::Zero(L + 1);
    for (int i = 0; i < frame.n(); ++i) {
      for (const IntervalCells& iv : frame.subject(i).intervals) {
        if (iv.y == 0) continue;
        const double denom = pe[iv.hi] - pe[iv.lo - 1];
        lp += iv.y * std::log(denom * inv_l);
        const double w = iv.y / denom;
        ratio[iv.lo - 1] += w;
        ratio[iv.hi] -= w;
      }
    }
    double acc = 0.0;
    for (int l = 0; l < L; ++l) {
      acc += ratio[l];
      grad[l] += acc * expg[l];
    }
  }
  return {lp, std::move(grad)};
}

struct IntensityMoments {
  double e_mu = 0.0;
  double e_lambda = 0.0;
  double cov_mu = 0.0;
  double cov_lambda = 0.0;
  double cross_cov = 0.0;
};

// Closed-form moments of the subject-specific intensities at lag h, given
// the regression blocks and the subject's realized frailties.
inline IntensityMoments intensity_moments(const KernelConfig& cfg1, const KernelConfig& cfg2,
                                          const ModelState& state, const Eigen::VectorXd& x,
                                          double h, int i) {
  IntensityMoments m;
  const double u1 = std::exp(state.z(i, 0));
  const double u2 = std::exp(state.z(i, 1));
  m.e_mu = std::exp(state.gamma0 + x.dot(state.gamma) + 0.5 * cfg1.sigma2) * u1;
  m.e_lambda = std::exp(state.beta0 + x.dot(state.beta) + 0.5 * cfg2.sigma2) * u2;
  const double c1 = cfg1.sigma2 * (h == 0.0 ? 1.0 : matern_corr(h, cfg1.nu, cfg1.theta));
  const double c2 = cfg2.sigma2 * (h == 0.0 ? 1.0 : matern_corr(h, cfg2.nu, cfg2.theta));
  m.cov_mu = m.e_mu * m.e_mu * (std::exp(c1) - 1.0);
  m.cov_lambda = m.e_lambda * m.e_lambda * (std::exp(c2) - 1.0);
  m.cross_cov = m.e_mu * m.e_lambda * (std::exp(state.D(0, 1)) - 1.0);
  return m;
}

// Convenience overloads building a throwaway frame; fine at test scale.
inline double loglik_obs(const ModelState& s, const PanelDataset& d, const GridSpec& g) {
  return loglik_obs(s, ModelFrame(d, g));
}
inline double loglik_events(const ModelState& s, const PanelDataset& d, const GridSpec& g) {
  return loglik_events(s, ModelFrame(d, g));
}

}  // namespace pcox
