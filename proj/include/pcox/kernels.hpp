#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace pcox {

// Matern correlation family restricted to the half-integer shapes with
// closed forms: nu in {0.5, 1.5, 2.5}.
struct KernelConfig {
  double nu = 2.5;
  double theta = 1.0;   // length-scale on the rescaled [0,1] time axis
  double sigma2 = 1.0;  // marginal variance

  void validate() const {
    if (theta <= 0.0) throw std::domain_error("kernel length-scale theta must be positive");
    if (sigma2 <= 0.0) throw std::domain_error("kernel variance sigma2 must be positive");
    if (nu != 0.5 && nu != 1.5 && nu != 2.5)
      throw std::domain_error("unsupported Matern shape nu (use 0.5, 1.5 or 2.5)");
  }
};

inline double matern_corr(double h, double nu, double theta) {
  if (theta <= 0.0) throw std::domain_error("kernel length-scale theta must be positive");
  if (h < 0.0) h = -h;
  const double u = h / theta;
  if (nu == 0.5) return std::exp(-u);
  if (nu == 1.5) return (1.0 + u) * std::exp(-u);
  if (nu == 2.5) return (1.0 + u + u * u / 3.0) * std::exp(-u);
  throw std::domain_error("unsupported Matern shape nu (use 0.5, 1.5 or 2.5)");
}

// Dense covariance Sigma = sigma2 * R on a set of grid points, factored once.
// All precision (inverse-covariance) actions go through the stored Cholesky
// factor; the inverse itself is never formed.
class GramFactor {
 public:
  GramFactor() = default;

  GramFactor(Eigen::MatrixXd cov, Eigen::MatrixXd chol_lower, double log_det, double jitter)
      : cov_(std::move(cov)), chol_(std::move(chol_lower)), log_det_(log_det), jitter_(jitter) {}

  int size() const { return static_cast<int>(cov_.rows()); }
  const Eigen::MatrixXd& covariance() const { return cov_; }
  const Eigen::MatrixXd& cholesky() const { return chol_; }
  double log_det() const { return log_det_; }
  double jitter() const { return jitter_; }

  // Sigma^{-1} v via two triangular solves.
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const {
    Eigen::VectorXd y = chol_.triangularView<Eigen::Lower>().solve(v);
    return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  // v' Sigma^{-1} v = || L^{-1} v ||^2.
  double quad_form(const Eigen::VectorXd& v) const {
    return chol_.triangularView<Eigen::Lower>().solve(v).squaredNorm();
  }

  // L z: a draw from N(0, Sigma) given z ~ N(0, I).
  Eigen::VectorXd correlated(const Eigen::VectorXd& z) const { return chol_ * z; }

  // L^{-T} z: a draw from N(0, Sigma^{-1}) given z ~ N(0, I).
  Eigen::VectorXd precision_draw(const Eigen::VectorXd& z) const {
    return chol_.transpose().triangularView<Eigen::Upper>().solve(z);
  }

  // Same factor rescaled to covariance c * Sigma.
  GramFactor scaled(double c) const {
    if (c <= 0.0) throw std::domain_error("GramFactor::scaled: factor must be positive");
    const double s = std::sqrt(c);
    return GramFactor(cov_ * c, chol_ * s, log_det_ + size() * std::log(c), jitter_ * c);
  }

 private:
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;  // lower triangular, LL' = Sigma + jitter I
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

// Builds Sigma_kl = sigma2 * r(|s_k - s_l|) and its Cholesky factor.
// Jitter starts at `jitter` (or 1e-10*sigma2 when 0) and escalates by
// factors of ten up to 1e-4*sigma2; fine grids with nu=2.5 need this.
inline GramFactor build_gram(const std::vector<double>& grid_points, const KernelConfig& cfg,
                             double jitter = 0.0) {
  cfg.validate();
  if (jitter < 0.0) throw std::domain_error("build_gram: jitter must be nonnegative");
  const int n = static_cast<int>(grid_points.size());
  if (n == 0) throw std::invalid_argument("build_gram: empty grid");
  for (int k = 0; k < n; ++k)
    for (int l = k + 1; l < n; ++l)
      if (grid_points[k] == grid_points[l])
        throw std::invalid_argument("build_gram: grid points must be distinct");

  Eigen::MatrixXd cov(n, n);
  for (int k = 0; k < n; ++k) {
    cov(k, k) = cfg.sigma2;
    for (int l = 0; l < k; ++l) {
      const double v = cfg.sigma2 * matern_corr(grid_points[k] - grid_points[l], cfg.nu, cfg.theta);
      cov(k, l) = v;
      cov(l, k) = v;
    }
  }

  double j = jitter;
  const double j_max = 1e-4 * cfg.sigma2;
  for (;;) {
    Eigen::MatrixXd m = cov;
    if (j > 0.0) m.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd l = llt.matrixL();
      const double log_det = 2.0 * l.diagonal().array().log().sum();
      if (std::isfinite(log_det)) return GramFactor(std::move(cov), std::move(l), log_det, j);
    }
    if (j >= j_max) throw std::runtime_error("kernel matrix numerically singular");
    j = (j == 0.0) ? 1e-10 * cfg.sigma2 : 10.0 * j;
    if (j > j_max) j = j_max;
  }
}

}  // namespace pcox
