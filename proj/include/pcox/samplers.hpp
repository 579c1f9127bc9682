#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kernels.hpp"
#include "rng.hpp"

namespace pcox {

struct Target1D {
  std::function<double(double)> logpdf;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool declared_logconcave = true;
};

namespace detail {

inline double lerp_line(double x0, double y0, double m, double x) { return y0 + m * (x - x0); }

// Piecewise-linear upper hull of a log density built from secants, as in
// derivative-free adaptive rejection sampling. For a log-concave h the
// extension of a neighboring chord dominates h on each interval; the hull
// takes the lower of the two available extensions.
class SecantHull {
 public:
  SecantHull(std::vector<double> xs, std::vector<double> hs, double lo, double hi)
      : x_(std::move(xs)), h_(std::move(hs)), lo_(lo), hi_(hi) {
    rebuild();
  }

  std::size_t n_points() const { return x_.size(); }

  void insert(double x, double h) {
    auto it = std::lower_bound(x_.begin(), x_.end(), x);
    const std::size_t idx = static_cast<std::size_t>(it - x_.begin());
    if (idx < x_.size() && x_[idx] == x) return;
    if (x_.size() >= 120) return;  // hull is tight enough; stays a valid envelope
    x_.insert(it, x);
    h_.insert(h_.begin() + idx, h);
    rebuild();
  }

  double envelope(double x) const {
    for (const Seg& s : segs_)
      if (x >= s.a && x <= s.b) return lerp_line(s.xr, s.yr, s.m, x);
    // numerically outside due to rounding: clamp to the nearest end segment
    return x < segs_.front().a ? lerp_line(segs_.front().xr, segs_.front().yr, segs_.front().m, x)
                               : lerp_line(segs_.back().xr, segs_.back().yr, segs_.back().m, x);
  }

  // Chord lower bound; -inf outside the abscissa range.
  double squeeze(double x) const {
    if (x < x_.front() || x > x_.back()) return -std::numeric_limits<double>::infinity();
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t i = static_cast<std::size_t>(it - x_.begin());
    if (i == 0) i = 1;
    if (i >= x_.size()) i = x_.size() - 1;
    const double m = (h_[i] - h_[i - 1]) / (x_[i] - x_[i - 1]);
    return lerp_line(x_[i - 1], h_[i - 1], m, x);
  }

  double sample(Rng& rng) const {
    double r = rng.uniform() * total_mass_;
    const Seg* chosen = nullptr;
    for (const Seg& s : segs_) {
      if (s.mass <= 0.0) continue;
      if (r <= s.mass) {
        chosen = &s;
        break;
      }
      r -= s.mass;
    }
    if (chosen == nullptr) {
      for (auto it = segs_.rbegin(); it != segs_.rend(); ++it)
        if (it->mass > 0.0) {
          chosen = &*it;
          break;
        }
      if (chosen == nullptr) return 0.5 * (x_.front() + x_.back());
      r = 0.5 * chosen->mass;
    }
    const double frac = std::min(std::max(r / chosen->mass, 1e-16), 1.0 - 1e-16);
    return sample_segment(*chosen, frac);
  }

  bool valid() const { return total_mass_ > 0.0 && std::isfinite(total_mass_); }

 private:
  struct Seg {
    double a, b;    // interval (may be infinite at the outer ends)
    double xr, yr;  // reference point on the line
    double m;       // slope
    double mass;    // integral of exp(value - offset)
  };

  double seg_mass(const Seg& s) const {
    if (std::isinf(s.a) && std::isinf(s.b)) return std::numeric_limits<double>::infinity();
    if (std::isinf(s.a)) {  // (-inf, b], needs m > 0
      if (s.m <= 0.0) return std::numeric_limits<double>::infinity();
      return std::exp(lerp_line(s.xr, s.yr, s.m, s.b) - offset_) / s.m;
    }
    if (std::isinf(s.b)) {  // [a, inf), needs m < 0
      if (s.m >= 0.0) return std::numeric_limits<double>::infinity();
      return std::exp(lerp_line(s.xr, s.yr, s.m, s.a) - offset_) / (-s.m);
    }
    const double va = lerp_line(s.xr, s.yr, s.m, s.a) - offset_;
    const double d = s.m * (s.b - s.a);
    if (std::fabs(d) < 1e-12) return std::exp(va) * (s.b - s.a);
    return std::exp(va) * std::expm1(d) / s.m;
  }

  double sample_segment(const Seg& s, double r) const {
    if (std::isinf(s.a)) return s.b + std::log(r) / s.m;         // m > 0
    if (std::isinf(s.b)) return s.a + std::log1p(-r) / s.m;      // m < 0
    const double d = s.m * (s.b - s.a);
    if (std::fabs(d) < 1e-12) return s.a + r * (s.b - s.a);
    return s.a + std::log1p(r * std::expm1(d)) / s.m;
  }

  void push_seg(double a, double b, double xr, double yr, double m) {
    if (b <= a) return;
    segs_.push_back({a, b, xr, yr, m, 0.0});
  }

  void rebuild() {
    segs_.clear();
    const std::size_t k = x_.size();
    offset_ = *std::max_element(h_.begin(), h_.end());

    auto chord = [&](std::size_t i, std::size_t j) {
      return (h_[j] - h_[i]) / (x_[j] - x_[i]);
    };

    if (lo_ < x_.front()) push_seg(lo_, x_.front(), x_.front(), h_.front(), chord(0, 1));
    for (std::size_t i = 0; i + 1 < k; ++i) {
      const bool has_left = i >= 1;
      const bool has_right = i + 2 < k;
      const double a = x_[i], b = x_[i + 1];
      if (has_left && has_right) {
        const double ml = chord(i - 1, i), mr = chord(i + 1, i + 2);
        // intersection of the two chord extensions
        const double denom = ml - mr;
        double xi = std::numeric_limits<double>::quiet_NaN();
        if (denom != 0.0)
          xi = (h_[i + 1] - mr * b - h_[i] + ml * a) / denom;
        if (std::isfinite(xi) && xi > a && xi < b) {
          push_seg(a, xi, a, h_[i], ml);
          push_seg(xi, b, b, h_[i + 1], mr);
        } else {
          // lines do not cross inside: the lower one dominates throughout
          const double mid = 0.5 * (a + b);
          if (lerp_line(a, h_[i], ml, mid) <= lerp_line(b, h_[i + 1], mr, mid))
            push_seg(a, b, a, h_[i], ml);
          else
            push_seg(a, b, b, h_[i + 1], mr);
        }
      } else if (has_left) {
        push_seg(a, b, a, h_[i], chord(i - 1, i));
      } else {
        push_seg(a, b, b, h_[i + 1], chord(i + 1, i + 2));
      }
    }
    if (hi_ > x_.back()) push_seg(x_.back(), hi_, x_.back(), h_.back(), chord(k - 2, k - 1));

    total_mass_ = 0.0;
    for (Seg& s : segs_) {
      s.mass = seg_mass(s);
      total_mass_ += s.mass;
    }
  }

  std::vector<double> x_, h_;
  double lo_, hi_;
  std::vector<Seg> segs_;
  double offset_ = 0.0;
  double total_mass_ = 0.0;
};

inline double concavity_tol(double a, double b) {
  return 1e-8 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Initial abscissae for the hull: three points around `start`, then doubling
// expansions until each unbounded side has the slope sign that makes the
// envelope integrable.
inline void locate_initial_points(const Target1D& t, double start, std::vector<double>& xs,
                                  std::vector<double>& hs) {
  const bool lo_open = std::isinf(t.lo);
  const bool hi_open = std::isinf(t.hi);
  if (!lo_open && !hi_open && !(t.hi > t.lo))
    throw std::invalid_argument("ars: empty support interval");
  double width = 1.0;
  if (!lo_open && !hi_open) width = std::min(1.0, 0.25 * (t.hi - t.lo));

  auto clip = [&](double x) {
    if (!lo_open) x = std::max(x, t.lo + 1e-10 * (1.0 + std::fabs(t.lo)));
    if (!hi_open) x = std::min(x, t.hi - 1e-10 * (1.0 + std::fabs(t.hi)));
    return x;
  };

  start = clip(start);
  xs = {clip(start - width), start, clip(start + width)};
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  for (int pad = 1; xs.size() < 3 && pad <= 8; ++pad) {
    if (hi_open)
      xs.push_back(xs.back() + pad * width);
    else if (lo_open)
      xs.insert(xs.begin(), xs.front() - pad * width);
    else {
      xs.clear();
      for (double q : {0.2, 0.5, 0.8}) xs.push_back(t.lo + q * (t.hi - t.lo));
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  }
  if (xs.size() < 3) throw std::runtime_error("ars: could not place initial abscissae");
  hs.clear();
  for (double x : xs) hs.push_back(t.logpdf(x));

  int expansions = 0;
  double step = width;
  while (lo_open && hs[1] - hs[0] <= 0.0) {
    step *= 2.0;
    if (++expansions > 60)
      throw std::runtime_error("ars: cannot bracket mode on the left (target may be improper)");
    xs.insert(xs.begin(), xs.front() - step);
    hs.insert(hs.begin(), t.logpdf(xs.front()));
  }
  expansions = 0;
  step = width;
  while (hi_open && hs[hs.size() - 1] - hs[hs.size() - 2] >= 0.0) {
    step *= 2.0;
    if (++expansions > 60)
      throw std::runtime_error("ars: cannot bracket mode on the right (target may be improper)");
    xs.push_back(xs.back() + step);
    hs.push_back(t.logpdf(xs.back()));
  }
}

}  // namespace detail

// Exact draw from a log-concave density by derivative-free adaptive
// rejection sampling. `start` seeds the abscissa search (use the current
// value of the coordinate being updated).
inline double ars_sample(const Target1D& target, Rng& rng, double start = 0.0) {
  std::vector<double> xs, hs;
  detail::locate_initial_points(target, start, xs, hs);
  detail::SecantHull hull(std::move(xs), std::move(hs), target.lo, target.hi);
  if (!hull.valid()) throw std::runtime_error("ars: envelope has non-finite mass");

  for (int iter = 0; iter < 10000; ++iter) {
    const double x = hull.sample(rng);
    const double lu = std::log(rng.uniform());
    const double env = hull.envelope(x);
    if (lu <= hull.squeeze(x) - env) return x;
    const double hx = target.logpdf(x);
    if (hx > env + detail::concavity_tol(hx, env))
      throw std::runtime_error("ars: target not log-concave at x = " + std::to_string(x));
    if (lu <= hx - env) return x;
    hull.insert(x, hx);
  }
  throw std::runtime_error("ars: rejection loop failed to terminate");
}

struct ArmsResult {
  double value = 0.0;
  bool accepted = false;     // Metropolis stage accepted a fresh candidate
  double mh_log_ratio = 0.0; // log acceptance ratio of that stage (0 when log-concave)
};

// Adaptive rejection Metropolis sampling on a bounded interval: the secant
// hull proposes, a Metropolis correction repairs any envelope violation, so
// log-concavity is not required. Leaves the target invariant.
inline ArmsResult arms_sample(const Target1D& target, double current, Rng& rng) {
  if (std::isinf(target.lo) || std::isinf(target.hi))
    throw std::invalid_argument("arms: bounded support required");
  std::vector<double> xs;
  for (double q : {0.1, 0.3, 0.5, 0.7, 0.9}) xs.push_back(target.lo + q * (target.hi - target.lo));
  if (current > target.lo && current < target.hi) xs.push_back(current);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::vector<double> hs;
  for (double x : xs) hs.push_back(target.logpdf(x));
  detail::SecantHull hull(std::move(xs), std::move(hs), target.lo, target.hi);
  if (!hull.valid()) throw std::runtime_error("arms: envelope has non-finite mass");

  const double h_cur = target.logpdf(current);
  for (int iter = 0; iter < 10000; ++iter) {
    const double x = hull.sample(rng);
    const double env_x = hull.envelope(x);
    const double hx = target.logpdf(x);
    if (std::log(rng.uniform()) > hx - env_x) {
      hull.insert(x, hx);  // hull refinement happens only on this branch
      continue;
    }
    const double env_c = hull.envelope(current);
    const double log_ratio =
        hx + std::min(h_cur, env_c) - h_cur - std::min(hx, env_x);
    if (std::log(rng.uniform()) <= log_ratio) return {x, true, log_ratio};
    return {current, false, log_ratio};
  }
  throw std::runtime_error("arms: rejection loop failed to terminate");
}

struct HmcSettings {
  double step_size = 0.1;
  int n_leapfrog = 20;
  double target_accept = 0.75;
  int adapt_iters = 0;
};

struct HmcResult {
  Eigen::VectorXd position;
  bool accepted = false;
  double hamiltonian_error = 0.0;
  double accept_prob = 0.0;
};

// One leapfrog trajectory; returns the log density at the final position.
// The mass matrix is the inverse of `mass_cov` (the latent curve's prior
// covariance), so position updates multiply by the covariance and no solves
// appear in the loop.
template <class Target>
inline double leapfrog(Eigen::VectorXd& q, Eigen::VectorXd& p, Target&& target,
                       const GramFactor& mass_cov, double eps, int n_steps) {
  auto [lp, grad] = target(q);
  p += 0.5 * eps * grad;
  for (int s = 0; s < n_steps; ++s) {
    q += eps * (mass_cov.covariance() * p);
    std::tie(lp, grad) = target(q);
    p += (s + 1 < n_steps ? eps : 0.5 * eps) * grad;
  }
  return lp;
}

template <class Target>
inline HmcResult hmc_step(const Eigen::VectorXd& q0, Target&& target, const GramFactor& mass_cov,
                          const HmcSettings& settings, Rng& rng) {
  const int d = static_cast<int>(q0.size());
  Eigen::VectorXd z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  Eigen::VectorXd p = mass_cov.precision_draw(z);

  const double lp0 = target(q0).first;
  const double h0 = -lp0 + 0.5 * p.dot(mass_cov.covariance() * p);

  Eigen::VectorXd q = q0;
  const double lp1 = leapfrog(q, p, target, mass_cov, settings.step_size, settings.n_leapfrog);
  const double h1 = -lp1 + 0.5 * p.dot(mass_cov.covariance() * p);
  const double dh = h1 - h0;

  HmcResult r;
  r.hamiltonian_error = dh;
  if (!std::isfinite(dh)) {
    r.position = q0;
    r.accept_prob = 0.0;
    return r;
  }
  r.accept_prob = std::min(1.0, std::exp(-dh));
  if (std::log(rng.uniform()) < -dh) {
    r.position = std::move(q);
    r.accepted = true;
  } else {
    r.position = q0;
  }
  return r;
}

// Nesterov-style dual averaging of the log step size toward a target
// acceptance rate; frozen after burn-in.
class DualAveraging {
 public:
  DualAveraging(double eps0, double target)
      : mu_(std::log(10.0 * eps0)), log_eps_(std::log(eps0)), log_eps_bar_(std::log(eps0)),
        target_(target) {}

  double update(double accept_prob) {
    ++t_;
    const double frac = 1.0 / (t_ + t0_);
    h_bar_ = (1.0 - frac) * h_bar_ + frac * (target_ - accept_prob);
    log_eps_ = mu_ - std::sqrt(static_cast<double>(t_)) / gamma_ * h_bar_;
    const double eta = std::pow(static_cast<double>(t_), -kappa_);
    log_eps_bar_ = eta * log_eps_ + (1.0 - eta) * log_eps_bar_;
    return std::exp(log_eps_);
  }

  double current() const { return std::exp(log_eps_); }
  double finalized() const { return std::exp(log_eps_bar_); }

  // checkpoint support
  std::array<double, 4> raw() const { return {h_bar_, log_eps_, log_eps_bar_, static_cast<double>(t_)}; }
  void restore(const std::array<double, 4>& r) {
    h_bar_ = r[0];
    log_eps_ = r[1];
    log_eps_bar_ = r[2];
    t_ = static_cast<long>(r[3]);
  }

 private:
  double mu_;
  double log_eps_, log_eps_bar_;
  double h_bar_ = 0.0;
  double target_;
  long t_ = 0;
  double gamma_ = 0.05, t0_ = 10.0, kappa_ = 0.75;
};

// Elliptical slice sampling transition for a target proportional to
// N(mean, prior_cov) * exp(data_loglik). Rejection-free; always returns.
template <class LogLik>
inline Eigen::VectorXd ess_step(const Eigen::VectorXd& f, LogLik&& data_loglik,
                                const Eigen::VectorXd& mean, const GramFactor& prior_cov,
                                Rng& rng) {
  const int d = static_cast<int>(f.size());
  Eigen::VectorXd z(d);
  for (int i = 0; i < d; ++i) z[i] = rng.normal();
  const Eigen::VectorXd nu = prior_cov.correlated(z);

  const double log_y = data_loglik(f) + std::log(rng.uniform());
  double angle = rng.uniform(0.0, 2.0 * M_PI);
  double lo = angle - 2.0 * M_PI, hi = angle;

  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::VectorXd prop =
        (f - mean) * std::cos(angle) + nu * std::sin(angle) + mean;
    if (data_loglik(prop) > log_y) return prop;
    if (angle < 0.0)
      lo = angle;
    else
      hi = angle;
    angle = rng.uniform(lo, hi);
  }
  return f;  // slice shrank to the current point
}

// Inverse-Wishart draw via the Bartlett factorization of the corresponding
// Wishart. `scale` is the inverse-Wishart scale matrix.
inline Eigen::MatrixXd draw_inv_wishart(double df, const Eigen::MatrixXd& scale, Rng& rng) {
  const int p = static_cast<int>(scale.rows());
  if (df <= p - 1) throw std::domain_error("draw_inv_wishart: df must exceed dim - 1");
  Eigen::LLT<Eigen::MatrixXd> llt_inv(scale.inverse());
  if (llt_inv.info() != Eigen::Success)
    throw std::invalid_argument("draw_inv_wishart: scale not positive-definite");
  Eigen::MatrixXd t = llt_inv.matrixL();

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chisq(df - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Eigen::MatrixXd w = t * a;
  const Eigen::MatrixXd wish = w * w.transpose();
  Eigen::MatrixXd d = wish.inverse();
  return 0.5 * (d + d.transpose());  // exact symmetry for downstream factorizations
}

// Conjugate inverse-gamma draw of a curve's variance sigma2 given the
// correlation factor R(theta): IG(a0 + L/2, b0 + (g-mu)'R^{-1}(g-mu)/2).
inline double draw_sigma2_conjugate(const LatentCurve& curve, double mean_level,
                                    const GramFactor& corr_factor, double a0, double b0,
                                    Rng& rng) {
  const Eigen::VectorXd diff = curve.values.array() - mean_level;
  const double q = corr_factor.quad_form(diff);
  return rng.inv_gamma(a0 + 0.5 * curve.size(), b0 + 0.5 * q);
}

}  // namespace pcox
