#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"
#include "kernels.hpp"
#include "model.hpp"
#include "panel_data.hpp"
#include "rng.hpp"
#include "samplers.hpp"

namespace pcox {

struct FitConfig {
  int n_iter = 4000;
  int burn_in = 1000;
  int thin = 1;
  int grid_size = 100;
  std::array<double, 2> nu = {2.5, 2.5};
  PriorConfig prior;
  std::optional<std::array<double, 2>> fixed_theta;  // rescaled-time units
  std::array<double, 2> theta_support = {1e-6, 50.0};
  HmcSettings hmc;
  int n_chains = 1;
  std::uint64_t seed = 1;
  bool random_init = false;

  void validate() const {
    if (!(burn_in < n_iter)) throw std::invalid_argument("burn_in < n_iter violated");
    if (burn_in < 0) throw std::invalid_argument("burn_in must be nonnegative");
    if (thin < 1) throw std::invalid_argument("thin must be at least 1");
    if (grid_size < 2) throw std::invalid_argument("grid_size must be at least 2");
    if (n_chains < 1) throw std::invalid_argument("n_chains must be at least 1");
    if (!(theta_support[0] > 0.0 && theta_support[1] > theta_support[0]))
      throw std::invalid_argument("theta_support must be a positive interval");
    if (fixed_theta && !((*fixed_theta)[0] > 0.0 && (*fixed_theta)[1] > 0.0))
      throw std::invalid_argument("fixed_theta values must be positive");
    prior.validate();
    KernelConfig{nu[0], 1.0, 1.0}.validate();
    KernelConfig{nu[1], 1.0, 1.0}.validate();
  }

  int n_stored() const { return (n_iter - burn_in) / thin; }
};

struct AcceptanceRates {
  double g1_hmc = 0.0;
  double g2_hmc = 0.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
};

// Thinned post-burn-in draws of every block, rows = stored iterations.
struct ChainOutput {
  FitConfig config;
  double t_max = 1.0;
  int n_subjects = 0;
  std::vector<std::string> covariate_names;

  Eigen::MatrixXd gamma, beta;    // B x p
  Eigen::VectorXd gamma0, beta0;  // B
  Eigen::MatrixXd z;              // B x 2n, columns (z1_1, z2_1, z1_2, ...)
  Eigen::MatrixXd d;              // B x 3, columns (D11, D12, D22)
  Eigen::MatrixXd g1, g2;         // B x L
  Eigen::MatrixXd hyper;          // B x 4, columns (sigma2_1, sigma2_2, theta_1, theta_2)

  AcceptanceRates acceptance;
  std::array<double, 2> final_step_size = {0.0, 0.0};
  double runtime_seconds = 0.0;  // in-memory only; never serialized

  int n_draws() const { return static_cast<int>(gamma0.size()); }

  ModelState state_at(int b) const {
    ModelState s;
    s.gamma = gamma.row(b);
    s.beta = beta.row(b);
    s.gamma0 = gamma0[b];
    s.beta0 = beta0[b];
    const int n = static_cast<int>(z.cols()) / 2;
    s.z.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      s.z(i, 0) = z(b, 2 * i);
      s.z(i, 1) = z(b, 2 * i + 1);
    }
    s.D << d(b, 0), d(b, 1), d(b, 1), d(b, 2);
    s.g1 = {g1.row(b), gamma0[b], CurveKind::observation};
    s.g2 = {g2.row(b), beta0[b], CurveKind::event};
    s.sigma2 = {hyper(b, 0), hyper(b, 1)};
    s.theta = {hyper(b, 2), hyper(b, 3)};
    return s;
  }

  // Entrywise posterior mean of every block (curves averaged cellwise).
  ModelState mean_state() const {
    ModelState s;
    s.gamma = gamma.colwise().mean();
    s.beta = beta.colwise().mean();
    s.gamma0 = gamma0.mean();
    s.beta0 = beta0.mean();
    const int n = static_cast<int>(z.cols()) / 2;
    s.z.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      s.z(i, 0) = z.col(2 * i).mean();
      s.z(i, 1) = z.col(2 * i + 1).mean();
    }
    s.D << d.col(0).mean(), d.col(1).mean(), d.col(1).mean(), d.col(2).mean();
    s.g1 = {g1.colwise().mean(), s.gamma0, CurveKind::observation};
    s.g2 = {g2.colwise().mean(), s.beta0, CurveKind::event};
    s.sigma2 = {hyper.col(0).mean(), hyper.col(1).mean()};
    s.theta = {hyper.col(2).mean(), hyper.col(3).mean()};
    return s;
  }
};

struct Checkpoint {
  ModelState state;
  std::string rng_state;
  long iter = 0;
  std::array<double, 2> step_size = {0.0, 0.0};
  std::array<std::array<double, 4>, 2> dual_avg_raw{};
};

// One Gibbs chain over all model blocks. Sweep order: regression blocks by
// coordinate ARS, intercepts by their conjugate normals, frailty vectors by
// coordinate ARS, D by inverse-Wishart, latent curves by HMC with the GP
// precision as mass matrix, variances by conjugate inverse-gamma, and
// length-scales by ARMS unless pre-fixed.
class GibbsChain {
 public:
  GibbsChain(const PanelDataset& data, const FitConfig& cfg,
             const Checkpoint* resume = nullptr)
      : cfg_(cfg),
        frame_(data, GridSpec(cfg.grid_size)),
        rng_(cfg.seed),
        adapt_({DualAveraging(cfg.hmc.step_size, cfg.hmc.target_accept),
                DualAveraging(cfg.hmc.step_size, cfg.hmc.target_accept)}) {
    cfg_.validate();
    if (!data.subjects.empty()) validate_dataset(data, /*for_fit=*/true);
    adapt_limit_ = cfg_.hmc.adapt_iters > 0 ? cfg_.hmc.adapt_iters : cfg_.burn_in;
    eps_ = {cfg_.hmc.step_size, cfg_.hmc.step_size};

    out_.config = cfg_;
    out_.t_max = frame_.t_max();
    out_.n_subjects = frame_.n();
    out_.covariate_names = data.covariate_names;

    if (resume) {
      state_ = resume->state;
      rng_.set_state(resume->rng_state);
      iter_ = resume->iter;
      eps_ = resume->step_size;
      adapt_[0].restore(resume->dual_avg_raw[0]);
      adapt_[1].restore(resume->dual_avg_raw[1]);
    } else {
      initialize();
    }
    rebuild_gram(0);
    rebuild_gram(1);
    refresh_exposures();
    check_initial_state();
    allocate_output();
  }

  const ModelState& state() const { return state_; }
  ChainOutput& output() { return out_; }
  long iteration() const { return iter_; }

  Checkpoint checkpoint() const {
    return {state_, rng_.state(), iter_, eps_, {adapt_[0].raw(), adapt_[1].raw()}};
  }

  void run(long n_sweeps) {
    for (long s = 0; s < n_sweeps && iter_ < cfg_.n_iter; ++s) sweep();
    finalize_rates();
  }

  void run_all() { run(cfg_.n_iter - iter_); }

  void sweep() {
    ++iter_;
    update_regression(RegressionSide::observation);
    update_regression(RegressionSide::event);
    update_intercept(0);
    update_intercept(1);
    update_frailties();
    update_d();
    update_curve(0);
    update_curve(1);
    update_sigma2(0);
    update_sigma2(1);
    if (!cfg_.fixed_theta) {
      update_theta(0);
      update_theta(1);
    }
    maybe_store();
  }

 private:
  void initialize() {
    const int n = frame_.n(), p = frame_.p();
    state_.gamma = Eigen::VectorXd::Zero(p);
    state_.beta = Eigen::VectorXd::Zero(p);
    double total_m = 0.0, total_c = 0.0, total_n = 0.0, total_t = 0.0;
    for (int i = 0; i < n; ++i) {
      const SubjectFrame& f = frame_.subject(i);
      total_m += f.m;
      total_c += static_cast<double>(f.censor_cell) / cfg_.grid_size;
      total_n += static_cast<double>(f.n_last);
      total_t += static_cast<double>(f.last_cell) / cfg_.grid_size;
    }
    // method-of-moments constant-intensity levels on the rescaled axis
    state_.gamma0 = (total_m > 0.0 && total_c > 0.0) ? std::log(total_m / total_c) : 0.0;
    state_.beta0 =
        (total_t > 0.0) ? std::log(std::max(total_n, 0.5) / total_t) : 0.0;
    state_.z = Eigen::MatrixXd::Zero(n, 2);
    state_.D = Eigen::Matrix2d::Identity();
    const int L = cfg_.grid_size;
    state_.g1 = {Eigen::VectorXd::Constant(L, state_.gamma0), state_.gamma0,
                 CurveKind::observation};
    state_.g2 = {Eigen::VectorXd::Constant(L, state_.beta0), state_.beta0, CurveKind::event};
    state_.sigma2 = {0.5, 0.5};
    for (int k = 0; k < 2; ++k)
      state_.theta[k] = cfg_.fixed_theta
                            ? (*cfg_.fixed_theta)[k]
                            : cfg_.prior.theta_prior[k].shape / cfg_.prior.theta_prior[k].rate;

    if (cfg_.random_init) {
      for (int j = 0; j < p; ++j) {
        state_.gamma[j] = rng_.normal(0.0, 1.0);
        state_.beta[j] = rng_.normal(0.0, 1.0);
      }
      state_.gamma0 += rng_.normal(0.0, 1.0);
      state_.beta0 += rng_.normal(0.0, 1.0);
      for (int i = 0; i < n; ++i) {
        state_.z(i, 0) = rng_.normal(0.0, 0.5);
        state_.z(i, 1) = rng_.normal(0.0, 0.5);
      }
      state_.D = draw_inv_wishart(cfg_.prior.k0 + 3.0, cfg_.prior.V0, rng_);
      state_.g1.values.array() = state_.gamma0;
      state_.g2.values.array() = state_.beta0;
      state_.g1.mean_level = state_.gamma0;
      state_.g2.mean_level = state_.beta0;
      state_.sigma2 = {rng_.inv_gamma(3.0, 1.0), rng_.inv_gamma(3.0, 1.0)};
    }
  }

  void check_initial_state() {
    const double ll = loglik_obs(state_, frame_) + loglik_events(state_, frame_);
    if (!std::isfinite(ll)) throw std::runtime_error("bad initial state");
  }

  void allocate_output() {
    const int b = cfg_.n_stored();
    const int p = frame_.p(), n = frame_.n(), L = cfg_.grid_size;
    out_.gamma = Eigen::MatrixXd::Zero(b, p);
    out_.beta = Eigen::MatrixXd::Zero(b, p);
    out_.gamma0 = Eigen::VectorXd::Zero(b);
    out_.beta0 = Eigen::VectorXd::Zero(b);
    out_.z = Eigen::MatrixXd::Zero(b, 2 * n);
    out_.d = Eigen::MatrixXd::Zero(b, 3);
    out_.g1 = Eigen::MatrixXd::Zero(b, L);
    out_.g2 = Eigen::MatrixXd::Zero(b, L);
    out_.hyper = Eigen::MatrixXd::Zero(b, 4);
  }

  void rebuild_gram(int k) {
    KernelConfig cfg{cfg_.nu[k], state_.theta[k], 1.0};
    gram_r_[k] = build_gram(centers_, cfg);
  }

  void refresh_exposures() {
    prefix1_ = exp_prefix(state_.g1, frame_.grid());
    prefix2_ = exp_prefix(state_.g2, frame_.grid());
    a_ = frame_.integrals_to(prefix1_, /*to_censor=*/true);
    b_ = frame_.integrals_to(prefix2_, /*to_censor=*/false);
  }

  void update_regression(RegressionSide side) {
    const int p = frame_.p();
    const bool obs = side == RegressionSide::observation;
    Eigen::VectorXd& coef = obs ? state_.gamma : state_.beta;
    if (p == 0 || frame_.n() == 0) return;
    const Eigen::MatrixXd& x = frame_.covariates();
    for (int r = 0; r < p; ++r) {
      double lin_coef = 0.0;
      Eigen::VectorXd w(frame_.n());
      for (int i = 0; i < frame_.n(); ++i) {
        const SubjectFrame& f = frame_.subject(i);
        const double count = obs ? static_cast<double>(f.m) : static_cast<double>(f.n_last);
        lin_coef += count * x(i, r);
        const double base = x.row(i).dot(coef) - x(i, r) * coef[r] +
                            state_.z(i, obs ? 0 : 1);
        w[i] = detail::exp_clamped(base) * (obs ? a_[i] : b_[i]);
      }
      Target1D target;
      target.logpdf = [&, r](double v) {
        double lp = lin_coef * v;
        for (int i = 0; i < frame_.n(); ++i) lp -= w[i] * detail::exp_clamped(x(i, r) * v);
        return lp;
      };
      coef[r] = ars_sample(target, rng_, coef[r]);
    }
  }

  void update_intercept(int k) {
    LatentCurve& g = k == 0 ? state_.g1 : state_.g2;
    const Eigen::VectorXd s1 = gram_r_[k].solve(Eigen::VectorXd::Ones(cfg_.grid_size));
    const double denom = s1.sum();  // 1' R^{-1} 1, sigma2 cancels in the mean
    const double mean = s1.dot(g.values) / denom;
    const double sd = std::sqrt(state_.sigma2[k] / denom);
    const double draw = rng_.normal(mean, sd);
    if (k == 0)
      state_.gamma0 = draw;
    else
      state_.beta0 = draw;
    g.mean_level = draw;
  }

  void update_frailties() {
    const int n = frame_.n();
    if (n == 0) return;
    const double det = state_.D(0, 0) * state_.D(1, 1) - state_.D(0, 1) * state_.D(1, 0);
    const double i00 = state_.D(1, 1) / det;
    const double i11 = state_.D(0, 0) / det;
    const double i01 = -state_.D(0, 1) / det;
    const Eigen::MatrixXd& x = frame_.covariates();
    for (int i = 0; i < n; ++i) {
      const SubjectFrame& f = frame_.subject(i);
      const double xg = x.row(i).dot(state_.gamma);
      const double xb = x.row(i).dot(state_.beta);
      // z1 coordinate
      {
        const double other = state_.z(i, 1);
        const double w = a_[i] * detail::exp_clamped(xg);
        Target1D t;
        t.logpdf = [&, other, w](double v) {
          return -0.5 * i00 * v * v - i01 * v * other + f.m * v -
                 w * detail::exp_clamped(v);
        };
        state_.z(i, 0) = ars_sample(t, rng_, state_.z(i, 0));
      }
      // z2 coordinate
      {
        const double other = state_.z(i, 0);
        const double w = b_[i] * detail::exp_clamped(xb);
        Target1D t;
        t.logpdf = [&, other, w](double v) {
          return -0.5 * i11 * v * v - i01 * v * other + static_cast<double>(f.n_last) * v -
                 w * detail::exp_clamped(v);
        };
        state_.z(i, 1) = ars_sample(t, rng_, state_.z(i, 1));
      }
    }
  }

  void update_d() {
    Eigen::Matrix2d s = cfg_.prior.V0;
    for (int i = 0; i < frame_.n(); ++i) {
      const Eigen::Vector2d zi(state_.z(i, 0), state_.z(i, 1));
      s += zi * zi.transpose();
    }
    state_.D = draw_inv_wishart(frame_.n() + cfg_.prior.k0, s, rng_);
  }

  void update_curve(int k) {
    LatentCurve& g = k == 0 ? state_.g1 : state_.g2;
    const CurveKind kind = k == 0 ? CurveKind::observation : CurveKind::event;
    const GramFactor mass = gram_r_[k].scaled(state_.sigma2[k]);
    auto target = [&](const Eigen::VectorXd& q) {
      LatentCurve c{q, g.mean_level, kind};
      CurveConditional r = cond_g_logpdf_grad(kind, c, state_, frame_, mass);
      return std::make_pair(r.logpdf, std::move(r.grad));
    };
    HmcSettings s = cfg_.hmc;
    s.step_size = eps_[k];
    HmcResult r = hmc_step(g.values, target, mass, s, rng_);
    if (r.accepted) {
      g.values = r.position;
      refresh_exposures();
    }
    ++hmc_count_[k];
    hmc_accept_[k] += r.accepted ? 1.0 : 0.0;
    if (iter_ <= adapt_limit_) {
      eps_[k] = adapt_[k].update(r.accept_prob);
    } else if (!eps_frozen_[k]) {
      eps_[k] = adapt_[k].finalized();
      eps_frozen_[k] = true;
    }
  }

  void update_sigma2(int k) {
    const LatentCurve& g = k == 0 ? state_.g1 : state_.g2;
    state_.sigma2[k] = draw_sigma2_conjugate(g, g.mean_level, gram_r_[k], cfg_.prior.a0,
                                             cfg_.prior.b0, rng_);
  }

  void update_theta(int k) {
    const LatentCurve& g = k == 0 ? state_.g1 : state_.g2;
    const Eigen::VectorXd diff = g.values.array() - g.mean_level;
    const GammaPrior& pr = cfg_.prior.theta_prior[k];
    const double sigma2 = state_.sigma2[k];

    // each evaluation factors R(theta); keep them for reuse on acceptance
    std::vector<std::pair<double, GramFactor>> cache;
    auto factor_at = [&](double theta) -> const GramFactor& {
      for (const auto& c : cache)
        if (c.first == theta) return c.second;
      KernelConfig kc{cfg_.nu[k], theta, 1.0};
      cache.emplace_back(theta, build_gram(centers_, kc));
      return cache.back().second;
    };

    Target1D t;
    t.lo = cfg_.theta_support[0];
    t.hi = cfg_.theta_support[1];
    t.declared_logconcave = false;
    t.logpdf = [&](double theta) {
      const GramFactor& f = factor_at(theta);
      return -0.5 * f.log_det() - 0.5 * f.quad_form(diff) / sigma2 +
             (pr.shape - 1.0) * std::log(theta) - pr.rate * theta;
    };

    ArmsResult r = arms_sample(t, state_.theta[k], rng_);
    ++theta_count_[k];
    theta_accept_[k] += r.accepted ? 1.0 : 0.0;
    if (r.value != state_.theta[k]) {
      state_.theta[k] = r.value;
      gram_r_[k] = factor_at(r.value);  // cached factor, no refactorization
    }
  }

  void maybe_store() {
    if (iter_ <= cfg_.burn_in) return;
    const long since = iter_ - cfg_.burn_in;
    if (since % cfg_.thin != 0) return;
    const int b = static_cast<int>(since / cfg_.thin) - 1;
    if (b < 0 || b >= cfg_.n_stored()) return;

    // persist-time sanity: SPD D and finite curves
    const double det = state_.D(0, 0) * state_.D(1, 1) - state_.D(0, 1) * state_.D(1, 0);
    if (!(state_.D(0, 0) > 0.0 && det > 0.0))
      throw std::runtime_error("stored D draw is not positive-definite");
    if (!state_.g1.values.allFinite() || !state_.g2.values.allFinite())
      throw std::runtime_error("stored latent curve is not finite");

    out_.gamma.row(b) = state_.gamma;
    out_.beta.row(b) = state_.beta;
    out_.gamma0[b] = state_.gamma0;
    out_.beta0[b] = state_.beta0;
    for (int i = 0; i < frame_.n(); ++i) {
      out_.z(b, 2 * i) = state_.z(i, 0);
      out_.z(b, 2 * i + 1) = state_.z(i, 1);
    }
    out_.d(b, 0) = state_.D(0, 0);
    out_.d(b, 1) = state_.D(0, 1);
    out_.d(b, 2) = state_.D(1, 1);
    out_.g1.row(b) = state_.g1.values;
    out_.g2.row(b) = state_.g2.values;
    out_.hyper(b, 0) = state_.sigma2[0];
    out_.hyper(b, 1) = state_.sigma2[1];
    out_.hyper(b, 2) = state_.theta[0];
    out_.hyper(b, 3) = state_.theta[1];
  }

  void finalize_rates() {
    out_.acceptance.g1_hmc = hmc_count_[0] ? hmc_accept_[0] / hmc_count_[0] : 0.0;
    out_.acceptance.g2_hmc = hmc_count_[1] ? hmc_accept_[1] / hmc_count_[1] : 0.0;
    out_.acceptance.theta1 = theta_count_[0] ? theta_accept_[0] / theta_count_[0] : 0.0;
    out_.acceptance.theta2 = theta_count_[1] ? theta_accept_[1] / theta_count_[1] : 0.0;
    out_.final_step_size = eps_;
  }

  FitConfig cfg_;
  ModelFrame frame_;
  Rng rng_;
  ModelState state_;
  std::vector<double> centers_ = GridSpec(cfg_.grid_size).cell_centers();
  std::array<GramFactor, 2> gram_r_;  // factors of R(theta_k), unit variance
  Eigen::VectorXd prefix1_, prefix2_, a_, b_;
  std::array<DualAveraging, 2> adapt_;
  std::array<double, 2> eps_;
  std::array<bool, 2> eps_frozen_ = {false, false};
  int adapt_limit_ = 0;
  long iter_ = 0;
  std::array<double, 2> hmc_accept_ = {0, 0}, theta_accept_ = {0, 0};
  std::array<long, 2> hmc_count_ = {0, 0}, theta_count_ = {0, 0};
  ChainOutput out_;
};

inline ChainOutput gibbs_run(const PanelDataset& data, const FitConfig& cfg) {
  GibbsChain chain(data, cfg);
  chain.run_all();
  return std::move(chain.output());
}

// ---------------------------------------------------------------------------
// posterior summaries

struct ScalarSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, lo95 = 0.0, hi95 = 0.0;
};

struct CurveSummary {
  std::string name;
  std::vector<double> t, mean, lo95, hi95;
};

struct FitSummary {
  std::vector<ScalarSummary> scalars;
  std::vector<CurveSummary> curves;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) return 0.0;
  const double pos = q * (s.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double w = pos - lo;
  return (1.0 - w) * s[lo] + w * s[hi];
}

inline ScalarSummary summarize_column(const std::string& name, const Eigen::VectorXd& col) {
  ScalarSummary s;
  s.name = name;
  s.mean = col.mean();
  s.sd = std::sqrt((col.array() - s.mean).square().sum() / std::max<int>(1, col.size() - 1));
  std::vector<double> sorted(col.data(), col.data() + col.size());
  std::sort(sorted.begin(), sorted.end());
  s.lo95 = quantile_sorted(sorted, 0.025);
  s.hi95 = quantile_sorted(sorted, 0.975);
  return s;
}

// pointwise mean and central band over rows of draws (B x L)
inline CurveSummary summarize_curve(const std::string& name, const std::vector<double>& t,
                                    const Eigen::MatrixXd& draws) {
  CurveSummary c;
  c.name = name;
  c.t = t;
  const int cols = static_cast<int>(draws.cols());
  c.mean.resize(cols);
  c.lo95.resize(cols);
  c.hi95.resize(cols);
  std::vector<double> buf(draws.rows());
  for (int l = 0; l < cols; ++l) {
    for (int b = 0; b < draws.rows(); ++b) buf[b] = draws(b, l);
    std::sort(buf.begin(), buf.end());
    c.mean[l] = draws.col(l).mean();
    c.lo95[l] = quantile_sorted(buf, 0.025);
    c.hi95[l] = quantile_sorted(buf, 0.975);
  }
  return c;
}

}  // namespace detail

// Scalar and curve summaries in original time units: intensities divide by
// T_max, cumulatives are reported both raw and rescaled to end at one.
inline FitSummary summarize(const ChainOutput& chain) {
  if (chain.n_draws() < 2) throw std::invalid_argument("summarize: need at least 2 stored draws");
  FitSummary out;
  const int p = static_cast<int>(chain.gamma.cols());
  for (int j = 0; j < p; ++j) {
    const std::string nm = j < static_cast<int>(chain.covariate_names.size())
                               ? chain.covariate_names[j]
                               : "x" + std::to_string(j + 1);
    out.scalars.push_back(detail::summarize_column("gamma_" + nm, chain.gamma.col(j)));
  }
  for (int j = 0; j < p; ++j) {
    const std::string nm = j < static_cast<int>(chain.covariate_names.size())
                               ? chain.covariate_names[j]
                               : "x" + std::to_string(j + 1);
    out.scalars.push_back(detail::summarize_column("beta_" + nm, chain.beta.col(j)));
  }
  out.scalars.push_back(detail::summarize_column("gamma0", chain.gamma0));
  out.scalars.push_back(detail::summarize_column("beta0", chain.beta0));
  out.scalars.push_back(detail::summarize_column("D11", chain.d.col(0)));
  out.scalars.push_back(detail::summarize_column("D12", chain.d.col(1)));
  out.scalars.push_back(detail::summarize_column("D22", chain.d.col(2)));
  out.scalars.push_back(detail::summarize_column("sigma2_1", chain.hyper.col(0)));
  out.scalars.push_back(detail::summarize_column("sigma2_2", chain.hyper.col(1)));
  out.scalars.push_back(detail::summarize_column("theta_1", chain.hyper.col(2)));
  out.scalars.push_back(detail::summarize_column("theta_2", chain.hyper.col(3)));

  const int L = static_cast<int>(chain.g1.cols());
  const int b = chain.n_draws();
  const GridSpec grid(L);
  std::vector<double> t(L);
  for (int l = 0; l < L; ++l) t[l] = (l + 0.5) / L * chain.t_max;
  std::vector<double> t_edges(L);
  for (int l = 0; l < L; ++l) t_edges[l] = static_cast<double>(l + 1) / L * chain.t_max;

  auto intensity_draws = [&](const Eigen::MatrixXd& g) {
    Eigen::MatrixXd m(b, L);
    for (int r = 0; r < b; ++r)
      for (int l = 0; l < L; ++l) m(r, l) = std::exp(g(r, l)) / chain.t_max;
    return m;
  };
  auto cumulative_draws = [&](const Eigen::MatrixXd& g, CurveKind kind, bool rescaled) {
    Eigen::MatrixXd m(b, L);
    for (int r = 0; r < b; ++r) {
      LatentCurve c{g.row(r), 0.0, kind};
      m.row(r) = cumulative_curve(c, grid, rescaled);
    }
    return m;
  };

  out.curves.push_back(detail::summarize_curve("mu0", t, intensity_draws(chain.g1)));
  out.curves.push_back(detail::summarize_curve("lambda0", t, intensity_draws(chain.g2)));
  out.curves.push_back(detail::summarize_curve(
      "Mu0", t_edges, cumulative_draws(chain.g1, CurveKind::observation, false)));
  out.curves.push_back(detail::summarize_curve(
      "Lambda0", t_edges, cumulative_draws(chain.g2, CurveKind::event, false)));
  out.curves.push_back(detail::summarize_curve(
      "Mu0_rescaled", t_edges, cumulative_draws(chain.g1, CurveKind::observation, true)));
  out.curves.push_back(detail::summarize_curve(
      "Lambda0_rescaled", t_edges, cumulative_draws(chain.g2, CurveKind::event, true)));
  return out;
}

// ---------------------------------------------------------------------------
// convergence diagnostics

struct ScalarDiagnostics {
  std::string name;
  double mean = 0.0;
  double ess = 0.0;
  double geweke_z = 0.0;
  std::vector<double> autocorr;  // lags 1..max_lag
  bool degenerate = false;
};

namespace detail {

inline std::vector<double> autocovariances(const Eigen::VectorXd& x, int max_lag) {
  const int n = static_cast<int>(x.size());
  const double mean = x.mean();
  std::vector<double> acov(max_lag + 1, 0.0);
  for (int k = 0; k <= max_lag && k < n; ++k) {
    double s = 0.0;
    for (int t = 0; t + k < n; ++t) s += (x[t] - mean) * (x[t + k] - mean);
    acov[k] = s / n;
  }
  return acov;
}

// Geyer initial-monotone-sequence estimate of the integrated
// autocorrelation time; returns 0 ess for a zero-variance stream.
inline double ess_ims(const Eigen::VectorXd& x, bool* degenerate = nullptr) {
  const int n = static_cast<int>(x.size());
  if (degenerate) *degenerate = false;
  if (n < 4) return static_cast<double>(n);
  const int max_lag = std::min(n - 2, 2000);
  const auto acov = autocovariances(x, max_lag);
  if (acov[0] <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  double sum_pairs = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int m = 0; 2 * m + 1 <= max_lag; ++m) {
    double g = acov[2 * m] + acov[2 * m + 1];
    if (g <= 0.0) break;
    g = std::min(g, prev);
    prev = g;
    sum_pairs += g;
  }
  const double var_inf = std::max(-acov[0] + 2.0 * sum_pairs, acov[0] * 1e-12);
  return n * acov[0] / var_inf;
}

}  // namespace detail

inline double effective_sample_size(const Eigen::VectorXd& x, bool* degenerate = nullptr) {
  return detail::ess_ims(x, degenerate);
}

// Compares the first 10% of the stream against the last 50%, standard
// errors taken from each segment's own autocorrelation time.
inline double geweke_z(const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  const int na = std::max(2, n / 10);
  const int nb = std::max(2, n / 2);
  const Eigen::VectorXd a = x.head(na);
  const Eigen::VectorXd b = x.tail(nb);
  auto seg_var = [](const Eigen::VectorXd& s) {
    bool deg = false;
    const double ess = detail::ess_ims(s, &deg);
    if (deg || ess <= 0.0) return 0.0;
    const double mean = s.mean();
    const double var = (s.array() - mean).square().sum() / s.size();
    return var / ess;
  };
  const double va = seg_var(a), vb = seg_var(b);
  if (va + vb <= 0.0) return 0.0;
  return (a.mean() - b.mean()) / std::sqrt(va + vb);
}

inline std::vector<ScalarDiagnostics> diagnostics(const ChainOutput& chain, int max_lag = 50) {
  if (chain.n_draws() < 100)
    throw std::invalid_argument("diagnostics: need at least 100 stored draws");
  std::vector<std::pair<std::string, Eigen::VectorXd>> cols;
  const int p = static_cast<int>(chain.gamma.cols());
  for (int j = 0; j < p; ++j) cols.emplace_back("gamma_" + std::to_string(j + 1), chain.gamma.col(j));
  for (int j = 0; j < p; ++j) cols.emplace_back("beta_" + std::to_string(j + 1), chain.beta.col(j));
  cols.emplace_back("gamma0", chain.gamma0);
  cols.emplace_back("beta0", chain.beta0);
  cols.emplace_back("D11", chain.d.col(0));
  cols.emplace_back("D12", chain.d.col(1));
  cols.emplace_back("D22", chain.d.col(2));
  cols.emplace_back("sigma2_1", chain.hyper.col(0));
  cols.emplace_back("sigma2_2", chain.hyper.col(1));
  cols.emplace_back("theta_1", chain.hyper.col(2));
  cols.emplace_back("theta_2", chain.hyper.col(3));
  const int L = static_cast<int>(chain.g1.cols());
  cols.emplace_back("g1_mid", chain.g1.col(L / 2));
  cols.emplace_back("g2_mid", chain.g2.col(L / 2));

  std::vector<ScalarDiagnostics> out;
  for (auto& [name, col] : cols) {
    ScalarDiagnostics d;
    d.name = name;
    d.mean = col.mean();
    d.ess = detail::ess_ims(col, &d.degenerate);
    d.geweke_z = d.degenerate ? 0.0 : geweke_z(col);
    const auto acov = detail::autocovariances(col, std::min<int>(max_lag, col.size() - 2));
    for (std::size_t k = 1; k < acov.size(); ++k)
      d.autocorr.push_back(acov[0] > 0.0 ? acov[k] / acov[0] : 0.0);
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// deviance information criterion

struct DicResult {
  double dic = 0.0;
  double mean_deviance = 0.0;
  double p_d = 0.0;
};

// Deviance focus: conditional on frailties and latent curves, so
// D(state) = -2 (log L1 + log L2) evaluated by plug-in.
inline DicResult dic(const ChainOutput& chain, const PanelDataset& data, const GridSpec& grid) {
  if (chain.n_draws() < 1) throw std::invalid_argument("dic: empty chain");
  const ModelFrame frame(data, grid);
  double mean_dev = 0.0;
  for (int b = 0; b < chain.n_draws(); ++b) {
    const ModelState s = chain.state_at(b);
    mean_dev += -2.0 * (loglik_obs(s, frame) + loglik_events(s, frame));
  }
  mean_dev /= chain.n_draws();
  const ModelState at_mean = chain.mean_state();
  const double dev_at_mean = -2.0 * (loglik_obs(at_mean, frame) + loglik_events(at_mean, frame));
  DicResult r;
  r.mean_deviance = mean_dev;
  r.p_d = mean_dev - dev_at_mean;
  r.dic = 2.0 * mean_dev - dev_at_mean;
  return r;
}

}  // namespace pcox
