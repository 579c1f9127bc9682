#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "engine.hpp"
#include "panel_data.hpp"
#include "rng.hpp"

namespace pcox {

using Intensity = std::function<double(double)>;

namespace detail {

inline double simpson(const Intensity& f, double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const Intensity& f, double a, double b, double fa, double fm,
                                   double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(f, a, m, fa, flm, fm);
  const double right = simpson(f, m, b, fm, frm, fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double integrate(const Intensity& f, double a, double b, double tol = 1e-10) {
  if (b <= a) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, simpson(f, a, b, fa, fm, fb), tol, 40);
}

}  // namespace detail

struct CensorDist {
  enum class Kind { uniform, fixed } kind = Kind::fixed;
  double a = 0.0, b = 0.0;  // uniform bounds, or a == fixed value

  static CensorDist uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static CensorDist fixed(double c) { return {Kind::fixed, c, c}; }

  double draw(Rng& rng) const { return kind == Kind::uniform ? rng.uniform(a, b) : a; }
  double max_value() const { return b; }
};

struct FrailtyModel {
  enum class Kind { linked_gamma, independent_lognormal, bivariate_lognormal };
  Kind kind = Kind::independent_lognormal;
  double log_var = 0.25;                               // independent lognormal
  Eigen::Matrix2d d = Eigen::Matrix2d::Identity();     // bivariate lognormal
  bool gamma_shape_scale = false;  // alternate reading of the Ga(a,b) parameterization

  static FrailtyModel linked_gamma(bool shape_scale = false) {
    FrailtyModel f;
    f.kind = Kind::linked_gamma;
    f.gamma_shape_scale = shape_scale;
    return f;
  }
  static FrailtyModel independent_lognormal(double var) {
    FrailtyModel f;
    f.kind = Kind::independent_lognormal;
    f.log_var = var;
    return f;
  }
  static FrailtyModel bivariate_lognormal(const Eigen::Matrix2d& d) {
    FrailtyModel f;
    f.kind = Kind::bivariate_lognormal;
    f.d = d;
    return f;
  }

  std::pair<double, double> draw(Rng& rng) const {
    switch (kind) {
      case Kind::linked_gamma: {
        const double u1 = gamma_shape_scale ? rng.gamma(2.0, 1.0) * 0.2 : rng.gamma(2.0, 0.2);
        const double g2 = gamma_shape_scale ? rng.gamma(1.0, 1.0) * 2.0 : rng.gamma(1.0, 2.0);
        return {u1, std::sqrt(u1) + g2};
      }
      case Kind::independent_lognormal: {
        const double sd = std::sqrt(log_var);
        return {std::exp(rng.normal(0.0, sd)), std::exp(rng.normal(0.0, sd))};
      }
      case Kind::bivariate_lognormal: {
        Eigen::LLT<Eigen::Matrix2d> llt(d);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument("frailty covariance not positive-definite");
        const Eigen::Matrix2d l = llt.matrixL();
        const Eigen::Vector2d zraw(rng.normal(), rng.normal());
        const Eigen::Vector2d z = l * zraw;
        return {std::exp(z[0]), std::exp(z[1])};
      }
    }
    return {1.0, 1.0};
  }
};

struct CovariateDist {
  enum class Kind { bernoulli, uniform01 } kind = Kind::uniform01;
  double p = 0.5;
  std::string name = "x";

  double draw(Rng& rng) const {
    return kind == Kind::bernoulli ? (rng.uniform() < p ? 1.0 : 0.0) : rng.uniform();
  }
};

struct ScenarioSpec {
  Intensity mu0, lambda0;
  double t_end = 1.0;        // study horizon in original units
  CensorDist censor;
  FrailtyModel frailty;
  std::vector<CovariateDist> covariates;
  Eigen::VectorXd gamma_true, beta_true;
  int n = 100;
  double lambda0_trunc = 0.0;  // left truncation for intensities divergent at 0
  double mu0_bound = 0.0;      // dominating bound for thinning; 0 = find by grid search

  void validate() const {
    if (n < 1) throw std::invalid_argument("scenario: n must be at least 1");
    if (!(t_end > 0.0)) throw std::invalid_argument("scenario: t_end must be positive");
    if (!mu0 || !lambda0) throw std::invalid_argument("scenario: intensities must be set");
    if (gamma_true.size() != static_cast<Eigen::Index>(covariates.size()) ||
        beta_true.size() != gamma_true.size())
      throw std::invalid_argument("scenario: coefficient/covariate length mismatch");
  }
};

struct SimulationTruth {
  Eigen::VectorXd gamma, beta;
  std::vector<double> u_obs, u_event;
  double t_end = 1.0;
  int n_no_visit = 0;
};

// Lewis-Shedler thinning: homogeneous Poisson(bound) candidates kept with
// probability intensity(t)/bound.
inline std::vector<double> simulate_nhpp(const Intensity& intensity, double t_end, double bound,
                                         Rng& rng) {
  if (bound < 0.0 || !std::isfinite(bound))
    throw std::invalid_argument("simulate_nhpp: invalid dominating bound");
  std::vector<double> out;
  if (bound == 0.0) return out;
  double t = 0.0;
  for (;;) {
    t += rng.exponential(bound);
    if (t > t_end) break;
    const double lam = intensity(t);
    if (lam > bound * (1.0 + 1e-12)) throw std::runtime_error("dominating bound violated");
    if (rng.uniform() * bound < lam) out.push_back(t);
  }
  return out;
}

inline double grid_search_bound(const Intensity& f, double t_end) {
  double m = 0.0;
  const int pts = 10000;
  for (int i = 1; i <= pts; ++i) m = std::max(m, f(t_end * i / pts));
  return 1.05 * m;
}

// Draws one panel dataset: covariates, censor times and frailties per
// subject, observation times by thinning, counts by exact Poisson draws on
// the interval integrals of lambda0.
inline std::pair<PanelDataset, SimulationTruth> simulate_dataset(const ScenarioSpec& spec,
                                                                 std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  PanelDataset data;
  for (const auto& c : spec.covariates) data.covariate_names.push_back(c.name);
  SimulationTruth truth;
  truth.gamma = spec.gamma_true;
  truth.beta = spec.beta_true;
  truth.t_end = spec.t_end;

  const double mu0_bound =
      spec.mu0_bound > 0.0 ? spec.mu0_bound : grid_search_bound(spec.mu0, spec.t_end);

  for (int i = 0; i < spec.n; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    for (const auto& c : spec.covariates) s.covariates.push_back(c.draw(rng));
    s.censor_time = spec.censor.draw(rng);
    auto [u1, u2] = spec.frailty.draw(rng);
    truth.u_obs.push_back(u1);
    truth.u_event.push_back(u2);

    Eigen::Map<const Eigen::VectorXd> x(s.covariates.data(), s.covariates.size());
    const double scale_obs = std::exp(x.dot(spec.gamma_true)) * u1;
    const double scale_ev = std::exp(x.dot(spec.beta_true)) * u2;

    auto mu_i = [&](double t) { return spec.mu0(t) * scale_obs; };
    s.obs_times = simulate_nhpp(mu_i, s.censor_time, mu0_bound * scale_obs, rng);

    long n_cum = 0;
    double prev = 0.0;
    for (double tj : s.obs_times) {
      const double lo = std::max(prev, spec.lambda0_trunc);
      const double mean = scale_ev * detail::integrate(spec.lambda0, lo, tj);
      n_cum += rng.poisson(mean);
      s.cum_counts.push_back(n_cum);
      prev = tj;
    }
    if (s.obs_times.empty()) ++truth.n_no_visit;
    data.subjects.push_back(std::move(s));
  }
  return {std::move(data), std::move(truth)};
}

// Rescaled cumulative baseline Lambda0(t) / Lambda0(t_end) of a scenario.
inline double rescaled_cumulative_truth(const ScenarioSpec& spec, double t) {
  const double lo = spec.lambda0_trunc;
  const double total = detail::integrate(spec.lambda0, lo, spec.t_end);
  if (t <= lo) return 0.0;
  return detail::integrate(spec.lambda0, lo, std::min(t, spec.t_end)) / total;
}

// ---------------------------------------------------------------------------
// built-in scenarios

inline ScenarioSpec setting1(int n = 100) {
  ScenarioSpec s;
  s.mu0 = [](double) { return 1.0 / 8.0; };
  s.lambda0 = [](double t) { return 1.0 / t; };
  s.lambda0_trunc = 0.01;
  s.t_end = 9.0;
  s.censor = CensorDist::uniform(2.0, 9.0);
  s.frailty = FrailtyModel::linked_gamma();
  s.covariates = {{CovariateDist::Kind::bernoulli, 0.5, "x1"}};
  s.gamma_true = Eigen::VectorXd::Constant(1, 1.0);
  s.beta_true = Eigen::VectorXd::Constant(1, 1.0);
  s.n = n;
  s.mu0_bound = 1.0 / 8.0;
  return s;
}

inline ScenarioSpec setting2(int n = 100) {
  ScenarioSpec s;
  s.mu0 = [](double t) {
    const double d = (t - 70.0) / 40.0;
    return 0.25 * (std::exp(-t / 20.0) + 0.5 * std::exp(-d * d));
  };
  s.lambda0 = [](double t) {
    const double d = (t - 70.0) / 20.0;
    return 0.125 * (std::exp(-t / 10.0) + 0.5 * std::exp(-d * d));
  };
  s.t_end = 100.0;
  s.censor = CensorDist::uniform(50.0, 100.0);
  s.frailty = FrailtyModel::independent_lognormal(0.25);
  s.covariates = {{CovariateDist::Kind::uniform01, 0.0, "x1"}};
  s.gamma_true = Eigen::VectorXd::Constant(1, 1.0);
  s.beta_true = Eigen::VectorXd::Constant(1, 1.0);
  s.n = n;
  s.mu0_bound = 0.375;  // 0.25 * (1 + 0.5) bounds both summands
  return s;
}

inline ScenarioSpec setting3(int n = 100) {
  ScenarioSpec s;
  s.mu0 = [](double t) { return 0.25 * std::exp(-t / 100.0); };
  s.lambda0 = [](double t) {
    auto bump = [](double t0, double t) {
      const double d = t - t0;
      return std::exp(-d * d / 25.0);
    };
    return 0.25 * (bump(20.0, t) + bump(50.0, t) + bump(80.0, t));
  };
  s.t_end = 100.0;
  s.censor = CensorDist::fixed(100.0);
  Eigen::Matrix2d d;
  d << 0.25, 0.125, 0.125, 0.25;
  s.frailty = FrailtyModel::bivariate_lognormal(d);
  s.covariates = {{CovariateDist::Kind::uniform01, 0.0, "x1"},
                  {CovariateDist::Kind::uniform01, 0.0, "x2"}};
  s.gamma_true = Eigen::Vector2d(-1.0, 1.0);
  s.beta_true = Eigen::Vector2d(-1.0, 1.0);
  s.n = n;
  s.mu0_bound = 0.25;
  return s;
}

inline ScenarioSpec builtin_scenario(int setting, int n = 100) {
  switch (setting) {
    case 1: return setting1(n);
    case 2: return setting2(n);
    case 3: return setting3(n);
    default: throw std::invalid_argument("setting must be 1, 2 or 3");
  }
}

// Fit configuration matching each scenario: nu = 2.5 and the length-scales
// pre-fixed, stated on the rescaled axis (original-units value / t_end).
inline FitConfig scenario_fit_config(int setting) {
  FitConfig cfg;
  cfg.nu = {2.5, 2.5};
  switch (setting) {
    case 1: cfg.fixed_theta = {{0.5 / 9.0, 0.5 / 9.0}}; break;
    case 2: cfg.fixed_theta = {{4.0 / 100.0, 4.0 / 100.0}}; break;
    case 3: cfg.fixed_theta = {{4.0 / 100.0, 2.0 / 100.0}}; break;
    default: throw std::invalid_argument("setting must be 1, 2 or 3");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// replication study

struct ParamEstimate {
  std::string name;
  double estimate = 0.0, lo95 = 0.0, hi95 = 0.0;
};

using Estimator =
    std::function<std::vector<ParamEstimate>(const PanelDataset&, const SimulationTruth&)>;

struct StudyRow {
  std::string param;
  double truth = 0.0, bias = 0.0, rmse = 0.0, cp = 0.0;
  int n_used = 0;
};

struct StudyReplicateRow {
  int replicate = 0;
  std::string param;
  double estimate = 0.0, truth = 0.0, lo95 = 0.0, hi95 = 0.0;
};

struct StudyResult {
  std::vector<StudyRow> summary;
  std::vector<StudyReplicateRow> detail;
  int n_failed = 0;
  std::vector<std::string> failures;
};

// Posterior-mean estimator backed by the Gibbs engine; subjects without a
// visit are dropped before fitting (the fit rejects them).
inline Estimator gibbs_estimator(const FitConfig& base_cfg,
                                 const std::vector<double>& eval_times) {
  return [base_cfg, eval_times](const PanelDataset& data_in,
                                       const SimulationTruth&) -> std::vector<ParamEstimate> {
    PanelDataset data = data_in;
    std::erase_if(data.subjects, [](const Subject& s) { return s.obs_times.empty(); });
    FitConfig cfg = base_cfg;
    ChainOutput chain = gibbs_run(data, cfg);

    std::vector<ParamEstimate> out;
    auto col_est = [](const std::string& name, const Eigen::VectorXd& col) {
      std::vector<double> sorted(col.data(), col.data() + col.size());
      std::sort(sorted.begin(), sorted.end());
      return ParamEstimate{name, col.mean(), detail::quantile_sorted(sorted, 0.025),
                           detail::quantile_sorted(sorted, 0.975)};
    };
    for (int j = 0; j < chain.beta.cols(); ++j)
      out.push_back(col_est("beta_" + std::to_string(j + 1), chain.beta.col(j)));
    for (int j = 0; j < chain.gamma.cols(); ++j)
      out.push_back(col_est("gamma_" + std::to_string(j + 1), chain.gamma.col(j)));

    if (!eval_times.empty()) {
      const int b = chain.n_draws();
      const GridSpec grid(static_cast<int>(chain.g2.cols()));
      Eigen::MatrixXd vals(b, eval_times.size());
      for (int r = 0; r < b; ++r) {
        LatentCurve c{chain.g2.row(r), 0.0, CurveKind::event};
        const Eigen::VectorXd cum = cumulative_curve(c, grid, /*rescaled=*/true);
        for (std::size_t k = 0; k < eval_times.size(); ++k) {
          const double s = std::min(1.0, eval_times[k] / chain.t_max);
          vals(r, k) = cum[cell_index(s, grid) - 1];
        }
      }
      for (std::size_t k = 0; k < eval_times.size(); ++k)
        out.push_back(col_est("Lambda0_t" + std::to_string(k + 1), vals.col(k)));
    }
    return out;
  };
}

inline std::map<std::string, double> study_truth_map(const ScenarioSpec& spec,
                                                     const std::vector<double>& eval_times) {
  std::map<std::string, double> truth;
  for (int j = 0; j < spec.beta_true.size(); ++j)
    truth["beta_" + std::to_string(j + 1)] = spec.beta_true[j];
  for (int j = 0; j < spec.gamma_true.size(); ++j)
    truth["gamma_" + std::to_string(j + 1)] = spec.gamma_true[j];
  for (std::size_t k = 0; k < eval_times.size(); ++k)
    truth["Lambda0_t" + std::to_string(k + 1)] = rescaled_cumulative_truth(spec, eval_times[k]);
  return truth;
}

// Simulate/fit/record R times and aggregate bias, RMSE and coverage.
// Replicates run on independent seed streams; failures are counted and
// excluded, never silently dropped.
inline StudyResult replicate_study(const ScenarioSpec& spec, int replicates,
                                   const FitConfig& fit_cfg, const std::vector<double>& eval_times,
                                   std::uint64_t master_seed, int jobs = 1,
                                   const Estimator& custom_estimator = nullptr) {
  if (replicates < 2) throw std::invalid_argument("replicate_study: need at least 2 replicates");
  const Estimator est =
      custom_estimator ? custom_estimator : gibbs_estimator(fit_cfg, eval_times);
  const auto truth = study_truth_map(spec, eval_times);

  std::vector<std::vector<ParamEstimate>> results(replicates);
  std::vector<std::string> errors(replicates);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= replicates) return;
      try {
        auto [data, sim_truth] =
            simulate_dataset(spec, Rng::stream_seed(master_seed, static_cast<std::uint64_t>(r)));
        results[r] = est(data, sim_truth);
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  StudyResult out;
  std::map<std::string, std::vector<std::array<double, 3>>> by_param;  // est, lo, hi
  for (int r = 0; r < replicates; ++r) {
    if (!errors[r].empty()) {
      ++out.n_failed;
      out.failures.push_back("replicate " + std::to_string(r) + ": " + errors[r]);
      continue;
    }
    for (const auto& pe : results[r]) {
      const auto it = truth.find(pe.name);
      const double tv = it == truth.end() ? 0.0 : it->second;
      out.detail.push_back({r, pe.name, pe.estimate, tv, pe.lo95, pe.hi95});
      by_param[pe.name].push_back({pe.estimate, pe.lo95, pe.hi95});
    }
  }
  for (const auto& [name, rows] : by_param) {
    StudyRow row;
    row.param = name;
    const auto it = truth.find(name);
    row.truth = it == truth.end() ? 0.0 : it->second;
    double se = 0.0, s2 = 0.0, cov = 0.0;
    for (const auto& a : rows) {
      se += a[0] - row.truth;
      s2 += (a[0] - row.truth) * (a[0] - row.truth);
      cov += (a[1] <= row.truth && row.truth <= a[2]) ? 1.0 : 0.0;
    }
    row.n_used = static_cast<int>(rows.size());
    row.bias = se / row.n_used;
    row.rmse = std::sqrt(s2 / row.n_used);
    row.cp = cov / row.n_used;
    out.summary.push_back(row);
  }
  return out;
}

}  // namespace pcox
