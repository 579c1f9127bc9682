// pcox: simulate, fit, predict and diagnose bivariate log-Gaussian Cox
// process models for panel count data.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "pcox/pcox.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(pcox::detail::parse_double(tok, what));
  }
  if (out.empty()) throw std::invalid_argument(what + ": no values given");
  return out;
}

void write_meta(const fs::path& dir, const json& extra) {
  json meta = extra;
  meta["tool"] = "pcox";
  meta["format_version"] = 1;
  std::ofstream f(dir / "meta.json");
  if (!f) throw std::runtime_error("cannot write meta.json");
  f << meta.dump(2) << '\n';
}

pcox::FitConfig load_fit_config(const std::string& config_path) {
  if (config_path.empty()) return {};
  std::ifstream f(config_path);
  if (!f) throw std::invalid_argument("cannot open config file: " + config_path);
  return pcox::fit_config_from_json(json::parse(f));
}

struct FitOverrides {
  std::optional<int> n_iter, burn_in, thin, grid;
  std::optional<std::uint64_t> seed;
  std::string fixed_theta, nu;

  void apply(pcox::FitConfig& cfg) const {
    if (n_iter) cfg.n_iter = *n_iter;
    if (burn_in) cfg.burn_in = *burn_in;
    if (thin) cfg.thin = *thin;
    if (grid) cfg.grid_size = *grid;
    if (seed) cfg.seed = *seed;
    if (!fixed_theta.empty()) {
      const auto v = parse_doubles(fixed_theta, "--fixed-theta");
      if (v.size() != 2) throw std::invalid_argument("--fixed-theta needs two values");
      cfg.fixed_theta = {{v[0], v[1]}};
    }
    if (!nu.empty()) {
      const auto v = parse_doubles(nu, "--nu");
      if (v.size() != 2) throw std::invalid_argument("--nu needs two values");
      cfg.nu = {v[0], v[1]};
    }
  }
};

int cmd_simulate(int setting, int n, std::uint64_t seed, const std::string& out,
                 bool gamma_shape_scale) {
  pcox::ScenarioSpec spec = pcox::builtin_scenario(setting, n);
  if (gamma_shape_scale) spec.frailty.gamma_shape_scale = true;
  auto [data, truth] = pcox::simulate_dataset(spec, seed);
  fs::create_directories(out);
  pcox::write_dataset(data, (fs::path(out) / "events.csv").string(),
                      (fs::path(out) / "covariates.csv").string());

  json tj;
  tj["setting"] = setting;
  tj["n"] = n;
  tj["t_end"] = truth.t_end;
  tj["gamma"] = std::vector<double>(truth.gamma.data(), truth.gamma.data() + truth.gamma.size());
  tj["beta"] = std::vector<double>(truth.beta.data(), truth.beta.data() + truth.beta.size());
  tj["u_obs"] = truth.u_obs;
  tj["u_event"] = truth.u_event;
  tj["n_no_visit"] = truth.n_no_visit;
  std::ofstream tf(fs::path(out) / "truth.json");
  if (!tf) throw std::runtime_error("cannot write truth.json");
  tf << tj.dump(2) << '\n';

  write_meta(out, {{"subcommand", "simulate"}, {"setting", setting}, {"n", n}, {"seed", seed}});
  return 0;
}

int cmd_fit(const std::string& events, const std::string& covars, const std::string& config_path,
            const FitOverrides& ov, const std::string& out) {
  pcox::FitConfig cfg = load_fit_config(config_path);
  ov.apply(cfg);
  cfg.validate();
  const pcox::PanelDataset data = pcox::load_dataset(events, covars);
  pcox::validate_dataset(data, /*for_fit=*/true);

  for (int c = 0; c < cfg.n_chains; ++c) {
    pcox::FitConfig chain_cfg = cfg;
    chain_cfg.seed = c == 0 ? cfg.seed : pcox::Rng::stream_seed(cfg.seed, c);
    pcox::ChainOutput chain = pcox::gibbs_run(data, chain_cfg);
    const fs::path dir = c == 0 ? fs::path(out) : fs::path(out) / ("chain_" + std::to_string(c));
    pcox::save_chain(chain, dir.string());
    if (chain.n_draws() >= 2) pcox::save_summary(pcox::summarize(chain), dir.string());
  }
  return 0;
}

int cmd_predict(const std::string& chain_dir, const std::string& x_str,
                const std::string& window_str, int draws_per_sample, std::uint64_t seed,
                const std::string& out) {
  const pcox::ChainOutput chain = pcox::load_chain(chain_dir);
  pcox::PredictionRequest req;
  const auto xs = parse_doubles(x_str, "--x");
  req.x_new = Eigen::Map<const Eigen::VectorXd>(xs.data(), xs.size());
  const auto w = parse_doubles(window_str, "--window");
  if (w.size() != 2) throw std::invalid_argument("--window needs two values lo,hi");
  req.window_lo = w[0];
  req.window_hi = w[1];
  req.n_draws_per_sample = draws_per_sample;

  const auto dist = pcox::predictive_counts(chain, req, seed);
  const auto dfe = pcox::disease_free_prob(chain, req, seed);
  fs::create_directories(out);
  pcox::save_prediction(dist, dfe, (fs::path(out) / "pred.json").string());
  write_meta(out, {{"subcommand", "predict"},
                   {"chain", chain_dir},
                   {"x", xs},
                   {"window", w},
                   {"seed", seed},
                   {"n_draws_per_sample", draws_per_sample}});
  return 0;
}

int cmd_diagnose(const std::string& chain_dir, const std::string& out) {
  const pcox::ChainOutput chain = pcox::load_chain(chain_dir);
  const auto diags = pcox::diagnostics(chain);
  fs::create_directories(out);
  pcox::save_diagnostics(diags, (fs::path(out) / "diagnostics.csv").string());
  write_meta(out, {{"subcommand", "diagnose"}, {"chain", chain_dir}});
  return 0;
}

int cmd_study(int setting, int replicates, int n, const std::string& config_path,
              const FitOverrides& ov, const std::string& eval_str, int jobs, std::uint64_t seed,
              const std::string& out, bool gamma_shape_scale) {
  pcox::ScenarioSpec spec = pcox::builtin_scenario(setting, n);
  if (gamma_shape_scale) spec.frailty.gamma_shape_scale = true;
  pcox::FitConfig cfg =
      config_path.empty() ? pcox::scenario_fit_config(setting) : load_fit_config(config_path);
  ov.apply(cfg);
  cfg.validate();
  std::vector<double> eval_times;
  if (!eval_str.empty())
    eval_times = parse_doubles(eval_str, "--eval-times");
  else if (setting == 3)
    eval_times = {20.0, 40.0, 60.0, 80.0};

  const auto study = pcox::replicate_study(spec, replicates, cfg, eval_times, seed, jobs);
  pcox::save_study(study, out);
  json meta = {{"subcommand", "study"}, {"setting", setting},     {"replicates", replicates},
               {"n", n},                {"seed", seed},           {"jobs", jobs},
               {"eval_times", eval_times}, {"n_failed", study.n_failed},
               {"config", pcox::fit_config_to_json(cfg)}};
  meta["failures"] = study.failures;
  write_meta(out, meta);
  for (const auto& f : study.failures) std::cerr << "warning: " << f << '\n';
  return 0;
}

// Matched-iteration comparison of the two latent-curve samplers on the
// event-process conditional of a synthetic dataset: one row per iteration
// with each chain's conditional log density.
int cmd_bench(int n, int iters, std::uint64_t seed, const std::string& out) {
  pcox::ScenarioSpec spec = pcox::setting2(n);
  auto [data, truth] = pcox::simulate_dataset(spec, seed);
  std::erase_if(data.subjects, [](const pcox::Subject& s) { return s.obs_times.empty(); });

  pcox::FitConfig cfg = pcox::scenario_fit_config(2);
  cfg.seed = seed;
  cfg.n_iter = 2;
  cfg.burn_in = 1;
  pcox::GibbsChain warm(data, cfg);  // builds the frame and the initial state
  const pcox::ModelFrame frame(data, pcox::GridSpec(cfg.grid_size));
  pcox::ModelState state = warm.state();

  const pcox::GridSpec grid(cfg.grid_size);
  const pcox::KernelConfig kc{cfg.nu[1], (*cfg.fixed_theta)[1], state.sigma2[1]};
  const pcox::GramFactor gram = pcox::build_gram(grid.cell_centers(), kc);

  auto conditional = [&](const Eigen::VectorXd& q) {
    pcox::LatentCurve c{q, state.g2.mean_level, pcox::CurveKind::event};
    auto r = pcox::cond_g_logpdf_grad(pcox::CurveKind::event, c, state, frame, gram);
    return std::make_pair(r.logpdf, std::move(r.grad));
  };
  auto data_loglik = [&](const Eigen::VectorXd& q) {
    pcox::ModelState s = state;
    s.g2.values = q;
    return pcox::loglik_events(s, frame);
  };

  // both chains start well away from the conditional's bulk
  Eigen::VectorXd start = Eigen::VectorXd::Constant(grid.L, state.g2.mean_level - 3.0);
  Eigen::VectorXd q_hmc = start, q_ess = start;
  const Eigen::VectorXd mean = Eigen::VectorXd::Constant(grid.L, state.g2.mean_level);
  pcox::Rng rng_hmc = pcox::Rng::stream(seed, 11), rng_ess = pcox::Rng::stream(seed, 12);
  pcox::HmcSettings hs = cfg.hmc;
  pcox::DualAveraging adapt(hs.step_size, hs.target_accept);

  fs::create_directories(out);
  std::ofstream bf(fs::path(out) / "bench.csv");
  if (!bf) throw std::runtime_error("cannot write bench.csv");
  bf << "iter,logpost_hmc,logpost_ess\n";
  for (int it = 1; it <= iters; ++it) {
    auto r = pcox::hmc_step(q_hmc, conditional, gram, hs, rng_hmc);
    q_hmc = r.position;
    if (it <= iters / 2) hs.step_size = adapt.update(r.accept_prob);
    q_ess = pcox::ess_step(q_ess, data_loglik, mean, gram, rng_ess);
    bf << it << ',' << pcox::detail::fmt17(conditional(q_hmc).first) << ','
       << pcox::detail::fmt17(conditional(q_ess).first) << '\n';
  }
  write_meta(out, {{"subcommand", "bench-samplers"}, {"n", n}, {"iters", iters}, {"seed", seed}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bivariate log-Gaussian Cox process models for panel count data"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic panel count dataset");
  int setting = 2, n = 100;
  std::uint64_t seed = 1;
  std::string out = "out";
  bool gamma_ss = false;
  sim->add_option("--setting", setting, "Built-in scenario (1, 2 or 3)")->required();
  sim->add_option("--n", n, "Number of subjects");
  sim->add_option("--seed", seed, "RNG seed");
  sim->add_option("--out", out, "Output directory")->required();
  sim->add_flag("--gamma-shape-scale", gamma_ss,
                "Read Ga(a,b) frailty parameters as shape-scale instead of shape-rate");

  // fit
  auto* fit = app.add_subcommand("fit", "Run the Gibbs sampler on a dataset");
  std::string events, covars, config_path, fit_out;
  FitOverrides ov;
  fit->add_option("--events", events, "Events CSV (subject_id,time,cum_count)")->required();
  fit->add_option("--covars", covars, "Covariates CSV (subject_id,censor_time,...)")->required();
  fit->add_option("--config", config_path, "Fit configuration JSON");
  fit->add_option("--out", fit_out, "Output directory for the chain")->required();
  int ov_niter = 0, ov_burn = -1, ov_thin = 0, ov_grid = 0;
  std::uint64_t ov_seed = 0;
  bool has_seed = false;
  fit->add_option("--n-iter", ov_niter, "Total sweeps");
  fit->add_option("--burn-in", ov_burn, "Burn-in sweeps");
  fit->add_option("--thin", ov_thin, "Thinning stride");
  fit->add_option("--grid", ov_grid, "Grid cells L");
  fit->add_option("--seed", ov_seed, "RNG seed")->each([&](const std::string&) { has_seed = true; });
  fit->add_option("--fixed-theta", ov.fixed_theta, "Pre-fixed length-scales 'a,b' (rescaled units)");
  fit->add_option("--nu", ov.nu, "Matern shapes 'a,b'");

  // predict
  auto* pred = app.add_subcommand("predict", "Posterior predictive recurrence counts");
  std::string chain_dir, x_str, window_str, pred_out;
  int draws_per_sample = 1;
  std::uint64_t pred_seed = 1;
  pred->add_option("--chain", chain_dir, "Fitted chain directory")->required();
  pred->add_option("--x", x_str, "Future subject covariates 'x1,x2,...'")->required();
  pred->add_option("--window", window_str, "Prediction window 'lo,hi' in study units")->required();
  pred->add_option("--draws-per-sample", draws_per_sample, "Predictive draws per posterior draw");
  pred->add_option("--seed", pred_seed, "RNG seed");
  pred->add_option("--out", pred_out, "Output directory")->required();

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Convergence diagnostics for a fitted chain");
  std::string diag_chain, diag_out;
  diag->add_option("--chain", diag_chain, "Fitted chain directory")->required();
  diag->add_option("--out", diag_out, "Output directory")->required();

  // study
  auto* study = app.add_subcommand("study", "Replicated simulate-fit study with bias/RMSE/CP");
  int study_setting = 2, replicates = 10, study_n = 100, jobs = 1;
  std::uint64_t study_seed = 1;
  std::string study_out, eval_str, study_config;
  bool study_gamma_ss = false;
  study->add_option("--setting", study_setting, "Built-in scenario (1, 2 or 3)")->required();
  study->add_option("--replicates", replicates, "Number of replicates")->required();
  study->add_option("--n", study_n, "Subjects per replicate");
  study->add_option("--config", study_config, "Fit configuration JSON");
  study->add_option("--eval-times", eval_str, "Cumulative-curve evaluation times 't1,t2,...'");
  study->add_option("--jobs", jobs, "Parallel workers");
  study->add_option("--seed", study_seed, "Master RNG seed");
  study->add_option("--out", study_out, "Output directory")->required();
  study->add_flag("--gamma-shape-scale", study_gamma_ss,
                  "Read Ga(a,b) frailty parameters as shape-scale instead of shape-rate");
  FitOverrides study_ov;
  int sov_niter = 0, sov_burn = -1, sov_grid = 0;
  study->add_option("--n-iter", sov_niter, "Total sweeps per fit");
  study->add_option("--burn-in", sov_burn, "Burn-in sweeps per fit");
  study->add_option("--grid", sov_grid, "Grid cells L");

  // bench-samplers
  auto* bench = app.add_subcommand("bench-samplers",
                                   "Per-iteration log-posterior traces of HMC vs elliptical "
                                   "slice sampling on the event-curve conditional");
  int bench_n = 50, bench_iters = 200;
  std::uint64_t bench_seed = 1;
  std::string bench_out;
  bench->add_option("--n", bench_n, "Subjects in the synthetic dataset");
  bench->add_option("--iters", bench_iters, "Iterations per sampler");
  bench->add_option("--seed", bench_seed, "RNG seed");
  bench->add_option("--out", bench_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(setting, n, seed, out, gamma_ss);
    if (fit->parsed()) {
      if (ov_niter > 0) ov.n_iter = ov_niter;
      if (ov_burn >= 0) ov.burn_in = ov_burn;
      if (ov_thin > 0) ov.thin = ov_thin;
      if (ov_grid > 0) ov.grid = ov_grid;
      if (has_seed) ov.seed = ov_seed;
      return cmd_fit(events, covars, config_path, ov, fit_out);
    }
    if (pred->parsed())
      return cmd_predict(chain_dir, x_str, window_str, draws_per_sample, pred_seed, pred_out);
    if (diag->parsed()) return cmd_diagnose(diag_chain, diag_out);
    if (study->parsed()) {
      if (sov_niter > 0) study_ov.n_iter = sov_niter;
      if (sov_burn >= 0) study_ov.burn_in = sov_burn;
      if (sov_grid > 0) study_ov.grid = sov_grid;
      return cmd_study(study_setting, replicates, study_n, study_config, study_ov, eval_str, jobs,
                       study_seed, study_out, study_gamma_ss);
    }
    if (bench->parsed()) return cmd_bench(bench_n, bench_iters, bench_seed, bench_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
