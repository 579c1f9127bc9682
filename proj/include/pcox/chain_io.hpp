#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "engine.hpp"
#include "predict.hpp"
#include "simulate.hpp"

namespace pcox {

namespace detail {

// %.17g round-trips IEEE doubles exactly, which keeps chain files and the
// determinism contract byte-stable.
inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                             const Eigen::MatrixXd& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (std::size_t j = 0; j < header.size(); ++j) f << (j ? "," : "") << header[j];
  f << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) f << (c ? "," : "") << fmt17(m(r, c));
    f << '\n';
  }
}

inline Eigen::MatrixXd read_matrix_csv(const std::string& path, std::vector<std::string>* header) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::invalid_argument("empty file " + path);
  const auto head = split_csv_line(line);
  if (header) *header = head;
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != head.size())
      throw std::invalid_argument("ragged row in " + path);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& s : fields) row.push_back(parse_double(s, path));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(rows.size(), head.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < head.size(); ++c) m(r, c) = rows[r][c];
  return m;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

}  // namespace detail

inline nlohmann::json fit_config_to_json(const FitConfig& cfg) {
  nlohmann::json j;
  j["n_iter"] = cfg.n_iter;
  j["burn_in"] = cfg.burn_in;
  j["thin"] = cfg.thin;
  j["grid_size"] = cfg.grid_size;
  j["nu"] = {cfg.nu[0], cfg.nu[1]};
  j["prior"] = {{"k0", cfg.prior.k0},
                {"V0", {{cfg.prior.V0(0, 0), cfg.prior.V0(0, 1)},
                        {cfg.prior.V0(1, 0), cfg.prior.V0(1, 1)}}},
                {"a0", cfg.prior.a0},
                {"b0", cfg.prior.b0},
                {"theta_shape", {cfg.prior.theta_prior[0].shape, cfg.prior.theta_prior[1].shape}},
                {"theta_rate", {cfg.prior.theta_prior[0].rate, cfg.prior.theta_prior[1].rate}}};
  if (cfg.fixed_theta)
    j["fixed_theta"] = {(*cfg.fixed_theta)[0], (*cfg.fixed_theta)[1]};
  else
    j["fixed_theta"] = nullptr;
  j["theta_support"] = {cfg.theta_support[0], cfg.theta_support[1]};
  j["hmc"] = {{"step_size", cfg.hmc.step_size},
              {"n_leapfrog", cfg.hmc.n_leapfrog},
              {"target_accept", cfg.hmc.target_accept},
              {"adapt_iters", cfg.hmc.adapt_iters}};
  j["n_chains"] = cfg.n_chains;
  j["seed"] = cfg.seed;
  j["random_init"] = cfg.random_init;
  return j;
}

inline FitConfig fit_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"n_iter", "burn_in", "thin", "grid_size", "nu", "prior", "fixed_theta", "theta_support",
       "hmc", "n_chains", "seed", "random_init"},
      "fit config");
  FitConfig cfg;
  if (j.contains("n_iter")) cfg.n_iter = j["n_iter"].get<int>();
  if (j.contains("burn_in")) cfg.burn_in = j["burn_in"].get<int>();
  if (j.contains("thin")) cfg.thin = j["thin"].get<int>();
  if (j.contains("grid_size")) cfg.grid_size = j["grid_size"].get<int>();
  if (j.contains("nu")) {
    cfg.nu[0] = j["nu"][0].get<double>();
    cfg.nu[1] = j["nu"][1].get<double>();
  }
  if (j.contains("prior")) {
    const auto& p = j["prior"];
    detail::reject_unknown_keys(p, {"k0", "V0", "a0", "b0", "theta_shape", "theta_rate"},
                                "fit config prior");
    if (p.contains("k0")) cfg.prior.k0 = p["k0"].get<double>();
    if (p.contains("a0")) cfg.prior.a0 = p["a0"].get<double>();
    if (p.contains("b0")) cfg.prior.b0 = p["b0"].get<double>();
    if (p.contains("V0")) {
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) cfg.prior.V0(r, c) = p["V0"][r][c].get<double>();
    }
    if (p.contains("theta_shape")) {
      cfg.prior.theta_prior[0].shape = p["theta_shape"][0].get<double>();
      cfg.prior.theta_prior[1].shape = p["theta_shape"][1].get<double>();
    }
    if (p.contains("theta_rate")) {
      cfg.prior.theta_prior[0].rate = p["theta_rate"][0].get<double>();
      cfg.prior.theta_prior[1].rate = p["theta_rate"][1].get<double>();
    }
  }
  if (j.contains("fixed_theta") && !j["fixed_theta"].is_null())
    cfg.fixed_theta = {{j["fixed_theta"][0].get<double>(), j["fixed_theta"][1].get<double>()}};
  if (j.contains("theta_support")) {
    cfg.theta_support[0] = j["theta_support"][0].get<double>();
    cfg.theta_support[1] = j["theta_support"][1].get<double>();
  }
  if (j.contains("hmc")) {
    const auto& h = j["hmc"];
    detail::reject_unknown_keys(h, {"step_size", "n_leapfrog", "target_accept", "adapt_iters"},
                                "fit config hmc");
    if (h.contains("step_size")) cfg.hmc.step_size = h["step_size"].get<double>();
    if (h.contains("n_leapfrog")) cfg.hmc.n_leapfrog = h["n_leapfrog"].get<int>();
    if (h.contains("target_accept")) cfg.hmc.target_accept = h["target_accept"].get<double>();
    if (h.contains("adapt_iters")) cfg.hmc.adapt_iters = h["adapt_iters"].get<int>();
  }
  if (j.contains("n_chains")) cfg.n_chains = j["n_chains"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("random_init")) cfg.random_init = j["random_init"].get<bool>();
  return cfg;
}

inline void save_chain(const ChainOutput& chain, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto path = [&](const char* f) { return (fs::path(dir) / f).string(); };

  std::vector<std::string> gnames, bnames, znames, g1names, g2names;
  for (std::size_t j = 0; j < chain.covariate_names.size(); ++j) {
    gnames.push_back("gamma_" + chain.covariate_names[j]);
    bnames.push_back("beta_" + chain.covariate_names[j]);
  }
  for (int i = 0; i < chain.n_subjects; ++i) {
    znames.push_back("z1_" + std::to_string(i + 1));
    znames.push_back("z2_" + std::to_string(i + 1));
  }
  const int L = static_cast<int>(chain.g1.cols());
  for (int l = 1; l <= L; ++l) {
    g1names.push_back("g1_" + std::to_string(l));
    g2names.push_back("g2_" + std::to_string(l));
  }

  detail::write_matrix_csv(path("gamma.csv"), gnames, chain.gamma);
  detail::write_matrix_csv(path("beta.csv"), bnames, chain.beta);
  detail::write_matrix_csv(path("z.csv"), znames, chain.z);
  detail::write_matrix_csv(path("D.csv"), {"D11", "D12", "D22"}, chain.d);
  detail::write_matrix_csv(path("g1.csv"), g1names, chain.g1);
  detail::write_matrix_csv(path("g2.csv"), g2names, chain.g2);
  Eigen::MatrixXd hyper(chain.n_draws(), 6);
  hyper.col(0) = chain.gamma0;
  hyper.col(1) = chain.beta0;
  hyper.rightCols(4) = chain.hyper;
  detail::write_matrix_csv(path("hyper.csv"),
                           {"gamma0", "beta0", "sigma2_1", "sigma2_2", "theta_1", "theta_2"},
                           hyper);

  nlohmann::json meta;
  meta["kind"] = "pcox-chain";
  meta["format_version"] = 1;
  meta["seed"] = chain.config.seed;
  meta["t_max"] = chain.t_max;
  meta["n_subjects"] = chain.n_subjects;
  meta["covariates"] = chain.covariate_names;
  meta["grid_size"] = static_cast<int>(chain.g1.cols());
  meta["n_draws"] = chain.n_draws();
  meta["acceptance"] = {{"g1_hmc", chain.acceptance.g1_hmc},
                        {"g2_hmc", chain.acceptance.g2_hmc},
                        {"theta1", chain.acceptance.theta1},
                        {"theta2", chain.acceptance.theta2}};
  meta["step_size"] = {chain.final_step_size[0], chain.final_step_size[1]};
  meta["config"] = fit_config_to_json(chain.config);
  meta["config_hash"] = detail::fnv1a(meta["config"].dump());
  std::ofstream mf(path("meta.json"));
  if (!mf) throw std::runtime_error("cannot write meta.json");
  mf << meta.dump(2) << '\n';
}

inline ChainOutput load_chain(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto path = [&](const char* f) { return (fs::path(dir) / f).string(); };
  std::ifstream mf(path("meta.json"));
  if (!mf) throw std::invalid_argument("cannot open " + path("meta.json"));
  nlohmann::json meta = nlohmann::json::parse(mf);
  if (meta.value("kind", "") != "pcox-chain")
    throw std::invalid_argument("not a chain directory: " + dir);

  ChainOutput chain;
  chain.config = fit_config_from_json(meta["config"]);
  chain.t_max = meta["t_max"].get<double>();
  chain.n_subjects = meta["n_subjects"].get<int>();
  chain.covariate_names = meta["covariates"].get<std::vector<std::string>>();
  chain.acceptance.g1_hmc = meta["acceptance"]["g1_hmc"].get<double>();
  chain.acceptance.g2_hmc = meta["acceptance"]["g2_hmc"].get<double>();
  chain.acceptance.theta1 = meta["acceptance"]["theta1"].get<double>();
  chain.acceptance.theta2 = meta["acceptance"]["theta2"].get<double>();
  chain.final_step_size[0] = meta["step_size"][0].get<double>();
  chain.final_step_size[1] = meta["step_size"][1].get<double>();

  chain.gamma = detail::read_matrix_csv(path("gamma.csv"), nullptr);
  chain.beta = detail::read_matrix_csv(path("beta.csv"), nullptr);
  chain.z = detail::read_matrix_csv(path("z.csv"), nullptr);
  chain.d = detail::read_matrix_csv(path("D.csv"), nullptr);
  chain.g1 = detail::read_matrix_csv(path("g1.csv"), nullptr);
  chain.g2 = detail::read_matrix_csv(path("g2.csv"), nullptr);
  const Eigen::MatrixXd hyper = detail::read_matrix_csv(path("hyper.csv"), nullptr);
  chain.gamma0 = hyper.col(0);
  chain.beta0 = hyper.col(1);
  chain.hyper = hyper.rightCols(4);
  return chain;
}

inline void save_summary(const FitSummary& summary, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j;
  for (const auto& s : summary.scalars)
    j[s.name] = {{"mean", s.mean}, {"sd", s.sd}, {"lo95", s.lo95}, {"hi95", s.hi95}};
  std::ofstream f((fs::path(dir) / "summary.json").string());
  if (!f) throw std::runtime_error("cannot write summary.json");
  f << j.dump(2) << '\n';

  std::ofstream c((fs::path(dir) / "curves.csv").string());
  if (!c) throw std::runtime_error("cannot write curves.csv");
  c << "curve,t,mean,lo95,hi95\n";
  for (const auto& cv : summary.curves)
    for (std::size_t l = 0; l < cv.t.size(); ++l)
      c << cv.name << ',' << detail::fmt17(cv.t[l]) << ',' << detail::fmt17(cv.mean[l]) << ','
        << detail::fmt17(cv.lo95[l]) << ',' << detail::fmt17(cv.hi95[l]) << '\n';
}

inline void save_diagnostics(const std::vector<ScalarDiagnostics>& diags,
                             const std::string& path, int n_lags = 10) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "param,mean,ess,geweke_z,degenerate";
  for (int k = 1; k <= n_lags; ++k) f << ",ac_lag" << k;
  f << '\n';
  for (const auto& d : diags) {
    f << d.name << ',' << detail::fmt17(d.mean) << ',' << detail::fmt17(d.ess) << ','
      << detail::fmt17(d.geweke_z) << ',' << (d.degenerate ? 1 : 0);
    for (int k = 1; k <= n_lags; ++k)
      f << ',' << detail::fmt17(k <= static_cast<int>(d.autocorr.size()) ? d.autocorr[k - 1] : 0.0);
    f << '\n';
  }
}

inline void save_prediction(const PredictiveDistribution& dist, const DiseaseFreeEstimate& dfe,
                            const std::string& path) {
  nlohmann::json j;
  j["mean"] = dist.mean;
  j["lo95"] = dist.lo95;
  j["hi95"] = dist.hi95;
  j["n_samples"] = dist.n_samples;
  nlohmann::json pmf = nlohmann::json::array();
  for (const auto& [k, p] : dist.pmf) pmf.push_back({{"count", k}, {"prob", p}});
  j["pmf"] = pmf;
  j["disease_free"] = {{"rao_blackwell", dfe.rao_blackwell}, {"empirical", dfe.empirical}};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

inline void save_study(const StudyResult& study, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream d((fs::path(dir) / "study.csv").string());
  if (!d) throw std::runtime_error("cannot write study.csv");
  d << "replicate,param,estimate,truth,lo95,hi95\n";
  for (const auto& r : study.detail)
    d << r.replicate << ',' << r.param << ',' << detail::fmt17(r.estimate) << ','
      << detail::fmt17(r.truth) << ',' << detail::fmt17(r.lo95) << ',' << detail::fmt17(r.hi95)
      << '\n';

  std::ofstream s((fs::path(dir) / "study_summary.csv").string());
  if (!s) throw std::runtime_error("cannot write study_summary.csv");
  s << "param,truth,bias,rmse,cp,n_used,n_failed\n";
  for (const auto& r : study.summary)
    s << r.param << ',' << detail::fmt17(r.truth) << ',' << detail::fmt17(r.bias) << ','
      << detail::fmt17(r.rmse) << ',' << detail::fmt17(r.cp) << ',' << r.n_used << ','
      << study.n_failed << '\n';
}

}  // namespace pcox
