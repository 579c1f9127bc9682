#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "engine.hpp"
#include "grid.hpp"
#include "rng.hpp"

namespace pcox {

// Future-subject prediction request. The window is in original time units
// and must lie inside the fitted horizon; the latent curve is not
// extrapolated.
struct PredictionRequest {
  Eigen::VectorXd x_new;
  double window_lo = 0.0;
  double window_hi = 0.0;
  int n_draws_per_sample = 1;

  void validate(const ChainOutput& chain) const {
    if (x_new.size() != chain.gamma.cols())
      throw std::invalid_argument("prediction covariates have wrong length");
    if (window_lo < 0.0 || window_hi < window_lo)
      throw std::invalid_argument("prediction window must satisfy 0 <= lo <= hi");
    if (window_hi > chain.t_max * (1.0 + 1e-12))
      throw std::invalid_argument("prediction window outside fitted horizon");
    if (n_draws_per_sample < 1)
      throw std::invalid_argument("n_draws_per_sample must be at least 1");
  }
};

struct PredictiveDistribution {
  std::vector<std::pair<long, double>> pmf;  // empirical, sorted by count
  double mean = 0.0;
  long lo95 = 0, hi95 = 0;
  long n_samples = 0;

  double pmf_at(long k) const {
    for (const auto& [v, p] : pmf)
      if (v == k) return p;
    return 0.0;
  }
};

struct DiseaseFreeEstimate {
  double rao_blackwell = 0.0;  // mean of exp(-E) over draws; the reported value
  double empirical = 0.0;      // fraction of sampled counts equal to zero

  double value() const { return rao_blackwell; }
};

namespace detail {

// Per-draw Poisson exposure E = exp(x'beta) * u * integral of lambda0 over
// the window. The frailty stream is separate from the count stream so that
// nested windows under a shared seed reuse identical frailty draws.
template <class PerDraw>
inline void predictive_sweep(const ChainOutput& chain, const PredictionRequest& req,
                             std::uint64_t seed, PerDraw&& per_draw) {
  req.validate(chain);
  const int b = chain.n_draws();
  if (b < 1) throw std::invalid_argument("predictive draw requires a non-empty chain");
  const GridSpec grid(static_cast<int>(chain.g2.cols()));
  const double lo = req.window_lo / chain.t_max;
  const double hi = std::min(req.window_hi / chain.t_max, 1.0);
  Rng u_rng = Rng::stream(seed, 0);

  for (int r = 0; r < b; ++r) {
    const double xb = req.x_new.dot(Eigen::VectorXd(chain.beta.row(r)));
    const double d22 = chain.d(r, 2);
    LatentCurve c{chain.g2.row(r), 0.0, CurveKind::event};
    const double integral = (hi > lo) ? integral_exp(c, grid, lo, hi) : 0.0;
    for (int k = 0; k < req.n_draws_per_sample; ++k) {
      const double u = std::exp(u_rng.normal(0.0, std::sqrt(std::max(0.0, d22))));
      per_draw(std::exp(xb) * u * integral);
    }
  }
}

}  // namespace detail

// Pooled posterior predictive sample of the recurrence count over the
// window: one frailty and one Poisson count per stored draw (times the
// variance-reduction knob).
inline PredictiveDistribution predictive_counts(const ChainOutput& chain,
                                                const PredictionRequest& req,
                                                std::uint64_t seed) {
  Rng y_rng = Rng::stream(seed, 1);
  std::vector<long> samples;
  detail::predictive_sweep(chain, req, seed,
                           [&](double exposure) { samples.push_back(y_rng.poisson(exposure)); });

  PredictiveDistribution out;
  out.n_samples = static_cast<long>(samples.size());
  std::map<long, long> counts;
  double sum = 0.0;
  for (long y : samples) {
    ++counts[y];
    sum += static_cast<double>(y);
  }
  for (const auto& [v, c] : counts)
    out.pmf.emplace_back(v, static_cast<double>(c) / out.n_samples);
  out.mean = sum / out.n_samples;
  std::sort(samples.begin(), samples.end());
  out.lo95 = samples[static_cast<std::size_t>(0.025 * (samples.size() - 1))];
  out.hi95 = samples[static_cast<std::size_t>(std::ceil(0.975 * (samples.size() - 1)))];
  return out;
}

// P(no recurrence in the window): empirical frequency of zeros alongside a
// Rao-Blackwellized average of exp(-E), which has lower variance and is the
// reported value.
inline DiseaseFreeEstimate disease_free_prob(const ChainOutput& chain,
                                             const PredictionRequest& req, std::uint64_t seed) {
  Rng y_rng = Rng::stream(seed, 1);
  double rb = 0.0, zeros = 0.0;
  long n = 0;
  detail::predictive_sweep(chain, req, seed, [&](double exposure) {
    rb += std::exp(-exposure);
    zeros += y_rng.poisson(exposure) == 0 ? 1.0 : 0.0;
    ++n;
  });
  return {rb / n, zeros / n};
}

}  // namespace pcox
