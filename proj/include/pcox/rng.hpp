#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pcox {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seeded random stream with self-contained variate generators.
// All draws are produced from raw mt19937_64 output so that a given seed
// yields the same sequence on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // Independent substream for worker index `idx` under a master seed.
  static std::uint64_t stream_seed(std::uint64_t master, std::uint64_t idx) {
    return splitmix64(master) ^ splitmix64(idx + 0x632BE59BD9B4E019ULL);
  }
  static Rng stream(std::uint64_t master, std::uint64_t idx) {
    return Rng(stream_seed(master, idx));
  }

  // Uniform on the open interval (0,1); never returns an endpoint.
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Marsaglia polar method, second variate discarded so the generator
  // carries no hidden cache (keeps checkpoint/restart byte-exact).
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential(double rate = 1.0) { return -std::log(uniform()) / rate; }

  // Marsaglia-Tsang; `rate` is the inverse scale.
  double gamma(double shape, double rate = 1.0) {
    if (shape <= 0.0 || rate <= 0.0)
      throw std::domain_error("gamma: shape and rate must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double chisq(double df) { return 2.0 * gamma(0.5 * df, 1.0); }

  // 1/X with X ~ Gamma(shape, rate=scale), i.e. density x^{-a-1} e^{-b/x}.
  double inv_gamma(double shape, double scale) { return scale == 0.0 ? 0.0 : 1.0 / gamma(shape, scale); }

  long poisson(double mean) {
    if (mean < 0.0 || !std::isfinite(mean))
      throw std::domain_error("poisson: mean must be finite and nonnegative");
    if (mean == 0.0) return 0;
    if (mean < 10.0) {
      // Knuth product form
      const double l = std::exp(-mean);
      double p = 1.0;
      long k = -1;
      do {
        ++k;
        p *= uniform();
      } while (p > l);
      return k;
    }
    return poisson_ptrs(mean);
  }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (!is) throw std::invalid_argument("Rng::set_state: malformed state string");
  }

 private:
  // Hoermann's PTRS transformed-rejection sampler for mean >= 10.
  long poisson_ptrs(double mu) {
    const double b = 0.931 + 2.53 * std::sqrt(mu);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_mu = std::log(mu);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::fabs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + mu + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          kf * log_mu - mu - std::lgamma(kf + 1.0))
        return static_cast<long>(kf);
    }
  }

  std::mt19937_64 gen_;
};

}  // namespace pcox
