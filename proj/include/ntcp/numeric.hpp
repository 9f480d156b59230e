#pragma once

#include <cmath>
#include <cstdint>

namespace ntcp {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Upper tail 1 - Phi(z), accurate for large positive z.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Inverse standard normal CDF (Wichura AS241, ~1e-16 relative accuracy).
// Returns -inf / +inf at p = 0 / 1 and NaN outside [0, 1].
double normal_quantile(double p);

inline double expit(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline constexpr double kProbClamp = 1e-12;

// Bernoulli log-likelihood of y under success probability expit(eta), with
// probabilities clamped to [1e-12, 1 - 1e-12].
inline double bernoulli_loglik(int y, double eta) {
  double p = y == 1 ? expit(eta) : expit(-eta);
  if (p < kProbClamp) p = kProbClamp;
  if (p > 1.0 - kProbClamp) p = 1.0 - kProbClamp;
  return std::log(p);
}

// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

}  // namespace ntcp
