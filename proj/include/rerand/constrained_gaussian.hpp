#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "rerand/random.hpp"
#include "rerand/specialfn.hpp"

namespace rerand {

inline constexpr double kInfiniteThreshold = std::numeric_limits<double>::infinity();

// Monte Carlo settings for quantiles of the Gaussian / constrained-Gaussian
// convolution.
struct McConfig {
  std::size_t samples = 2'000'000;
  std::uint64_t seed = 0;
  bool antithetic = true;
  unsigned threads = 1;

  void validate() const;
};

// L_{K,a}: first coordinate of a K-dimensional standard Gaussian vector D
// conditioned on D^T D <= a. Carries p = P(chi2_K <= a) and the variance
// v = P(chi2_{K+2} <= a) / P(chi2_K <= a).
class ConstrainedGaussianLaw {
 public:
  // a >= 0, or kInfiniteThreshold for the unconstrained Gaussian.
  ConstrainedGaussianLaw(int k, double a);
  // Threshold set to the p-quantile of chi2_K; p = 1 gives a = +inf.
  static ConstrainedGaussianLaw from_acceptance(int k, double p);
  static ConstrainedGaussianLaw from_log_acceptance(int k, double log_p);

  int k() const noexcept { return chi2_.k(); }
  double a() const noexcept { return a_; }
  double p() const noexcept { return p_; }
  double log_p() const noexcept { return log_p_; }
  double v() const noexcept { return v_; }
  bool unconstrained() const noexcept { return a_ == kInfiniteThreshold; }
  bool degenerate() const noexcept { return a_ == 0.0; }

  // Exact draw: L = s * sqrt(S * B) with S ~ chi2_K truncated to [0, a] by
  // inverse CDF, B ~ Beta(1/2, (K-1)/2) (B = 1 for K = 1), s = +-1.
  // Throws for the degenerate law a = 0.
  double sample(CounterRng& rng) const;

 private:
  ChiSquareLaw chi2_;
  double a_;
  double p_;
  double log_p_;
  double v_;
};

// v_{K,a} = P(chi2_{K+2} <= a) / P(chi2_K <= a); 1 at a = +inf, 0 at a = 0.
// Evaluated as a difference of log CDFs so tiny thresholds do not underflow.
double v_Ka(int k, double a);

// Seeded draws of (eps, L) reused across quantile queries with different R^2.
//
// With antithetic sampling every base draw (eps, L) is paired with
// (-eps, -L), so the empirical law is exactly symmetric. Quantiles above 1/2
// are then read from the absolute values of the base draws at 1-based rank
// ceil((2 alpha - 1) M); the median is exactly zero and lower quantiles are
// mirrored. Without antithetic pairing the alpha-quantile is the order
// statistic of rank ceil(alpha N). Draws come from fixed-size chunks on
// disjoint substreams, so results do not depend on the thread count.
class ConvolutionQuantiles {
 public:
  ConvolutionQuantiles(const ConstrainedGaussianLaw& law, const McConfig& cfg);

  // alpha-quantile of sqrt(1 - r2) eps + sqrt(r2) L, clamped to the exact
  // bounds between sqrt(1 - r2) z_alpha and z_alpha.
  double quantile(double alpha, double r2) const;

  const ConstrainedGaussianLaw& law() const noexcept { return law_; }
  const std::vector<double>& eps() const noexcept { return eps_; }
  const std::vector<double>& l_draws() const noexcept { return l_; }
  bool antithetic() const noexcept { return antithetic_; }

 private:
  ConstrainedGaussianLaw law_;
  bool antithetic_;
  std::vector<double> eps_;
  std::vector<double> l_;
};

double nu_quantile(double alpha, int k, double a, double r2, const McConfig& cfg);

struct PercentageReductions {
  double variance = 0.0;
  double quantile_range = 0.0;
};

// ((1 - v) r2, 1 - nu_{1-alpha/2}(r2) / z_{1-alpha/2}).
PercentageReductions percentage_reductions(int k, double a, double r2, double alpha, const McConfig& cfg);

}  // namespace rerand
