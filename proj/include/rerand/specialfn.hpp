#pragma once

namespace rerand {

// Regularized incomplete gamma functions P(s, x) and Q(s, x) = 1 - P(s, x).
// Series expansion for x < s + 1, Lentz continued fraction otherwise.
double regularized_gamma_p(double s, double x);
double regularized_gamma_q(double s, double x);

// Chi-square law with k >= 1 degrees of freedom.
//
// Caches lgamma(k/2) so repeated CDF and quantile evaluations (the truncated
// sampler calls quantile once per draw) skip the gamma-function setup. Lower
// tail quantities are also available on the log scale, which keeps
// acceptance probabilities far below the double-precision range usable.
class ChiSquareLaw {
 public:
  explicit ChiSquareLaw(int k);

  int k() const noexcept { return k_; }

  double cdf(double x) const;
  double log_cdf(double x) const;
  double survival(double x) const;
  double pdf(double x) const;
  double log_pdf(double x) const;

  // Returns a with cdf(a) == p; p in (0, 1).
  double quantile(double p) const;
  // Returns a with log_cdf(a) == log_p; log_p < 0. Works for log_p far below
  // log(DBL_MIN).
  double quantile_from_log(double log_p) const;

 private:
  double lower_tail_from_log(double log_p) const;
  double upper_tail(double q) const;
  double initial_guess(double p) const;

  int k_;
  double shape_;
  double log_gamma_shape_;
};

double chi2_cdf(double x, int k);
double chi2_log_cdf(double x, int k);
double chi2_quantile(double p, int k);

double normal_cdf(double x);
double normal_quantile(double p);

}  // namespace rerand
