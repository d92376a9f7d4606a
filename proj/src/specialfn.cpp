#include "rerand/specialfn.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rerand/error.hpp"

namespace rerand {

namespace {

constexpr double kEps = 1e-17;
constexpr double kTiny = 1e-300;
constexpr int kMaxTerms = 100000;

// Returns log of the series factor: P(s, x) = exp(log_prefix) * sum, with
// log_prefix = s ln x - x - lgamma(s + 1).
double log_series_sum(double s, double x) {
  double term = 1.0;
  double sum = 1.0;
  for (int n = 1; n < kMaxTerms; ++n) {
    term *= x / (s + n);
    sum += term;
    if (term < sum * kEps) break;
  }
  return std::log(sum);
}

// Continued fraction for Q(s, x) without the exp(-x) x^s / Gamma(s) prefix.
double continued_fraction(double s, double x) {
  double b = x + 1.0 - s;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -i * (i - s);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

struct GammaParts {
  double log_p;  // log P(s, x)
  double q;      // Q(s, x)
};

GammaParts incomplete_gamma(double s, double x, double log_gamma_s) {
  if (x <= 0.0) return {-std::numeric_limits<double>::infinity(), 1.0};
  if (x < s + 1.0) {
    const double log_p = s * std::log(x) - x - (log_gamma_s + std::log(s)) + log_series_sum(s, x);
    return {log_p, -std::expm1(log_p)};
  }
  const double q = std::exp(s * std::log(x) - x - log_gamma_s) * continued_fraction(s, x);
  return {std::log1p(-q), q};
}

void require_nonnegative(double x) {
  if (!(x >= 0.0)) throw ValidationError("chi-square argument must be nonnegative, got " + std::to_string(x));
}

void require_probability(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("probability must lie in (0, 1), got " + std::to_string(p));
}

}  // namespace

double regularized_gamma_p(double s, double x) {
  if (!(s > 0.0)) throw ValidationError("incomplete gamma shape must be positive");
  if (x < 0.0) throw ValidationError("incomplete gamma argument must be nonnegative");
  const GammaParts g = incomplete_gamma(s, x, std::lgamma(s));
  return x < s + 1.0 ? std::exp(g.log_p) : 1.0 - g.q;
}

double regularized_gamma_q(double s, double x) {
  if (!(s > 0.0)) throw ValidationError("incomplete gamma shape must be positive");
  if (x < 0.0) throw ValidationError("incomplete gamma argument must be nonnegative");
  return incomplete_gamma(s, x, std::lgamma(s)).q;
}

ChiSquareLaw::ChiSquareLaw(int k) : k_(k), shape_(0.5 * k), log_gamma_shape_(std::lgamma(0.5 * k)) {
  if (k < 1) throw ValidationError("chi-square degrees of freedom must be >= 1, got " + std::to_string(k));
}

double ChiSquareLaw::cdf(double x) const {
  require_nonnegative(x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  const double half = 0.5 * x;
  const GammaParts g = incomplete_gamma(shape_, half, log_gamma_shape_);
  return half < shape_ + 1.0 ? std::exp(g.log_p) : 1.0 - g.q;
}

double ChiSquareLaw::log_cdf(double x) const {
  require_nonnegative(x);
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (std::isinf(x)) return 0.0;
  return incomplete_gamma(shape_, 0.5 * x, log_gamma_shape_).log_p;
}

double ChiSquareLaw::survival(double x) const {
  require_nonnegative(x);
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return incomplete_gamma(shape_, 0.5 * x, log_gamma_shape_).q;
}

double ChiSquareLaw::log_pdf(double x) const {
  require_nonnegative(x);
  if (x == 0.0) {
    if (k_ == 1) return std::numeric_limits<double>::infinity();
    if (k_ == 2) return std::log(0.5);
    return -std::numeric_limits<double>::infinity();
  }
  return (shape_ - 1.0) * std::log(x) - 0.5 * x - shape_ * std::numbers::ln2 - log_gamma_shape_;
}

double ChiSquareLaw::pdf(double x) const { return std::exp(log_pdf(x)); }

double ChiSquareLaw::initial_guess(double p) const {
  // Wilson-Hilferty cube-root normal approximation.
  const double c = 2.0 / (9.0 * k_);
  const double z = normal_quantile(p);
  const double w = 1.0 - c + z * std::sqrt(c);
  if (w > 0.0) {
    const double a = k_ * w * w * w;
    if (a > 0.0 && p > 1e-3) return a;
  }
  // Small-argument expansion P(s, x) ~ x^s / Gamma(s + 1).
  const double log_half = (std::log(p) + log_gamma_shape_ + std::log(shape_)) / shape_;
  return 2.0 * std::exp(log_half);
}

double ChiSquareLaw::lower_tail_from_log(double log_p) const {
  // Safeguarded Newton on t = ln a for g(t) = log_cdf(e^t) - log_p, which is
  // increasing in t.
  double t;
  if (log_p > std::log(1e-300)) {
    t = std::log(initial_guess(std::exp(log_p)));
  } else {
    t = std::numbers::ln2 + (log_p + log_gamma_shape_ + std::log(shape_)) / shape_;
  }
  auto g = [&](double tt) { return log_cdf(std::exp(tt)) - log_p; };

  double lo = t, hi = t;
  double step = 0.5;
  while (g(lo) > 0.0) {
    lo -= step;
    step *= 2.0;
  }
  step = 0.5;
  while (g(hi) < 0.0) {
    hi += step;
    step *= 2.0;
  }
  t = 0.5 * (lo + hi);
  if (lo == hi) return std::exp(lo);
  for (int iter = 0; iter < 200; ++iter) {
    const double a = std::exp(t);
    const double log_c = log_cdf(a);
    const double val = log_c - log_p;
    if (val == 0.0) return a;
    if (val < 0.0) lo = t; else hi = t;
    const double slope = std::exp(t + log_pdf(a) - log_c);
    double next = t - val / slope;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::fabs(next - t) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(t))) {
      return std::exp(next);
    }
    t = next;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(t))) break;
  }
  return std::exp(t);
}

double ChiSquareLaw::upper_tail(double q) const {
  // Safeguarded Newton on a for survival(a) = q, decreasing in a.
  double a = initial_guess(1.0 - q);
  double lo = 0.0, hi = a;
  while (survival(hi) > q) hi *= 2.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double s = survival(a);
    const double val = s - q;
    if (val == 0.0) return a;
    if (val > 0.0) lo = a; else hi = a;
    double next = a + val / pdf(a);
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::fabs(next - a) <= 4.0 * std::numeric_limits<double>::epsilon() * a) return next;
    a = next;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * a) break;
  }
  return a;
}

double ChiSquareLaw::quantile(double p) const {
  require_probability(p);
  if (p <= 0.5) return lower_tail_from_log(std::log(p));
  return upper_tail(1.0 - p);
}

double ChiSquareLaw::quantile_from_log(double log_p) const {
  if (!(log_p < 0.0)) throw ValidationError("log probability must be negative");
  if (log_p <= -std::numbers::ln2) return lower_tail_from_log(log_p);
  return upper_tail(-std::expm1(log_p));
}

double chi2_cdf(double x, int k) { return ChiSquareLaw(k).cdf(x); }
double chi2_log_cdf(double x, int k) { return ChiSquareLaw(k).log_cdf(x); }
double chi2_quantile(double p, int k) { return ChiSquareLaw(k).quantile(p); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  require_probability(p);
  // Acklam's rational approximation followed by Halley refinement against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    // Work in the nearer tail so the residual keeps relative precision.
    const double e = p < 0.5 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  }
  return x;
}

}  // namespace rerand
