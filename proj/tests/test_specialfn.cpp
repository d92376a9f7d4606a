#include <doctest.h>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>

#include "rerand/error.hpp"
#include "rerand/specialfn.hpp"

using namespace rerand;

namespace {

// Lower regularized gamma by the plain power series in long double.
long double series_gamma_p(long double s, long double x) {
  long double term = 1.0L / s, sum = term;
  for (int n = 1; n < 100000; ++n) {
    term *= x / (s + n);
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  return std::exp(s * std::log(x) - x - std::lgamma(s)) * sum;
}

}  // namespace

TEST_CASE("chi-square cdf closed forms") {
  CHECK(chi2_cdf(2.0, 2) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-14));
  for (int k : {1, 2, 5, 50, 512}) CHECK(chi2_cdf(0.0, k) == 0.0);
  // chi2_1 cdf is erf(sqrt(x/2))
  for (double x : {0.01, 0.5, 1.0, 3.84, 10.0})
    CHECK(std::abs(chi2_cdf(x, 1) - std::erf(std::sqrt(x / 2.0))) < 1e-13);
}

TEST_CASE("chi-square cdf against long-double series") {
  const long double ref = series_gamma_p(1.5L, 7.81L / 2.0L);
  CHECK(std::abs(chi2_cdf(7.81, 3) - static_cast<double>(ref)) < 1e-10);
  for (int k : {1, 3, 8, 25, 100, 300}) {
    for (double x : {0.1, 1.0, 0.5 * k, 1.0 * k, 1.5 * k}) {
      const long double r = series_gamma_p(0.5L * k, 0.5L * x);
      CHECK(std::abs(chi2_cdf(x, k) - static_cast<double>(r)) < 1e-12);
    }
  }
}

TEST_CASE("incomplete gamma against Boost across regimes") {
  for (int k = 1; k <= 512; k += 7) {
    for (double f : {1e-3, 0.1, 0.5, 0.9, 1.0, 1.1, 2.0, 4.0}) {
      const double x = f * k;
      const double s = 0.5 * k;
      CHECK(std::abs(regularized_gamma_p(s, 0.5 * x) - boost::math::gamma_p(s, 0.5 * x)) < 1e-12);
      CHECK(std::abs(regularized_gamma_q(s, 0.5 * x) - boost::math::gamma_q(s, 0.5 * x)) < 1e-12);
    }
  }
}

TEST_CASE("chi-square quantile examples") {
  CHECK(chi2_quantile(0.001, 2) == doctest::Approx(-2.0 * std::log(0.999)).epsilon(1e-12));
  const double a = chi2_quantile(0.001, 5);
  CHECK(std::abs(chi2_cdf(a, 5) - 0.001) < 1e-10);
}

TEST_CASE("round trips over the probability and degree grid") {
  const double ps[] = {1e-8, 1e-6, 1e-4, 1e-3, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999, 1 - 1e-6, 1 - 1e-8};
  for (int k : {1, 2, 3, 4, 5, 7, 10, 16, 33, 64, 100, 150, 200, 300, 400, 512}) {
    ChiSquareLaw law(k);
    for (double p : ps) {
      const double q = law.quantile(p);
      CHECK(std::abs(law.cdf(q) - p) <= 1e-8 * std::max(p, 1e-2));
      const double back = law.quantile(law.cdf(q));
      CHECK(std::abs(back - q) <= 1e-8 * std::max(1.0, q));
    }
  }
}

TEST_CASE("monotone and stochastically ordered") {
  for (int k : {1, 2, 5, 20, 100}) {
    double prev = 0.0;
    for (double x = 0.05; x < 3.0 * k + 10; x *= 1.3) {
      const double c = chi2_cdf(x, k);
      CHECK(c > prev);
      CHECK(chi2_cdf(x, k + 2) <= c);
      prev = c;
    }
  }
}

TEST_CASE("log-scale tail far below double range") {
  ChiSquareLaw law(50);
  const double a = law.quantile_from_log(-2500.0);
  CHECK(std::isfinite(a));
  CHECK(a > 0.0);
  CHECK(law.log_cdf(a) == doctest::Approx(-2500.0).epsilon(1e-10));
  ChiSquareLaw small(5);
  const double q = small.quantile(1e-6);
  CHECK(small.quantile_from_log(std::log(1e-6)) == doctest::Approx(q).epsilon(1e-9));
}

TEST_CASE("pdf integrates to the cdf") {
  ChiSquareLaw law(7);
  const int m = 20000;
  const double hi = 9.0, h = hi / m;
  double integral = law.pdf(0.0) + law.pdf(hi);
  for (int i = 1; i < m; ++i) integral += (i % 2 ? 4.0 : 2.0) * law.pdf(i * h);
  integral *= h / 3.0;
  CHECK(integral == doctest::Approx(law.cdf(hi)).epsilon(1e-10));
  CHECK(law.cdf(3.0) + law.survival(3.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("normal cdf and quantile") {
  CHECK(normal_cdf(0.0) == 0.5);
  for (double x : {-8.0, -3.0, -1.0, 0.3, 2.0, 6.0})
    CHECK(std::abs(normal_cdf(x) - 0.5 * boost::math::erfc(-x / std::sqrt(2.0))) < 1e-15);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  // 1 - p is exact enough for the symmetry check only when p is not tiny
  for (double p : {1e-4, 0.025, 0.2, 0.5, 0.8}) CHECK(normal_quantile(p) == doctest::Approx(-normal_quantile(1.0 - p)).epsilon(1e-9));
  for (double p : {1e-10, 1e-4, 0.025, 0.2, 0.5, 0.8, 0.999})
    CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) <= 1e-10 * std::max(p, 1e-3));
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(chi2_cdf(-1.0, 3), ValidationError);
  CHECK_THROWS_AS(chi2_quantile(0.0, 3), ValidationError);
  CHECK_THROWS_AS(chi2_quantile(1.0, 3), ValidationError);
  CHECK_THROWS_AS(chi2_quantile(0.5, 0), ValidationError);
  CHECK_THROWS_AS(normal_quantile(1.5), ValidationError);
}
