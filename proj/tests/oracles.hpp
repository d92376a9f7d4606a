#pragma once

// Independent numerical oracles built on Boost.Math rather than the library's
// own special functions.

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <algorithm>
#include <limits>
#include <vector>

namespace oracle {

inline double chi2_cdf(double x, int k) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * k, 0.5 * x);
}

// CDF at x of sqrt(1 - r2) eps + sqrt(r2) L_{k,a}, by quadrature over the
// density of L: phi(l) P(chi2_{k-1} <= a - l^2) on |l| <= sqrt(a). The
// substitution l = sqrt(a) sin(t) removes the endpoint square-root behaviour.
class ConvolutionCdf {
 public:
  ConvolutionCdf(int k, double a, double r2, int nodes = 4000) : r2_(r2) {
    const double pi = std::acos(-1.0);
    const double ra = std::sqrt(a);
    const int m = nodes + (nodes % 2);
    const double h = pi / m;
    l_.resize(m + 1);
    w_.resize(m + 1);
    double total = 0.0;
    for (int i = 0; i <= m; ++i) {
      const double t = -0.5 * pi + i * h;
      const double l = ra * std::sin(t);
      const double rest = std::max(0.0, a - l * l);
      const double mass = k == 1 ? 1.0 : chi2_cdf(rest, k - 1);
      const double simpson = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      l_[i] = l;
      w_[i] = simpson * std::exp(-0.5 * l * l) * mass * ra * std::cos(t);
      total += w_[i];
    }
    for (auto& w : w_) w /= total;
  }

  double operator()(double x) const {
    const double c1 = std::sqrt(1.0 - r2_), c2 = std::sqrt(r2_);
    double s = 0.0;
    for (std::size_t i = 0; i < l_.size(); ++i) {
      const double u = (x - c2 * l_[i]) / c1;
      s += w_[i] * 0.5 * std::erfc(-u / std::sqrt(2.0));
    }
    return s;
  }

  double quantile(double alpha) const {
    double lo = -12.0, hi = 12.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      ((*this)(mid) < alpha ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  // Second moment of L, i.e. its variance.
  double l_variance() const {
    double s = 0.0;
    for (std::size_t i = 0; i < l_.size(); ++i) s += w_[i] * l_[i] * l_[i];
    return s;
  }

 private:
  double r2_;
  std::vector<double> l_, w_;
};

// K^{-1} E(chi2_K | chi2_K <= a) by Simpson's rule after x = u^2.
inline double truncated_chi2_mean_over_k(int k, double a, int nodes = 4000) {
  boost::math::chi_squared dist(k);
  const double ru = std::sqrt(a);
  const int m = nodes + (nodes % 2);
  const double h = ru / m;
  double s = 0.0;
  for (int i = 0; i <= m; ++i) {
    const double u = i * h;
    double f = 0.0;
    if (u > 0.0) f = u * u * boost::math::pdf(dist, u * u) * 2.0 * u;
    s += ((i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0)) * f;
  }
  s *= h / 3.0;
  return s / (k * boost::math::cdf(dist, a));
}

}  // namespace oracle
