#include "rerand/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rerand/constrained_gaussian.hpp"
#include "rerand/error.hpp"
#include "rerand/parallel.hpp"
#include "rerand/random.hpp"
#include "rerand/specialfn.hpp"

namespace rerand {

namespace {

constexpr std::uint64_t kPowerStartStream = 0x50573;

// Variance of y, its covariance with the covariates and the variance of its
// linear projection on them, all with divisor n - 1.
struct Projection {
  double s2 = 0.0;
  double s2_explained = 0.0;
  Eigen::VectorXd beta;  // S_X^{-2} S_{X,y}
  Eigen::VectorXd centered;
};

class Projector {
 public:
  explicit Projector(const FinitePopulation& pop) : n_(pop.n()), k_(pop.k()) {
    if (k_ > 0) {
      moments_.emplace(pop.covariates(), pop.covariate_names());
      xc_ = pop.covariates().rowwise() - moments_->mean().transpose();
    }
  }

  Projection operator()(const Eigen::VectorXd& y) const {
    Projection out;
    out.centered = y.array() - y.mean();
    const double denom = static_cast<double>(n_ - 1);
    out.s2 = out.centered.squaredNorm() / denom;
    if (k_ > 0) {
      const Eigen::VectorXd s_xy = xc_.transpose() * out.centered / denom;
      out.beta = moments_->solve(s_xy);
      out.s2_explained = s_xy.dot(out.beta);
    }
    return out;
  }

  Eigen::VectorXd residual(const Projection& p) const {
    if (k_ == 0) return p.centered;
    return p.centered - xc_ * p.beta;
  }

 private:
  std::size_t n_, k_;
  std::optional<CovariateMoments> moments_;
  Eigen::MatrixXd xc_;
};

void require_outcomes(const FinitePopulation& pop) {
  if (!pop.has_outcomes()) throw ValidationError("both potential outcomes are required");
}

double gamma_scale(const FinitePopulation& pop) {
  return std::pow(static_cast<double>(pop.k() + 1), 0.25) /
         std::sqrt(static_cast<double>(pop.n()) * pop.r1() * pop.r0());
}

std::vector<std::vector<std::uint32_t>> acceptable_sets(const FinitePopulation& pop, double a) {
  const BalanceCriterion crit(pop);
  std::vector<std::vector<std::uint32_t>> out;
  for_each_assignment(pop.n(), pop.n1(), [&](const std::vector<std::uint32_t>& t) {
    if (crit.from_treated(t) <= a) out.push_back(t);
  });
  if (out.empty()) throw ValidationError("no assignment satisfies M <= a");
  return out;
}

}  // namespace

Eigen::VectorXd centered_weighted_outcome(const FinitePopulation& pop) {
  require_outcomes(pop);
  const Eigen::VectorXd y = pop.r0() * pop.y1() + pop.r1() * pop.y0();
  return y.array() - y.mean();
}

PopulationEstimands population_estimands(const FinitePopulation& pop) {
  require_outcomes(pop);
  const Projector project(pop);
  const Eigen::VectorXd y1 = pop.y1();
  const Eigen::VectorXd y0 = pop.y0();
  const Projection p1 = project(y1);
  const Projection p0 = project(y0);
  const Projection pt = project(y1 - y0);
  const auto n = static_cast<double>(pop.n());
  const auto n1 = static_cast<double>(pop.n1());
  const auto n0 = static_cast<double>(pop.n0());

  PopulationEstimands out;
  out.tau = y1.mean() - y0.mean();
  out.v_tautau = p1.s2 / n1 + p0.s2 / n0 - pt.s2 / n;
  out.s2_tau_resid = pt.s2 - pt.s2_explained;
  if (!(out.v_tautau > 0.0)) throw DegenerateDataError("V_tautau is not positive");
  out.r2 = (p1.s2_explained / n1 + p0.s2_explained / n0 - pt.s2_explained / n) / out.v_tautau;
  return out;
}

double v_tautau_from_weighted(const FinitePopulation& pop) {
  const Eigen::VectorXd yt = centered_weighted_outcome(pop);
  const auto n = static_cast<double>(pop.n());
  return yt.squaredNorm() / (n * (n - 1.0) * pop.r1() * pop.r0());
}

double gamma_n(const FinitePopulation& pop) {
  require_outcomes(pop);
  const auto n = static_cast<Eigen::Index>(pop.n());
  const auto k = static_cast<Eigen::Index>(pop.k());
  Eigen::MatrixXd u(n, k + 1);
  u.col(0) = pop.r0() * pop.y1() + pop.r1() * pop.y0();
  if (k > 0) u.rightCols(k) = pop.covariates();
  const Eigen::MatrixXd uc = u.rowwise() - u.colwise().mean();
  const Eigen::MatrixXd cov = uc.transpose() * uc / static_cast<double>(n - 1);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  if (!(lambda.minCoeff() > kSingularityTolerance * lambda.maxCoeff())) {
    throw SingularCovarianceError("covariance of (weighted outcome, covariates) is singular");
  }
  const Eigen::MatrixXd inv_root =
      eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::MatrixXd std_u = uc * inv_root;  // inv_root is symmetric
  double third = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) third += std::pow(std_u.row(i).norm(), 3.0);
  return gamma_scale(pop) * third / static_cast<double>(n);
}

GammaDecomposition gamma_decomposed(const FinitePopulation& pop) {
  require_outcomes(pop);
  const Projector project(pop);
  const Eigen::VectorXd y = pop.r0() * pop.y1() + pop.r1() * pop.y0();
  const Projection py = project(y);
  const Eigen::VectorXd resid = project.residual(py);
  const auto n = static_cast<double>(pop.n());
  const double sd = std::sqrt(resid.squaredNorm() / (n - 1.0));
  if (!(sd > 1e-10 * std::sqrt(py.s2))) {
    throw DegenerateDataError("degenerate residuals: the weighted outcome is linear in the covariates");
  }

  GammaDecomposition out;
  out.leverage = leverage_scores(pop);
  const Eigen::VectorXd e = resid / sd;
  double combined = 0.0, abs3 = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double h = out.leverage.h[static_cast<std::size_t>(i)];
    combined += std::pow(e(i) * e(i) + (n - 1.0) * h, 1.5);
    abs3 += std::pow(std::fabs(e(i)), 3.0);
  }
  out.residual_third_moment = abs3 / n;
  out.gamma_n = gamma_scale(pop) * combined / n;
  out.gamma_tilde = gamma_scale(pop) * out.residual_third_moment + gamma_leverage_term(pop, out.leverage);

  const double slack = 1e-12 * out.gamma_tilde;
  if (out.gamma_n < out.gamma_tilde / (4.0 * std::sqrt(2.0)) - slack ||
      out.gamma_n > std::sqrt(2.0) * out.gamma_tilde + slack) {
    throw Error("gamma_n lies outside its gamma_tilde sandwich");
  }
  return out;
}

double gamma_leverage_term(const FinitePopulation& pop, const LeverageReport& leverage) {
  return std::pow(static_cast<double>(pop.k() + 1), 0.25) / std::sqrt(pop.r1() * pop.r0()) * leverage.sum_h32;
}

double gamma_lower_bound(std::size_t n, std::size_t n1, std::size_t k) {
  const auto nd = static_cast<double>(n);
  const double r1 = static_cast<double>(n1) / nd;
  const double r0 = 1.0 - r1;
  return std::pow(2.0, -1.5) / std::sqrt(nd * r1 * r0) * std::pow(static_cast<double>(k + 1), 1.75);
}

double delta_bound(double gamma) {
  if (!(gamma >= 0.0)) throw ValidationError("gamma must be nonnegative");
  return 174.0 * gamma + 7.0 * std::cbrt(gamma);
}

double condition6_quantity(const FinitePopulation& pop, std::size_t k, double p) {
  require_outcomes(pop);
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("acceptance probability must lie in (0, 1]");
  const Projector project(pop);
  const Projection p1 = project(pop.y1());
  const Projection p0 = project(pop.y0());
  const double peak = std::max(p1.centered.cwiseAbs2().maxCoeff(), p0.centered.cwiseAbs2().maxCoeff());
  const double denom = pop.r0() * (p1.s2 - p1.s2_explained) + pop.r1() * (p0.s2 - p0.s2_explained);
  if (!(denom > 0.0)) throw DegenerateDataError("potential outcomes are linear in the covariates");
  double log_term = std::max(1.0, -std::log(p));
  if (k > 0) log_term = std::max(log_term, std::log(static_cast<double>(k)));
  const double dims = static_cast<double>(std::max<std::size_t>(k, 1)) / (pop.r1() * pop.r0());
  return peak / denom * dims * std::sqrt(log_term / static_cast<double>(pop.n()));
}

DesignMoments exact_design_moments(const FinitePopulation& pop, double a) {
  const auto sets = acceptable_sets(pop, a);
  const auto n = static_cast<Eigen::Index>(pop.n());
  DesignMoments out;
  out.designs = sets.size();
  out.pi = Eigen::VectorXd::Zero(n);
  for (const auto& t : sets) {
    for (const auto i : t) out.pi(i) += 1.0;
  }
  out.pi /= static_cast<double>(sets.size());
  out.omega = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd dz(n);
  for (const auto& t : sets) {
    dz = -out.pi;
    for (const auto i : t) dz(i) += 1.0;
    out.omega.noalias() += dz * dz.transpose();
  }
  out.omega /= static_cast<double>(sets.size());
  return out;
}

BiasMse design_bias_mse(const FinitePopulation& pop, const DesignMoments& moments) {
  const Eigen::VectorXd yt = centered_weighted_outcome(pop);
  const Eigen::VectorXd d = moments.pi.array() - pop.r1();
  const double scale = static_cast<double>(pop.n()) * pop.r1() * pop.r0();
  BiasMse out;
  out.bias = d.dot(yt) / scale;
  const double dy = d.dot(yt);
  out.mse = (yt.dot(moments.omega * yt) + dy * dy) / (scale * scale);
  return out;
}

BiasRmse max_bias_rmse_from_draws(std::size_t n, std::size_t n1,
                                  const std::vector<std::vector<std::uint32_t>>& treated, bool sample_divisor,
                                  std::uint64_t seed) {
  const std::size_t r = treated.size();
  if (r < 2) throw ValidationError("at least two assignments are needed for design moments");
  const auto nn = static_cast<Eigen::Index>(n);
  const double r1 = static_cast<double>(n1) / static_cast<double>(n);
  const double r0 = 1.0 - r1;

  Eigen::VectorXd pi = Eigen::VectorXd::Zero(nn);
  for (const auto& t : treated) {
    if (t.size() != n1) throw ValidationError("every assignment must treat exactly n1 units");
    for (const auto i : t) pi(i) += 1.0;
  }
  pi /= static_cast<double>(r);
  const Eigen::VectorXd d = pi.array() - r1;
  const double divisor = sample_divisor ? static_cast<double>(r - 1) : static_cast<double>(r);

  std::vector<double> proj(r);
  auto apply = [&](const Eigen::VectorXd& v) {
    const double pv = pi.dot(v);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(nn);
    double total = 0.0;
    for (std::size_t s = 0; s < r; ++s) {
      double c = -pv;
      for (const auto i : treated[s]) c += v(i);
      proj[s] = c;
      total += c;
    }
    for (std::size_t s = 0; s < r; ++s) {
      for (const auto i : treated[s]) out(i) += proj[s];
    }
    out = (out - total * pi) / divisor;
    out += d * d.dot(v);
    return out;
  };

  BiasRmse out;
  out.designs = r;
  double best = -1.0;
  Eigen::VectorXd best_vec;
  // Lanczos with full reorthogonalization: the Krylov extension of power
  // iteration, stopped once the Ritz residual |beta_m s_m| certifies the top
  // eigenvalue to kEigenTolerance relative accuracy.
  const Eigen::Index max_dim = std::min<Eigen::Index>(nn, kLanczosMaxDimension);
  auto lanczos = [&](Eigen::VectorXd q) {
    const double qn = q.norm();
    if (qn == 0.0) return;
    Eigen::MatrixXd basis(nn, max_dim);
    basis.col(0) = q / qn;
    std::vector<double> alpha, beta;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    for (Eigen::Index j = 0; j < max_dim; ++j) {
      Eigen::VectorXd w = apply(basis.col(j));
      const double a = basis.col(j).dot(w);
      alpha.push_back(a);
      for (int pass = 0; pass < 2; ++pass) {
        w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
      }
      const double b = w.norm();
      const Eigen::Map<const Eigen::VectorXd> diag(alpha.data(), j + 1);
      const Eigen::Map<const Eigen::VectorXd> sub(beta.data(), j);
      tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      const Eigen::Index top = j;  // eigenvalues come sorted ascending
      const double theta = tri.eigenvalues()(top);
      const double residual = b * std::fabs(tri.eigenvectors()(j, top));
      out.iterations = std::max(out.iterations, static_cast<int>(j + 1));
      const bool last = j + 1 == max_dim || b <= 1e-14 * std::max(1.0, std::fabs(theta));
      if (last || residual <= kEigenTolerance * std::fabs(theta)) {
        if (theta > best) {
          best = theta;
          best_vec = basis.leftCols(j + 1) * tri.eigenvectors().col(top);
        }
        return;
      }
      beta.push_back(b);
      basis.col(j + 1) = w / b;
    }
  };
  // The all-ones vector lies in the null space of every fixed-n1 design, so
  // the seeded random start is what normally finds the top eigenvalue.
  lanczos(Eigen::VectorXd::Ones(nn));
  CounterRng rng(seed, kPowerStartStream);
  Eigen::VectorXd start(nn);
  for (Eigen::Index i = 0; i < nn; ++i) start(i) = rng.normal();
  lanczos(start);

  const double c = std::sqrt(static_cast<double>(n - 1) / (static_cast<double>(n) * r1 * r0));
  out.max_bias = c * d.norm();
  best = std::max(best, 0.0);
  out.max_rmse = c * std::sqrt(best);

  if (sample_divisor && best > 0.0) {
    // Delta method on the Rayleigh quotient along the leading eigenvector.
    const double pv = pi.dot(best_vec);
    double mean = 0.0, m2 = 0.0;
    for (std::size_t s = 0; s < r; ++s) {
      double q = -pv;
      for (const auto i : treated[s]) q += best_vec(i);
      q *= q;
      const double delta = q - mean;
      mean += delta / static_cast<double>(s + 1);
      m2 += delta * (q - mean);
    }
    const double se_lambda = std::sqrt(m2 / static_cast<double>(r - 1) / static_cast<double>(r));
    out.max_rmse_se = c * se_lambda / (2.0 * std::sqrt(best));
  }
  return out;
}

BiasRmse max_bias_rmse_exact(const FinitePopulation& pop, double a) {
  return max_bias_rmse_from_draws(pop.n(), pop.n1(), acceptable_sets(pop, a), false);
}

BiasRmse max_bias_rmse_mc(const FinitePopulation& pop, double a, std::size_t draws, std::uint64_t seed,
                          std::uint64_t max_draws, unsigned threads) {
  if (draws < 1000) throw ValidationError("Monte Carlo bias/RMSE needs at least 1000 draws");
  const RemSampler sampler(pop, a);
  std::vector<std::vector<std::uint32_t>> treated(draws);
  for_each_chunk(draws, threads, [&](std::size_t r) {
    treated[r] = sampler.draw(seed, r + 1, max_draws).assignment.treated();
  });
  return max_bias_rmse_from_draws(pop.n(), pop.n1(), treated, true, seed);
}

DiagnosticsReport diagnose(const FinitePopulation& pop, const DiagnoseOptions& opts) {
  if (opts.p.has_value() == opts.a.has_value()) {
    throw ValidationError("exactly one of the acceptance probability p or the threshold a is required");
  }
  DiagnosticsReport out;
  out.n = pop.n();
  out.n1 = pop.n1();
  out.k = pop.k();
  const int k = static_cast<int>(pop.k());
  if (opts.p) {
    DesignSpec spec = DesignSpec::from_acceptance(*opts.p, opts.seed);
    out.a = threshold(spec, pop.k());
    out.p = *opts.p;
  } else {
    DesignSpec spec = DesignSpec::direct(*opts.a, opts.seed);
    spec.validate();
    out.a = *opts.a;
    out.p = (k == 0 || out.a == kInfiniteThreshold) ? 1.0 : chi2_cdf(out.a, k);
  }
  out.one_minus_v = k == 0 ? 0.0 : 1.0 - v_Ka(k, out.a);
  out.leverage = leverage_scores(pop);
  out.gamma_leverage_term = gamma_leverage_term(pop, out.leverage);
  out.gamma_lower_bound = gamma_lower_bound(pop.n(), pop.n1(), pop.k());

  if (pop.has_outcomes()) {
    const GammaDecomposition g = gamma_decomposed(pop);
    out.gamma_n = g.gamma_n;
    out.gamma_tilde = g.gamma_tilde;
    out.residual_third_moment = g.residual_third_moment;
    out.delta_bound = delta_bound(g.gamma_n);
    out.condition6 = condition6_quantity(pop, pop.k(), out.p);
  }
  if (opts.exact_bias) {
    out.bias_rmse = max_bias_rmse_exact(pop, out.a);
  } else if (opts.bias_draws > 0) {
    out.bias_rmse = max_bias_rmse_mc(pop, out.a, opts.bias_draws, opts.seed, opts.max_draws, opts.threads);
  }
  return out;
}

}  // namespace rerand
