#include "rerand/inference.hpp"

#include <algorithm>
#include <cmath>

#include "rerand/error.hpp"

namespace rerand {

namespace {

struct ArmFit {
  std::size_t count = 0;
  double mean = 0.0;
  double s2 = 0.0;
  Eigen::VectorXd s_yx;  // (n_z - 1)^{-1} sum (Y_i - Ybar_z)(X_i - Xbar_z)
  double s2_resid = 0.0;
};

ArmFit fit_arm(const ObservedData& data, std::uint8_t arm, HcMode hc) {
  const Eigen::Index k = data.covariates.cols();
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    if (data.asg.z[i] == arm) rows.push_back(static_cast<Eigen::Index>(i));
  }
  ArmFit fit;
  fit.count = rows.size();
  const auto nz = static_cast<Eigen::Index>(rows.size());
  const double denom = static_cast<double>(nz - 1);
  const std::string arm_name = arm ? "treated" : "control";

  Eigen::VectorXd y(nz);
  Eigen::MatrixXd x(nz, k);
  for (Eigen::Index r = 0; r < nz; ++r) {
    y(r) = data.y[static_cast<std::size_t>(rows[r])];
    x.row(r) = data.covariates.row(rows[r]);
  }
  fit.mean = y.mean();
  const Eigen::VectorXd yc = y.array() - fit.mean;
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  fit.s2 = yc.squaredNorm() / denom;
  fit.s_yx = xc.transpose() * yc / denom;

  if (k == 0) {
    // Intercept-only fit: residuals are the centered outcomes and every
    // within-arm leverage is 1/n_z.
    const double h = 1.0 / static_cast<double>(nz);
    double kappa2 = 1.0;
    if (hc == HcMode::HC2) kappa2 = 1.0 / (1.0 - h);
    if (hc == HcMode::HC3) kappa2 = 1.0 / ((1.0 - h) * (1.0 - h));
    fit.s2_resid = kappa2 * fit.s2;
    return fit;
  }

  if (hc != HcMode::HC0 && nz < k + 2) {
    throw ValidationError("HC" + std::to_string(static_cast<int>(hc)) + " needs at least K + 2 = " +
                          std::to_string(k + 2) + " units in the " + arm_name + " arm, got " + std::to_string(nz));
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
  const Eigen::VectorXd resid = yc - xc * qr.solve(yc);

  Eigen::VectorXd kappa = Eigen::VectorXd::Ones(nz);
  if (hc == HcMode::HC1) {
    kappa.setConstant(std::sqrt(static_cast<double>(nz - 1) / static_cast<double>(nz - k - 1)));
  } else if (hc == HcMode::HC2 || hc == HcMode::HC3) {
    if (qr.rank() < k) throw SingularCovarianceError("covariates are collinear within the " + arm_name + " arm");
    // Leverage for [1, X] equals 1/n_z plus the hat value of the centered covariates.
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(nz, k);
    for (Eigen::Index r = 0; r < nz; ++r) {
      const double h = 1.0 / static_cast<double>(nz) + q.row(r).squaredNorm();
      if (h >= 1.0 - 1e-10) {
        throw DegenerateDataError("leverage of one for unit " + std::to_string(rows[r] + 1) + " in the " + arm_name +
                                  " arm");
      }
      kappa(r) = hc == HcMode::HC2 ? 1.0 / std::sqrt(1.0 - h) : 1.0 / (1.0 - h);
    }
  }
  fit.s2_resid = resid.cwiseProduct(kappa).squaredNorm() / denom;
  return fit;
}

}  // namespace

std::string to_string(HcMode hc) { return "HC" + std::to_string(static_cast<int>(hc)); }

std::string to_string(CiMethod method) { return method == CiMethod::Constrained ? "constrained" : "wald"; }

HcMode hc_from_int(int v) {
  if (v < 0 || v > 3) throw ValidationError("HC mode must be 0, 1, 2 or 3, got " + std::to_string(v));
  return static_cast<HcMode>(v);
}

void ObservedData::validate() const {
  const std::size_t n = y.size();
  if (asg.n() != n) throw ValidationError("assignment length differs from outcome length");
  if (static_cast<std::size_t>(covariates.rows()) != n && covariates.cols() > 0) {
    throw ValidationError("covariate rows differ from outcome length");
  }
  for (const double v : y) {
    if (!std::isfinite(v)) throw ValidationError("outcomes must be finite");
  }
  if (asg.n1 < 1 || asg.n0() < 1) throw ValidationError("both arms must be nonempty");
}

ObservedData observe(const FinitePopulation& pop, const Assignment& asg) {
  if (asg.n() != pop.n()) throw ValidationError("assignment length differs from population size");
  const auto& y1 = pop.y1();
  const auto& y0 = pop.y0();
  ObservedData data;
  data.y.resize(pop.n());
  for (std::size_t i = 0; i < pop.n(); ++i) data.y[i] = asg.z[i] ? y1[i] : y0[i];
  data.asg = asg;
  data.covariates = pop.covariates();
  return data;
}

double diff_in_means(const ObservedData& data) {
  data.validate();
  double s1 = 0.0, s0 = 0.0;
  for (std::size_t i = 0; i < data.y.size(); ++i) (data.asg.z[i] ? s1 : s0) += data.y[i];
  return s1 / static_cast<double>(data.asg.n1) - s0 / static_cast<double>(data.asg.n0());
}

VarianceEstimate estimate_variance_r2(const ObservedData& data, HcMode hc) {
  data.validate();
  const std::size_t n = data.y.size();
  if (n < 4 || data.asg.n1 < 2 || data.asg.n0() < 2) {
    throw ValidationError("variance estimation needs n >= 4 and at least two units per arm");
  }
  const ArmFit t = fit_arm(data, 1, hc);
  const ArmFit c = fit_arm(data, 0, hc);
  const auto n1 = static_cast<double>(t.count);
  const auto n0 = static_cast<double>(c.count);

  VarianceEstimate out;
  out.s2_treated = t.s2;
  out.s2_control = c.s2;
  out.s2_treated_resid = t.s2_resid;
  out.s2_control_resid = c.s2_resid;
  if (data.covariates.cols() > 0) {
    const CovariateMoments moments(data.covariates);
    out.s2_tau_x = moments.quadratic_form(t.s_yx - c.s_yx);
  }
  out.v_hat = t.s2 / n1 + c.s2 / n0 - out.s2_tau_x / static_cast<double>(n);
  if (!(out.v_hat > 0.0)) {
    throw DegenerateDataError("estimated variance is not positive; the outcome carries no usable variation");
  }
  if (data.covariates.cols() == 0) {
    out.r2_hat = 0.0;
  } else {
    const double r2 = 1.0 - (t.s2_resid / n1 + c.s2_resid / n0) / out.v_hat;
    out.r2_hat = std::clamp(r2, 0.0, kR2Ceiling);
  }
  return out;
}

namespace {

InferenceResult assemble(const ObservedData& data, double alpha, CiMethod method, HcMode hc,
                         const ConvolutionQuantiles* cached, int k, double a, const McConfig* cfg) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  InferenceResult out;
  out.tau_hat = diff_in_means(data);
  const VarianceEstimate ve = estimate_variance_r2(data, hc);
  out.v_hat = ve.v_hat;
  out.r2_hat = ve.r2_hat;
  out.method = method;
  out.hc = hc;
  out.alpha = alpha;
  out.k = k;
  out.a = a;
  const double level = 1.0 - 0.5 * alpha;
  if (method == CiMethod::Wald) {
    out.nu_used = std::sqrt(1.0 - ve.r2_hat) * normal_quantile(level);
  } else if (cached) {
    out.nu_used = cached->quantile(level, ve.r2_hat);
  } else {
    out.nu_used = nu_quantile(level, k, a, ve.r2_hat, *cfg);
  }
  const double half = std::sqrt(ve.v_hat) * out.nu_used;
  out.ci_lower = out.tau_hat - half;
  out.ci_upper = out.tau_hat + half;
  return out;
}

}  // namespace

InferenceResult confidence_interval(const ObservedData& data, int k, double a, double alpha, CiMethod method,
                                    HcMode hc, const McConfig& cfg) {
  InferenceResult out = assemble(data, alpha, method, hc, nullptr, k, a, &cfg);
  out.seed = cfg.seed;
  return out;
}

InferenceResult confidence_interval(const ObservedData& data, const ConvolutionQuantiles& quantiles,
                                    std::uint64_t seed, double alpha, CiMethod method, HcMode hc) {
  InferenceResult out =
      assemble(data, alpha, method, hc, &quantiles, quantiles.law().k(), quantiles.law().a(), nullptr);
  out.seed = seed;
  return out;
}

}  // namespace rerand
