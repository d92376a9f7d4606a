#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rerand/constrained_gaussian.hpp"
#include "rerand/design.hpp"

namespace rerand {

enum class HcMode { HC0 = 0, HC1 = 1, HC2 = 2, HC3 = 3 };
enum class CiMethod { Constrained, Wald };

std::string to_string(HcMode hc);
std::string to_string(CiMethod method);
HcMode hc_from_int(int v);

// Observed outcomes Y_i = Z_i Y_i(1) + (1 - Z_i) Y_i(0) with the assignment
// and the covariates used for adjustment (n x K, K may be 0).
struct ObservedData {
  std::vector<double> y;
  Assignment asg;
  Eigen::MatrixXd covariates;

  void validate() const;
};

ObservedData observe(const FinitePopulation& pop, const Assignment& asg);

double diff_in_means(const ObservedData& data);

struct VarianceEstimate {
  double v_hat = 0.0;
  double r2_hat = 0.0;
  double s2_treated = 0.0;
  double s2_control = 0.0;
  // Rescaled within-arm residual variances, used as s^2_{z\X}.
  double s2_treated_resid = 0.0;
  double s2_control_resid = 0.0;
  double s2_tau_x = 0.0;
};

inline constexpr double kR2Ceiling = 1.0 - 1e-12;

// V_hat = s1^2/n1 + s0^2/n0 - s^2_{tau|X}/n and
// R2_hat = 1 - (s^2_{1\X}/n1 + s^2_{0\X}/n0) / V_hat, clamped to [0, 1 - 1e-12].
//
// s^2_{z\X} is the sample variance (divisor n_z - 1) of the within-arm OLS
// residuals of y on an intercept and the covariates, each residual scaled by
// kappa_i for the chosen HC mode. s^2_{tau|X} uses the pooled covariate
// covariance S^2_X.
VarianceEstimate estimate_variance_r2(const ObservedData& data, HcMode hc);

struct InferenceResult {
  double tau_hat = 0.0;
  double v_hat = 0.0;
  double r2_hat = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  CiMethod method = CiMethod::Constrained;
  HcMode hc = HcMode::HC0;
  double alpha = 0.05;
  // nu_{1-alpha/2,K,a}(R2_hat) for the constrained interval; for Wald the
  // multiplier sqrt(1 - R2_hat) z_{1-alpha/2} applied to sqrt(V_hat).
  double nu_used = 0.0;
  int k = 0;
  double a = 0.0;
  std::uint64_t seed = 0;

  double half_width() const noexcept { return 0.5 * (ci_upper - ci_lower); }
};

InferenceResult confidence_interval(const ObservedData& data, int k, double a, double alpha, CiMethod method,
                                    HcMode hc, const McConfig& cfg);

// Same interval with the Monte Carlo draws supplied by the caller, so
// replication loops pay for the convolution sample once.
InferenceResult confidence_interval(const ObservedData& data, const ConvolutionQuantiles& quantiles,
                                    std::uint64_t seed, double alpha, CiMethod method, HcMode hc);

}  // namespace rerand
