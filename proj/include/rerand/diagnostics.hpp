#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "rerand/design.hpp"
#include "rerand/population.hpp"

namespace rerand {

// Finite-population quantities under complete randomization.
struct PopulationEstimands {
  double tau = 0.0;
  double v_tautau = 0.0;      // S1^2/n1 + S0^2/n0 - S_tau^2/n
  double r2 = 0.0;            // squared multiple correlation of (tau_hat, tau_hat_X)
  double s2_tau_resid = 0.0;  // S^2_{tau\X} = S^2_tau - S^2_{tau|X}
};

PopulationEstimands population_estimands(const FinitePopulation& pop);

// y_i = r0 Y_i(1) + r1 Y_i(0), centered.
Eigen::VectorXd centered_weighted_outcome(const FinitePopulation& pop);

// ytilde^T ytilde / (n (n-1) r1 r0); equals V_tautau.
double v_tautau_from_weighted(const FinitePopulation& pop);

double gamma_n(const FinitePopulation& pop);

struct GammaDecomposition {
  double gamma_n = 0.0;
  double gamma_tilde = 0.0;
  double residual_third_moment = 0.0;  // n^{-1} sum |e_i|^3
  LeverageReport leverage;
};

// gamma_n through the standardized combined residual e_i and the centered
// leverages, plus gamma_tilde. Throws DegenerateDataError("degenerate
// residuals") when the outcomes are exactly linear in the covariates.
GammaDecomposition gamma_decomposed(const FinitePopulation& pop);

// Second term of gamma_tilde, available before outcomes are collected:
// (K+1)^{1/4} / sqrt(r1 r0) * sum_i H_ii^{3/2}.
double gamma_leverage_term(const FinitePopulation& pop, const LeverageReport& leverage);

double gamma_lower_bound(std::size_t n, std::size_t n1, std::size_t k);

// 174 gamma + 7 gamma^{1/3}.
double delta_bound(double gamma);

double condition6_quantity(const FinitePopulation& pop, std::size_t k, double p);

// First two moments of the assignment vector under a design.
struct DesignMoments {
  Eigen::VectorXd pi;
  Eigen::MatrixXd omega;
  std::size_t designs = 0;
};

// Uniform weights over the acceptable assignments {M <= a}, covariance with
// divisor equal to the number of acceptable assignments.
DesignMoments exact_design_moments(const FinitePopulation& pop, double a);

struct BiasMse {
  double bias = 0.0;
  double mse = 0.0;
};

// E(tau_hat - tau) and E(tau_hat - tau)^2 from the design moments.
BiasMse design_bias_mse(const FinitePopulation& pop, const DesignMoments& moments);

struct BiasRmse {
  double max_bias = 0.0;
  double max_rmse = 0.0;
  double max_rmse_se = 0.0;  // Monte Carlo standard error; 0 in exact mode
  std::size_t designs = 0;
  int iterations = 0;
};

inline constexpr double kEigenTolerance = 1e-13;
inline constexpr long kLanczosMaxDimension = 400;

// Worst-case standardized bias and RMSE over outcome configurations, from a
// list of assignments given as treated-index sets. Omega is applied
// matrix-free inside a Lanczos iteration, so memory stays O(R n1 + n m) for a
// Krylov dimension m of at most kLanczosMaxDimension.
// sample_divisor selects R - 1 (Monte Carlo) instead of R (exact) for Omega;
// pi always uses R.
BiasRmse max_bias_rmse_from_draws(std::size_t n, std::size_t n1,
                                  const std::vector<std::vector<std::uint32_t>>& treated, bool sample_divisor,
                                  std::uint64_t seed = 0);

BiasRmse max_bias_rmse_exact(const FinitePopulation& pop, double a);

// R independent ReM draws; draw r uses stream r of the seed.
BiasRmse max_bias_rmse_mc(const FinitePopulation& pop, double a, std::size_t draws, std::uint64_t seed,
                          std::uint64_t max_draws = 10'000'000, unsigned threads = 1);

struct DiagnoseOptions {
  std::optional<double> p;  // acceptance probability, or
  std::optional<double> a;  // direct threshold
  std::size_t bias_draws = 0;  // 0 skips max bias / RMSE
  bool exact_bias = false;
  std::uint64_t seed = 0;
  std::uint64_t max_draws = 10'000'000;
  unsigned threads = 1;
};

struct DiagnosticsReport {
  std::size_t n = 0;
  std::size_t n1 = 0;
  std::size_t k = 0;
  double a = 0.0;
  double p = 0.0;
  double one_minus_v = 0.0;
  LeverageReport leverage;
  double gamma_leverage_term = 0.0;
  double gamma_lower_bound = 0.0;
  // Present only when both potential outcomes are known.
  std::optional<double> gamma_n;
  std::optional<double> gamma_tilde;
  std::optional<double> residual_third_moment;
  std::optional<double> delta_bound;
  std::optional<double> condition6;
  std::optional<BiasRmse> bias_rmse;
};

DiagnosticsReport diagnose(const FinitePopulation& pop, const DiagnoseOptions& opts);

}  // namespace rerand
