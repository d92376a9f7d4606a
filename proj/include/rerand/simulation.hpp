#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rerand/population.hpp"

namespace rerand {

// Synthetic stand-in for the STAR study population: five covariates styled
// after high-school GPA, age, gender, lives-at-home and rarely-puts-off-study,
// followed by independent t_2 noise columns up to k_max. Both potential
// outcomes equal a synthetic first-year GPA driven by the first covariates.
struct SurrogateOptions {
  std::size_t n = 974;
  std::size_t n1 = 118;
  std::size_t k_max = 200;
  std::uint64_t seed = 0;
};

FinitePopulation star_surrogate(const SurrogateOptions& opts);

// Gaussian covariates with outcomes Y(0) = X b + s e and Y(1) = Y(0) + 1 + X c,
// so individual effects are exactly linear in the covariates. The noise scale
// s is tuned by bisection until the population R^2 matches r2_target.
FinitePopulation linear_population(std::size_t n, std::size_t n1, std::size_t k, double r2_target,
                                   std::uint64_t seed);

// Maps scores to t_3 quantiles of their normalized ranks (rank - 1/2) / n,
// ties broken by unit order.
Eigen::VectorXd t3_rank_transform(const Eigen::VectorXd& score);

struct Scenario {
  std::vector<std::size_t> ks{0, 5, 9};
  std::vector<bool> trims{false, true};
  double p = 0.001;
  std::vector<std::string> outcomes{"linear", "adversarial"};
  std::size_t reps = 1000;
  std::size_t mc_samples = 20'000;
  double alpha = 0.05;
  double trim_lower = 0.025;
  double trim_upper = 0.975;
  std::uint64_t seed = 0;
  std::uint64_t max_draws = 10'000'000;
  unsigned threads = 1;

  void validate() const;
};

// One design (K, trim) crossed with one outcome model. With reps = 0 only the
// analytic columns are filled and outcome is empty.
struct ScenarioRow {
  std::size_t k = 0;
  bool trim = false;
  double one_minus_v = 0.0;
  double a = 0.0;
  std::optional<double> max_bias;
  std::optional<double> max_rmse;
  std::optional<double> max_rmse_se;
  std::optional<double> sum_h32;
  std::optional<double> max_h;
  std::optional<double> min_sum_h32;
  std::optional<double> min_max_h;
  std::string outcome;
  std::optional<double> bias_std;   // mean(tau_hat - tau) / sqrt(V_tautau)
  std::optional<double> mse_ratio;  // mean (tau_hat - tau)^2 / (V_tautau (1 - (1 - v) R^2))
  std::array<std::optional<double>, 4> coverage{};  // HC0..HC3, constrained interval
};

// Runs the scenario on base, whose covariates must include at least max(ks)
// columns and whose outcomes serve as the "linear" model. The "adversarial"
// model uses both potential outcomes equal to the t_3 rank transform of the
// average estimated propensity across the untrimmed designs.
//
// Each design draws reps assignments on streams 1..reps for max bias / RMSE
// and the propensity estimate, and another reps on streams reps+1..2 reps for
// scoring the outcome models, so the adversarial outcome is never evaluated
// on the draws it was built from.
std::vector<ScenarioRow> run_scenario(const FinitePopulation& base, const Scenario& scenario);

}  // namespace rerand
