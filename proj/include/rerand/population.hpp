#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rerand {

// A finite population of n experimental units: covariates (n x K), optional
// potential outcomes, and the fixed group sizes n1 + n0 = n. Immutable once
// constructed; every constructor path validates the invariants.
class FinitePopulation {
 public:
  FinitePopulation(Eigen::MatrixXd covariates, std::size_t n1, std::optional<Eigen::VectorXd> y1 = std::nullopt,
                   std::optional<Eigen::VectorXd> y0 = std::nullopt, std::vector<std::string> labels = {},
                   std::vector<std::string> covariate_names = {});

  std::size_t n() const noexcept { return static_cast<std::size_t>(covariates_.rows()); }
  std::size_t k() const noexcept { return static_cast<std::size_t>(covariates_.cols()); }
  std::size_t n1() const noexcept { return n1_; }
  std::size_t n0() const noexcept { return n() - n1_; }
  double r1() const noexcept { return static_cast<double>(n1_) / static_cast<double>(n()); }
  double r0() const noexcept { return static_cast<double>(n0()) / static_cast<double>(n()); }

  const Eigen::MatrixXd& covariates() const noexcept { return covariates_; }
  bool has_outcomes() const noexcept { return y1_.has_value() && y0_.has_value(); }
  const Eigen::VectorXd& y1() const;
  const Eigen::VectorXd& y0() const;
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }

  // Same units and outcomes, different covariate matrix (same n).
  FinitePopulation with_covariates(Eigen::MatrixXd covariates, std::vector<std::string> names = {}) const;
  // Keeps the first k covariate columns.
  FinitePopulation leading_covariates(std::size_t k) const;
  FinitePopulation with_outcomes(Eigen::VectorXd y1, Eigen::VectorXd y0) const;

 private:
  Eigen::MatrixXd covariates_;
  std::size_t n1_;
  std::optional<Eigen::VectorXd> y1_;
  std::optional<Eigen::VectorXd> y0_;
  std::vector<std::string> labels_;
  std::vector<std::string> covariate_names_;
};

// Column roles for tabular ingestion.
struct ColumnSchema {
  std::vector<std::string> covariates;
  std::optional<std::string> y1;
  std::optional<std::string> y0;
  std::optional<std::string> label;
  bool require_both_outcomes = false;
};

// Reads a delimiter-separated table with a header row. Rows keep file order.
FinitePopulation load_population(std::istream& source, const ColumnSchema& schema, std::size_t n1,
                                 char delimiter = ',');

// Raw table access used by the CLI for observed-data files.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  std::vector<double> numeric_column(const std::string& name) const;
};
Table read_table(std::istream& source, char delimiter = ',');

// Mean, finite-population covariance (divisor n - 1) and its Cholesky factor.
// Construction throws SingularCovarianceError when any Cholesky pivot falls
// below 1e-12 times the largest diagonal entry.
class CovariateMoments {
 public:
  explicit CovariateMoments(const Eigen::MatrixXd& covariates, const std::vector<std::string>& names = {});

  std::size_t k() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& cov() const noexcept { return cov_; }
  // Lower-triangular L with cov = L L^T.
  Eigen::MatrixXd cov_factor() const { return llt_.matrixL(); }

  // cov^{-1} b
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }
  // L^{-1} (x - mean) for every row of x, returned row-wise (n x K).
  Eigen::MatrixXd whiten(const Eigen::MatrixXd& x) const;
  // L^{-1} b
  Eigen::VectorXd whiten_vector(const Eigen::VectorXd& b) const;
  // b^T cov^{-1} b
  double quadratic_form(const Eigen::VectorXd& b) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline constexpr double kSingularityTolerance = 1e-12;

// Throws SingularCovarianceError naming the offending column when the
// covariance has a relative Cholesky pivot below kSingularityTolerance.
Eigen::LLT<Eigen::MatrixXd> checked_cholesky(const Eigen::MatrixXd& cov, const std::vector<std::string>& names = {});

CovariateMoments covariate_moments(const FinitePopulation& pop);

// Winsorizes every covariate column at its empirical lower_q and upper_q
// quantiles, where the q-quantile is the order statistic of 1-based rank
// ceil(q n) (rank clamped to [1, n]).
FinitePopulation trim_covariates(const FinitePopulation& pop, double lower_q, double upper_q);

struct LeverageReport {
  Eigen::VectorXd h;
  double sum_h32 = 0.0;
  double max_h = 0.0;
  double min_sum_h32 = 0.0;
  double min_max_h = 0.0;
};

// Diagonal of the hat matrix of the column-centered covariates, so that
// (n - 1) H_ii = (X_i - Xbar)^T S_X^{-1} (X_i - Xbar).
LeverageReport leverage_scores(const FinitePopulation& pop);
LeverageReport leverage_scores(const Eigen::MatrixXd& covariates, const std::vector<std::string>& names = {});

}  // namespace rerand
