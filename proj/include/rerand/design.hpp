#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "rerand/population.hpp"
#include "rerand/random.hpp"

namespace rerand {

// Binary treatment vector with exactly n1 ones.
struct Assignment {
  std::vector<std::uint8_t> z;
  std::size_t n1 = 0;

  // Validates 0/1 entries and counts the ones.
  static Assignment from_indicators(std::vector<std::uint8_t> z);
  static Assignment from_treated(std::size_t n, const std::vector<std::uint32_t>& treated);

  std::size_t n() const noexcept { return z.size(); }
  std::size_t n0() const noexcept { return z.size() - n1; }
  std::vector<std::uint32_t> treated() const;

  bool operator==(const Assignment&) const = default;
};

enum class ThresholdMode { FromAcceptance, Direct };

struct DesignSpec {
  ThresholdMode mode = ThresholdMode::FromAcceptance;
  double value = 0.001;  // p_n in (0, 1] or a_n >= 0, depending on mode
  std::uint64_t max_draws = 10'000'000;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  static DesignSpec from_acceptance(double p, std::uint64_t seed);
  static DesignSpec direct(double a, std::uint64_t seed);
  void validate() const;
};

// a_n: the direct threshold, or the p_n-quantile of chi2_K
// (+inf for p_n = 1, and for K = 0 where every assignment has M = 0).
double threshold(const DesignSpec& spec, std::size_t k);

// Mahalanobis imbalance with the covariate covariance factorized once.
// Whitened centered covariates w_i = L^{-1}(X_i - Xbar) are cached row-major,
// so M = n / (n1 n0) * || sum_{treated} w_i ||^2.
class BalanceCriterion {
 public:
  explicit BalanceCriterion(const FinitePopulation& pop);

  double operator()(const Assignment& asg) const;
  double from_treated(const std::vector<std::uint32_t>& treated) const;

  std::size_t n() const noexcept { return n_; }
  std::size_t n1() const noexcept { return n1_; }
  std::size_t k() const noexcept { return k_; }
  const double* row(std::size_t i) const noexcept { return whitened_.data() + i * k_; }
  double scale() const noexcept { return scale_; }

 private:
  std::size_t n_, n1_, k_;
  double scale_;
  std::vector<double> whitened_;
};

double mahalanobis(const FinitePopulation& pop, const Assignment& asg);

// Uniform over all C(n, n1) assignments via partial Fisher-Yates.
Assignment sample_cre(std::size_t n, std::size_t n1, CounterRng& rng);

struct RemDraw {
  Assignment assignment;
  double m_value = 0.0;
  std::uint64_t draws_used = 0;
};

// Accept-reject sampler for rerandomization with M <= a.
//
// Candidates are generated in fixed chunks of 1024, chunk j drawing from
// substream j of the (seed, stream) key. The returned assignment is the first
// acceptable candidate in chunk order, so the result is the same for every
// thread count; with threads > 1, consecutive chunks are searched
// concurrently.
class RemSampler {
 public:
  RemSampler(const FinitePopulation& pop, double a);

  RemDraw draw(std::uint64_t seed, std::uint64_t stream, std::uint64_t max_draws, unsigned threads = 1) const;

  double threshold() const noexcept { return a_; }
  const BalanceCriterion& criterion() const noexcept { return criterion_; }

 private:
  BalanceCriterion criterion_;
  double a_;
};

RemDraw sample_rem(const FinitePopulation& pop, const DesignSpec& spec);

// Number of assignments C(n, n1) as a double (exact below 2^53).
double assignment_count(std::size_t n, std::size_t n1);

inline constexpr double kEnumerationGuard = 1e6;

// Visits every assignment once, in lexicographic order of the sorted treated
// index sets. Throws ValidationError when C(n, n1) exceeds the guard.
void for_each_assignment(std::size_t n, std::size_t n1,
                         const std::function<void(const std::vector<std::uint32_t>& treated)>& visit);
std::vector<Assignment> enumerate_assignments(std::size_t n, std::size_t n1);

struct AcceptanceEstimate {
  double probability = 0.0;
  double standard_error = 0.0;  // binomial; 0 in exact mode
  std::uint64_t accepted = 0;
  std::uint64_t total = 0;
  bool exact = false;
};

AcceptanceEstimate estimate_acceptance_exact(const FinitePopulation& pop, double a);
AcceptanceEstimate estimate_acceptance_mc(const FinitePopulation& pop, double a, std::uint64_t draws,
                                          std::uint64_t seed, unsigned threads = 1);

}  // namespace rerand
