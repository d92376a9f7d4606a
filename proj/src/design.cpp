#include "rerand/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "rerand/constrained_gaussian.hpp"
#include "rerand/error.hpp"
#include "rerand/parallel.hpp"
#include "rerand/specialfn.hpp"

namespace rerand {

namespace {

constexpr std::uint64_t kRemChunk = 1024;
constexpr std::uint64_t kAcceptanceChunk = 4096;
constexpr std::uint64_t kAcceptanceStream = 0xACCE;

// Partial Fisher-Yates state: after select(), perm[0..m) is a uniform random
// m-subset regardless of the permutation the buffer held before.
struct SubsetDrawer {
  std::vector<std::uint32_t> perm;
  std::size_t m;

  SubsetDrawer(std::size_t n, std::size_t m) : perm(n), m(m) { std::iota(perm.begin(), perm.end(), 0U); }

  void select(CounterRng& rng) {
    const std::size_t n = perm.size();
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(perm[i], perm[j]);
    }
  }
};

// Draws CRE candidates and evaluates M. Works on the smaller arm: when
// n0 < n1 the controls are drawn and the treated sum is total - control sum.
class CandidateStream {
 public:
  explicit CandidateStream(const BalanceCriterion& crit)
      : crit_(crit),
        draw_controls_(crit.n() - crit.n1() < crit.n1()),
        drawer_(crit.n(), draw_controls_ ? crit.n() - crit.n1() : crit.n1()),
        sum_(crit.k()),
        total_(crit.k(), 0.0) {
    if (draw_controls_) {
      for (std::size_t i = 0; i < crit.n(); ++i) {
        const double* r = crit.row(i);
        for (std::size_t j = 0; j < crit.k(); ++j) total_[j] += r[j];
      }
    }
  }

  double next(CounterRng& rng) {
    drawer_.select(rng);
    const std::size_t k = crit_.k();
    std::fill(sum_.begin(), sum_.end(), 0.0);
    for (std::size_t s = 0; s < drawer_.m; ++s) {
      const double* r = crit_.row(drawer_.perm[s]);
      for (std::size_t j = 0; j < k; ++j) sum_[j] += r[j];
    }
    double norm2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = draw_controls_ ? total_[j] - sum_[j] : sum_[j];
      norm2 += t * t;
    }
    return crit_.scale() * norm2;
  }

  Assignment current() const {
    std::vector<std::uint8_t> z(crit_.n(), draw_controls_ ? 1 : 0);
    for (std::size_t s = 0; s < drawer_.m; ++s) z[drawer_.perm[s]] = draw_controls_ ? 0 : 1;
    Assignment out;
    out.z = std::move(z);
    out.n1 = crit_.n1();
    return out;
  }

 private:
  const BalanceCriterion& crit_;
  bool draw_controls_;
  SubsetDrawer drawer_;
  std::vector<double> sum_;
  std::vector<double> total_;
};

}  // namespace

Assignment Assignment::from_indicators(std::vector<std::uint8_t> z) {
  Assignment out;
  for (const auto v : z) {
    if (v > 1) throw ValidationError("assignment entries must be 0 or 1");
    out.n1 += v;
  }
  out.z = std::move(z);
  return out;
}

Assignment Assignment::from_treated(std::size_t n, const std::vector<std::uint32_t>& treated) {
  std::vector<std::uint8_t> z(n, 0);
  for (const auto i : treated) {
    if (i >= n || z[i]) throw ValidationError("treated index out of range or repeated");
    z[i] = 1;
  }
  return from_indicators(std::move(z));
}

std::vector<std::uint32_t> Assignment::treated() const {
  std::vector<std::uint32_t> out;
  out.reserve(n1);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i]) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

DesignSpec DesignSpec::from_acceptance(double p, std::uint64_t seed) {
  DesignSpec spec;
  spec.mode = ThresholdMode::FromAcceptance;
  spec.value = p;
  spec.seed = seed;
  return spec;
}

DesignSpec DesignSpec::direct(double a, std::uint64_t seed) {
  DesignSpec spec;
  spec.mode = ThresholdMode::Direct;
  spec.value = a;
  spec.seed = seed;
  return spec;
}

void DesignSpec::validate() const {
  if (mode == ThresholdMode::FromAcceptance && !(value > 0.0 && value <= 1.0)) {
    throw ValidationError("acceptance probability must lie in (0, 1], got " + std::to_string(value));
  }
  if (mode == ThresholdMode::Direct && !(value >= 0.0)) {
    throw ValidationError("threshold a must be >= 0, got " + std::to_string(value));
  }
  if (max_draws < 1) throw ValidationError("max_draws must be >= 1");
}

double threshold(const DesignSpec& spec, std::size_t k) {
  spec.validate();
  if (spec.mode == ThresholdMode::Direct) return spec.value;
  if (spec.value == 1.0 || k == 0) return kInfiniteThreshold;
  return chi2_quantile(spec.value, static_cast<int>(k));
}

BalanceCriterion::BalanceCriterion(const FinitePopulation& pop)
    : n_(pop.n()),
      n1_(pop.n1()),
      k_(pop.k()),
      scale_(static_cast<double>(pop.n()) / (static_cast<double>(pop.n1()) * static_cast<double>(pop.n0()))) {
  if (k_ == 0) return;
  const CovariateMoments moments = covariate_moments(pop);
  const Eigen::MatrixXd w = moments.whiten(pop.covariates());
  whitened_.resize(n_ * k_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < k_; ++j) {
      whitened_[i * k_ + j] = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
}

double BalanceCriterion::from_treated(const std::vector<std::uint32_t>& treated) const {
  if (treated.size() != n1_) throw ValidationError("assignment does not treat exactly n1 units");
  std::vector<double> sum(k_, 0.0);
  for (const auto i : treated) {
    if (i >= n_) throw ValidationError("treated index out of range");
    const double* r = row(i);
    for (std::size_t j = 0; j < k_; ++j) sum[j] += r[j];
  }
  double norm2 = 0.0;
  for (const double s : sum) norm2 += s * s;
  return scale_ * norm2;
}

double BalanceCriterion::operator()(const Assignment& asg) const {
  if (asg.n() != n_) throw ValidationError("assignment length differs from population size");
  return from_treated(asg.treated());
}

double mahalanobis(const FinitePopulation& pop, const Assignment& asg) { return BalanceCriterion(pop)(asg); }

Assignment sample_cre(std::size_t n, std::size_t n1, CounterRng& rng) {
  if (n1 < 1 || n1 >= n) throw ValidationError("complete randomization needs 1 <= n1 < n");
  const bool draw_controls = n - n1 < n1;
  SubsetDrawer drawer(n, draw_controls ? n - n1 : n1);
  drawer.select(rng);
  Assignment out;
  out.z.assign(n, draw_controls ? 1 : 0);
  for (std::size_t s = 0; s < drawer.m; ++s) out.z[drawer.perm[s]] = draw_controls ? 0 : 1;
  out.n1 = n1;
  return out;
}

RemSampler::RemSampler(const FinitePopulation& pop, double a) : criterion_(pop), a_(a) {
  if (!(a >= 0.0)) throw ValidationError("threshold a must be >= 0");
}

RemDraw RemSampler::draw(std::uint64_t seed, std::uint64_t stream, std::uint64_t max_draws, unsigned threads) const {
  if (max_draws < 1) throw ValidationError("max_draws must be >= 1");
  struct ChunkResult {
    std::optional<RemDraw> hit;
    double min_m = std::numeric_limits<double>::infinity();
  };
  const CounterRng root(seed, stream);
  const std::uint64_t n_chunks = (max_draws + kRemChunk - 1) / kRemChunk;
  const unsigned width = std::max(1U, threads);
  double min_m = std::numeric_limits<double>::infinity();

  for (std::uint64_t first = 0; first < n_chunks; first += width) {
    const std::uint64_t batch = std::min<std::uint64_t>(width, n_chunks - first);
    std::vector<ChunkResult> results(batch);
    for_each_chunk(batch, width, [&](std::size_t b) {
      const std::uint64_t chunk = first + b;
      CounterRng rng = root.substream(chunk);
      CandidateStream candidates(criterion_);
      const std::uint64_t begin = chunk * kRemChunk;
      const std::uint64_t end = std::min(max_draws, begin + kRemChunk);
      ChunkResult& out = results[b];
      for (std::uint64_t d = begin; d < end; ++d) {
        const double m = candidates.next(rng);
        out.min_m = std::min(out.min_m, m);
        if (m <= a_) {
          out.hit = RemDraw{candidates.current(), m, d + 1};
          return;
        }
      }
    });
    for (auto& r : results) {
      min_m = std::min(min_m, r.min_m);
      if (r.hit) return std::move(*r.hit);
    }
  }
  throw MaxDrawsExceededError(max_draws, min_m, a_);
}

RemDraw sample_rem(const FinitePopulation& pop, const DesignSpec& spec) {
  const RemSampler sampler(pop, threshold(spec, pop.k()));
  return sampler.draw(spec.seed, 0, spec.max_draws, spec.threads);
}

double assignment_count(std::size_t n, std::size_t n1) {
  if (n1 > n) return 0.0;
  const std::size_t r = std::min(n1, n - n1);
  double c = 1.0;
  for (std::size_t i = 1; i <= r; ++i) c = c * static_cast<double>(n - r + i) / static_cast<double>(i);
  return std::round(c);
}

void for_each_assignment(std::size_t n, std::size_t n1,
                         const std::function<void(const std::vector<std::uint32_t>& treated)>& visit) {
  if (n1 < 1 || n1 >= n) throw ValidationError("enumeration needs 1 <= n1 < n");
  if (assignment_count(n, n1) > kEnumerationGuard) {
    throw ValidationError("C(" + std::to_string(n) + ", " + std::to_string(n1) +
                          ") exceeds the enumeration guard of 1e6 assignments");
  }
  std::vector<std::uint32_t> idx(n1);
  std::iota(idx.begin(), idx.end(), 0U);
  for (;;) {
    visit(idx);
    // Advance to the next combination in lexicographic order.
    std::size_t i = n1;
    while (i > 0 && idx[i - 1] == n - n1 + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < n1; ++j) idx[j] = idx[j - 1] + 1;
  }
}

std::vector<Assignment> enumerate_assignments(std::size_t n, std::size_t n1) {
  std::vector<Assignment> out;
  for_each_assignment(n, n1, [&](const std::vector<std::uint32_t>& t) { out.push_back(Assignment::from_treated(n, t)); });
  return out;
}

AcceptanceEstimate estimate_acceptance_exact(const FinitePopulation& pop, double a) {
  const BalanceCriterion crit(pop);
  AcceptanceEstimate out;
  out.exact = true;
  for_each_assignment(pop.n(), pop.n1(), [&](const std::vector<std::uint32_t>& t) {
    ++out.total;
    if (crit.from_treated(t) <= a) ++out.accepted;
  });
  out.probability = static_cast<double>(out.accepted) / static_cast<double>(out.total);
  return out;
}

AcceptanceEstimate estimate_acceptance_mc(const FinitePopulation& pop, double a, std::uint64_t draws,
                                          std::uint64_t seed, unsigned threads) {
  if (draws < 1) throw ValidationError("Monte Carlo acceptance estimate needs at least one draw");
  const BalanceCriterion crit(pop);
  const CounterRng root(seed, kAcceptanceStream);
  const std::size_t n_chunks = chunk_count(draws, kAcceptanceChunk);
  std::vector<std::uint64_t> counts(n_chunks, 0);
  for_each_chunk(n_chunks, threads, [&](std::size_t c) {
    CounterRng rng = root.substream(c);
    CandidateStream candidates(crit);
    const std::uint64_t end = std::min<std::uint64_t>(draws, (c + 1) * kAcceptanceChunk);
    for (std::uint64_t d = c * kAcceptanceChunk; d < end; ++d) {
      if (candidates.next(rng) <= a) ++counts[c];
    }
  });
  AcceptanceEstimate out;
  out.total = draws;
  out.accepted = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  out.probability = static_cast<double>(out.accepted) / static_cast<double>(draws);
  out.standard_error = std::sqrt(out.probability * (1.0 - out.probability) / static_cast<double>(draws));
  return out;
}

}  // namespace rerand
