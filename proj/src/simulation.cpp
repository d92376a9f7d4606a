#include "rerand/simulation.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <string>

#include "rerand/constrained_gaussian.hpp"
#include "rerand/design.hpp"
#include "rerand/diagnostics.hpp"
#include "rerand/error.hpp"
#include "rerand/inference.hpp"
#include "rerand/parallel.hpp"
#include "rerand/random.hpp"
#include "rerand/specialfn.hpp"

namespace rerand {

namespace {

constexpr std::uint64_t kSurrogateStream = 0x57A2;
constexpr std::uint64_t kLinearStream = 0x11AE;

double bernoulli(CounterRng& rng, double p) { return rng.uniform() < p ? 1.0 : 0.0; }

struct DesignRun {
  std::size_t k = 0;
  bool trim = false;
  std::optional<FinitePopulation> pop;
  double a = kInfiniteThreshold;
  double one_minus_v = 0.0;
  std::optional<LeverageReport> leverage;
  std::vector<std::vector<std::uint32_t>> draws;       // diagnostics and propensity
  std::vector<std::vector<std::uint32_t>> eval_draws;  // outcome models, disjoint streams
  std::optional<BiasRmse> bias_rmse;
};

struct OutcomeStats {
  std::optional<double> bias_std;
  std::optional<double> mse_ratio;
  std::array<std::optional<double>, 4> coverage{};
};

OutcomeStats evaluate_outcome(const DesignRun& design, const FinitePopulation& pop, const Scenario& sc) {
  const PopulationEstimands est = population_estimands(pop);
  const double asymptotic = est.v_tautau * (1.0 - design.one_minus_v * est.r2);
  const std::size_t reps = design.eval_draws.size();

  std::optional<ConvolutionQuantiles> cached;
  McConfig cfg;
  cfg.samples = sc.mc_samples;
  cfg.seed = sc.seed;
  cfg.threads = sc.threads;
  if (design.k > 0 && design.a != kInfiniteThreshold) {
    cached.emplace(ConstrainedGaussianLaw(static_cast<int>(design.k), design.a), cfg);
  }

  std::vector<double> err(reps);
  // 1 covered, 0 missed, -1 interval unavailable for this HC mode
  std::vector<std::array<int, 4>> hits(reps);
  for_each_chunk(reps, sc.threads, [&](std::size_t r) {
    const ObservedData data = observe(pop, Assignment::from_treated(pop.n(), design.eval_draws[r]));
    err[r] = diff_in_means(data) - est.tau;
    for (int h = 0; h < 4; ++h) {
      try {
        const HcMode hc = hc_from_int(h);
        const InferenceResult ci =
            cached ? confidence_interval(data, *cached, sc.seed, sc.alpha, CiMethod::Constrained, hc)
                   : confidence_interval(data, static_cast<int>(design.k), design.a, sc.alpha,
                                         CiMethod::Constrained, hc, cfg);
        hits[r][static_cast<std::size_t>(h)] = (ci.ci_lower <= est.tau && est.tau <= ci.ci_upper) ? 1 : 0;
      } catch (const Error&) {
        hits[r][static_cast<std::size_t>(h)] = -1;
      }
    }
  });

  OutcomeStats out;
  double sum = 0.0, sum2 = 0.0;
  for (const double e : err) {
    sum += e;
    sum2 += e * e;
  }
  out.bias_std = sum / static_cast<double>(reps) / std::sqrt(est.v_tautau);
  out.mse_ratio = sum2 / static_cast<double>(reps) / asymptotic;
  for (std::size_t h = 0; h < 4; ++h) {
    std::size_t valid = 0, covered = 0;
    for (const auto& row : hits) {
      if (row[h] >= 0) {
        ++valid;
        covered += static_cast<std::size_t>(row[h]);
      }
    }
    if (valid > 0) out.coverage[h] = static_cast<double>(covered) / static_cast<double>(valid);
  }
  return out;
}

}  // namespace

FinitePopulation star_surrogate(const SurrogateOptions& opts) {
  if (opts.n1 < 1 || opts.n1 >= opts.n) throw ValidationError("surrogate needs 1 <= n1 < n");
  CounterRng rng(opts.seed, kSurrogateStream);
  const auto n = static_cast<Eigen::Index>(opts.n);
  const auto k = static_cast<Eigen::Index>(opts.k_max);
  const Eigen::Index base = std::min<Eigen::Index>(5, k);
  Eigen::MatrixXd real(n, 5);
  Eigen::VectorXd gpa(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hs = std::clamp(78.0 + 6.5 * rng.normal(), 55.0, 99.0);
    const double age = 18.0 + std::min(12.0, std::floor(-std::log(rng.uniform_open()) / 1.3));
    const double female = bernoulli(rng, 0.58);
    const double home = bernoulli(rng, 0.42);
    const double rarely = bernoulli(rng, 0.31);
    real.row(i) << hs, age, female, home, rarely;
    const double y = 1.8 + 0.075 * (hs - 78.0) - 0.04 * (age - 18.0) + 0.12 * female + 0.05 * rarely +
                     0.75 * rng.normal();
    gpa(i) = std::clamp(y, 0.0, 4.3);
  }
  Eigen::MatrixXd x(n, k);
  std::vector<std::string> names{"hsgpa", "age", "female", "lives_at_home", "rarely_puts_off"};
  names.resize(static_cast<std::size_t>(base));
  x.leftCols(base) = real.leftCols(base);
  for (Eigen::Index j = base; j < k; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = rng.normal() / std::sqrt(rng.gamma(1.0));
    names.push_back("noise" + std::to_string(j + 1));
  }
  return FinitePopulation(std::move(x), opts.n1, gpa, gpa, {}, std::move(names));
}

FinitePopulation linear_population(std::size_t n, std::size_t n1, std::size_t k, double r2_target,
                                   std::uint64_t seed) {
  if (k < 1) throw ValidationError("linear population needs at least one covariate");
  if (!(r2_target > 0.0 && r2_target < 1.0)) throw ValidationError("target R^2 must lie in (0, 1)");
  CounterRng rng(seed, kLinearStream);
  const auto nn = static_cast<Eigen::Index>(n);
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd x(nn, kk);
  Eigen::VectorXd noise(nn);
  for (Eigen::Index i = 0; i < nn; ++i) {
    for (Eigen::Index j = 0; j < kk; ++j) x(i, j) = rng.normal();
    noise(i) = rng.normal();
  }
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(kk, 1.0 / std::sqrt(static_cast<double>(k)));
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(kk, 0.3 / std::sqrt(static_cast<double>(k)));
  const Eigen::VectorXd signal = x * b;
  const Eigen::VectorXd effect = (x * c).array() + 1.0;
  const FinitePopulation shell(x, n1);

  auto build = [&](double s) {
    const Eigen::VectorXd y0 = signal + s * noise;
    return shell.with_outcomes(y0 + effect, y0);
  };
  // R^2 decreases in the noise scale; bisect on log s.
  double lo = std::log(1e-6), hi = std::log(1e6);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r2 = population_estimands(build(std::exp(mid))).r2;
    if (r2 > r2_target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-13) break;
  }
  return build(std::exp(0.5 * (lo + hi)));
}

Eigen::VectorXd t3_rank_transform(const Eigen::VectorXd& score) {
  const auto n = static_cast<std::size_t>(score.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return score(static_cast<Eigen::Index>(i)) < score(static_cast<Eigen::Index>(j));
  });
  const boost::math::students_t_distribution<double> t3(3.0);
  Eigen::VectorXd out(score.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double u = (static_cast<double>(r) + 0.5) / static_cast<double>(n);
    out(static_cast<Eigen::Index>(order[r])) = boost::math::quantile(t3, u);
  }
  return out;
}

void Scenario::validate() const {
  if (ks.empty()) throw ValidationError("scenario lists no designs");
  if (trims.empty()) throw ValidationError("scenario lists no trim settings");
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("acceptance probability must lie in (0, 1]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (!(0.0 <= trim_lower && trim_lower < trim_upper && trim_upper <= 1.0)) {
    throw ValidationError("trim quantiles must satisfy 0 <= lower < upper <= 1");
  }
  if (reps == 1) throw ValidationError("replications must be 0 or at least 2");
  for (const auto& o : outcomes) {
    if (o != "linear" && o != "adversarial") throw ValidationError("unknown outcome model '" + o + "'");
  }
  if (reps > 0) {
    McConfig cfg;
    cfg.samples = mc_samples;
    cfg.validate();
  }
}

std::vector<ScenarioRow> run_scenario(const FinitePopulation& base, const Scenario& sc) {
  sc.validate();
  const std::size_t k_needed = *std::max_element(sc.ks.begin(), sc.ks.end());
  if (k_needed > base.k()) {
    throw ValidationError("scenario needs " + std::to_string(k_needed) + " covariates, population has " +
                          std::to_string(base.k()));
  }

  std::vector<DesignRun> designs;
  for (const std::size_t k : sc.ks) {
    for (const bool trim : sc.trims) {
      DesignRun d;
      d.k = k;
      d.trim = trim;
      FinitePopulation pop = base.leading_covariates(k);
      if (trim && k > 0) pop = trim_covariates(pop, sc.trim_lower, sc.trim_upper);
      if (k > 0 && sc.p < 1.0) {
        d.a = chi2_quantile(sc.p, static_cast<int>(k));
        d.one_minus_v = 1.0 - v_Ka(static_cast<int>(k), d.a);
      }
      if (k > 0) d.leverage = leverage_scores(pop);
      if (sc.reps > 0) {
        const RemSampler sampler(pop, d.a);
        d.draws.resize(sc.reps);
        for_each_chunk(sc.reps, sc.threads, [&](std::size_t r) {
          d.draws[r] = sampler.draw(sc.seed, r + 1, sc.max_draws).assignment.treated();
        });
        if (!sc.outcomes.empty()) {
          d.eval_draws.resize(sc.reps);
          for_each_chunk(sc.reps, sc.threads, [&](std::size_t r) {
            d.eval_draws[r] = sampler.draw(sc.seed, sc.reps + r + 1, sc.max_draws).assignment.treated();
          });
        }
        d.bias_rmse = max_bias_rmse_from_draws(pop.n(), pop.n1(), d.draws, true, sc.seed);
      }
      d.pop.emplace(std::move(pop));
      designs.push_back(std::move(d));
    }
  }

  std::optional<Eigen::VectorXd> adversarial;
  const bool want_adversarial =
      std::find(sc.outcomes.begin(), sc.outcomes.end(), "adversarial") != sc.outcomes.end();
  if (want_adversarial && sc.reps > 0) {
    const bool any_untrimmed =
        std::any_of(designs.begin(), designs.end(), [](const DesignRun& d) { return !d.trim; });
    Eigen::VectorXd propensity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(base.n()));
    std::size_t used = 0;
    for (const auto& d : designs) {
      if (any_untrimmed && d.trim) continue;
      for (const auto& t : d.draws) {
        for (const auto i : t) propensity(i) += 1.0 / static_cast<double>(sc.reps);
      }
      ++used;
    }
    adversarial = t3_rank_transform(propensity / static_cast<double>(used));
  }

  std::vector<ScenarioRow> rows;
  for (const auto& d : designs) {
    ScenarioRow row;
    row.k = d.k;
    row.trim = d.trim;
    row.a = d.a;
    row.one_minus_v = d.one_minus_v;
    if (d.bias_rmse) {
      row.max_bias = d.bias_rmse->max_bias;
      row.max_rmse = d.bias_rmse->max_rmse;
      row.max_rmse_se = d.bias_rmse->max_rmse_se;
    }
    if (d.leverage) {
      row.sum_h32 = d.leverage->sum_h32;
      row.max_h = d.leverage->max_h;
      row.min_sum_h32 = d.leverage->min_sum_h32;
      row.min_max_h = d.leverage->min_max_h;
    }
    if (sc.reps == 0 || sc.outcomes.empty()) {
      rows.push_back(row);
      continue;
    }
    for (const auto& model : sc.outcomes) {
      ScenarioRow r = row;
      r.outcome = model;
      const FinitePopulation pop =
          model == "linear" ? d.pop->with_outcomes(base.y1(), base.y0()) : d.pop->with_outcomes(*adversarial, *adversarial);
      const OutcomeStats stats = evaluate_outcome(d, pop, sc);
      r.bias_std = stats.bias_std;
      r.mse_ratio = stats.mse_ratio;
      r.coverage = stats.coverage;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace rerand
