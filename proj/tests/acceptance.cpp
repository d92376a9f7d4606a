// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <unistd.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "enumeration_oracle.hpp"
#include "oracles.hpp"
#include "rerand/constrained_gaussian.hpp"
#include "rerand/design.hpp"
#include "rerand/diagnostics.hpp"
#include "rerand/inference.hpp"
#include "rerand/simulation.hpp"
#include "test_util.hpp"

using namespace rerand;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kTableTol = 0.005;
constexpr double kTableSeconds = 1.0;
constexpr double kEnumTol = 1e-12;
constexpr double kEigenTol = 1e-10;
constexpr double kEnumSeconds = 10.0;
constexpr double kGofMinP = 0.001;
constexpr std::size_t kSamplerDraws = 100'000;
constexpr double kKsAlpha = 0.001;
constexpr double kVarSe = 3.0;
constexpr double kRatioTol = 0.02;
constexpr std::size_t kRatioDraws = 100'000;
constexpr double kRatioSeconds = 120.0;
constexpr std::size_t kCoverageReps = 5000;
constexpr std::size_t kCoverageMc = 200'000;
constexpr double kCoverageLo = 0.94;
constexpr double kCoverageHi = 0.97;
constexpr double kWaldMin = 0.94;
constexpr double kCoverageSeconds = 300.0;
constexpr std::size_t kBerryInstances = 150;
constexpr double kGammaRouteTol = 1e-10;
constexpr double kDeltaTol = 1e-12;
constexpr double kRegimeSmall = 0.05;
constexpr double kRegimeLarge = 0.95;
constexpr double kQuadratureTol = 1e-6;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// tau_hat from the treated index set without materializing observed data.
struct FastTau {
  Eigen::VectorXd y1, y0;
  double sum_y0;
  double n1, n0;
  explicit FastTau(const FinitePopulation& pop)
      : y1(pop.y1()), y0(pop.y0()), sum_y0(pop.y0().sum()), n1(pop.n1()), n0(pop.n0()) {}
  double operator()(const std::vector<std::uint32_t>& treated) const {
    double s1 = 0.0, s0 = 0.0;
    for (auto i : treated) {
      s1 += y1(i);
      s0 += y0(i);
    }
    return s1 / n1 - (sum_y0 - s0) / n0;
  }
};

double sample_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / (static_cast<double>(v.size()) - 1.0);
}

Outcome table_values() {
  Timer t;
  const std::map<int, double> table{{5, 0.97},   {9, 0.90},   {15, 0.80},  {24, 0.70},
                                    {37, 0.60},  {60, 0.50},  {100, 0.41}, {200, 0.30}};
  Outcome out;
  double worst = 0.0;
  for (auto [k, expected] : table) {
    const double got = 1.0 - v_Ka(k, ChiSquareLaw(k).quantile(0.001));
    const double err = std::abs(got - expected);
    worst = std::max(worst, err);
    if (err > kTableTol) {
      out.pass = false;
      out.detail += fmt("K=%.0f got %.4f; ", k, got);
    }
  }
  const double secs = t.seconds();
  if (secs >= kTableSeconds) out.pass = false;
  out.detail += fmt("max |err| %.4f, %.3f s", worst, secs);
  return out;
}

Outcome corollary_limit() {
  Outcome out;
  McConfig cfg;
  cfg.samples = 10'000;
  for (double r2 : {0.0, 0.25, 0.5, 0.9}) {
    const auto pr = percentage_reductions(5, 0.0, r2, 0.05, cfg);
    if (pr.variance != r2 || pr.quantile_range != 1.0 - std::sqrt(1.0 - r2)) {
      out.pass = false;
      out.detail += fmt("R2=%.2f gives (%.17g, %.17g); ", r2, pr.variance, pr.quantile_range);
    }
  }
  if (out.pass) out.detail = "exact at R2 in {0, 0.25, 0.5, 0.9}";
  return out;
}

Outcome enumeration() {
  Timer t;
  Outcome out;
  double e_mean = 0.0, e_var = 0.0, e_bias = 0.0, e_mse = 0.0, e_maxb = 0.0, e_maxr = 0.0, e_cre = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const std::size_t n = 12, n1 = 4 + s % 3, k = 1 + s % 2;
    auto pop = testutil::random_population(n, n1, k, 500 + s);
    const auto est = population_estimands(pop);
    const FastTau tau_hat(pop);

    double sum = 0.0, sum2 = 0.0, count = 0.0;
    for_each_assignment(n, n1, [&](const std::vector<std::uint32_t>& tr) {
      const double x = tau_hat(tr);
      sum += x;
      sum2 += x * x;
      count += 1.0;
    });
    const double mean = sum / count;
    e_mean = std::max(e_mean, std::abs(mean - est.tau));
    e_var = std::max(e_var, std::abs(sum2 / count - mean * mean - est.v_tautau));

    const double r1r0 = pop.r1() * pop.r0();
    const double c = std::sqrt((n - 1.0) / (n * r1r0));
    for (double a : {0.05, 0.4, kInfiniteThreshold}) {
      const auto sets = oracle::brute_acceptable(pop, a);
      const auto moments = exact_design_moments(pop, a);
      if (sets.size() != moments.designs) {
        out.pass = false;
        out.detail += "acceptable-set size mismatch; ";
        continue;
      }
      const auto bm = design_bias_mse(pop, moments);
      double bias = 0.0, mse = 0.0;
      for (auto& tr : sets) {
        const double e = tau_hat(tr) - est.tau;
        bias += e / static_cast<double>(sets.size());
        mse += e * e / static_cast<double>(sets.size());
      }
      e_bias = std::max(e_bias, std::abs(bm.bias - bias));
      e_mse = std::max(e_mse, std::abs(bm.mse - mse));

      const auto br = max_bias_rmse_exact(pop, a);
      const auto dense = oracle::dense_moments(n, sets);
      const Eigen::VectorXd d = dense.pi.array() - pop.r1();
      const Eigen::MatrixXd m = dense.omega + d * d.transpose();
      const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().maxCoeff();
      e_maxb = std::max(e_maxb, std::abs(br.max_bias - c * d.norm()));
      e_maxr = std::max(e_maxr, std::abs(br.max_rmse - c * std::sqrt(top)));
      if (a == kInfiniteThreshold)
        e_cre = std::max({e_cre, std::abs(br.max_bias), std::abs(br.max_rmse - 1.0)});
    }
  }
  const double secs = t.seconds();
  out.pass = out.pass && e_mean <= kEnumTol && e_var <= kEnumTol && e_bias <= kEnumTol && e_mse <= kEnumTol &&
             e_maxb <= kEigenTol && e_maxr <= kEigenTol && e_cre <= kEigenTol && secs < kEnumSeconds;
  out.detail += fmt("(a) mean %.1e var %.1e; (b) bias %.1e mse %.1e", e_mean, e_var, e_bias, e_mse);
  out.detail += fmt("; (c) max bias %.1e max rmse %.1e; (d) %.1e; %.2f s", e_maxb, e_maxr, e_cre, secs);
  return out;
}

// Naive K-dimensional rejection sampler for L_{K,a}.
std::vector<double> rejection_draws(int k, double a, std::size_t count, std::uint64_t seed) {
  CounterRng rng(seed, 0xACCE);
  std::vector<double> out;
  out.reserve(count);
  while (out.size() < count) {
    const double d1 = rng.normal();
    double s = d1 * d1;
    for (int j = 1; j < k && s <= a; ++j) {
      const double d = rng.normal();
      s += d * d;
    }
    if (s <= a) out.push_back(d1);
  }
  return out;
}

double rem_gof(const FinitePopulation& pop, double a, std::uint64_t seed) {
  std::map<std::uint64_t, std::uint64_t> counts;
  BalanceCriterion crit(pop);
  for_each_assignment(pop.n(), pop.n1(), [&](const std::vector<std::uint32_t>& tr) {
    if (crit.from_treated(tr) <= a) counts[testutil::mask_of(tr)] = 0;
  });
  RemSampler sampler(pop, a);
  for (std::uint64_t r = 0; r < kSamplerDraws; ++r) {
    auto d = sampler.draw(seed, r, 1'000'000);
    auto it = counts.find(testutil::mask_of(d.assignment.treated()));
    if (it == counts.end()) return 0.0;  // drew an unacceptable assignment
    ++it->second;
  }
  std::vector<std::uint64_t> c;
  for (auto& [m, v] : counts) c.push_back(v);
  return testutil::uniform_gof_pvalue(c);
}

Outcome sampler_correctness() {
  Outcome out;
  Eigen::MatrixXd line(4, 1);
  line << 1, 2, 3, 4;
  const double p_line = rem_gof(FinitePopulation(line, 2), 0.3, 77);

  auto pop10 = testutil::random_population(10, 5, 2, 41);
  std::vector<double> ms;
  BalanceCriterion crit(pop10);
  for_each_assignment(10, 5, [&](const std::vector<std::uint32_t>& tr) { ms.push_back(crit.from_treated(tr)); });
  std::sort(ms.begin(), ms.end());
  const double p_ten = rem_gof(pop10, ms[59], 3);
  if (!(p_line > kGofMinP && p_ten > kGofMinP)) out.pass = false;
  out.detail = fmt("ReM GOF p %.3f, %.3f", p_line, p_ten);

  double worst_ks = 0.0, worst_z = 0.0;
  std::uint64_t seed = 100;
  for (int k : {1, 2, 5, 20})
    for (double p : {0.1, 0.01, 0.001}) {
      auto law = ConstrainedGaussianLaw::from_acceptance(k, p);
      CounterRng rng(seed++, 0x5A);
      std::vector<double> draws(kSamplerDraws);
      double s2 = 0.0, s4 = 0.0;
      for (auto& d : draws) {
        d = law.sample(rng);
        s2 += d * d;
        s4 += d * d * d * d;
      }
      const double nd = static_cast<double>(kSamplerDraws);
      const double var = s2 / nd;
      const double se = std::sqrt((s4 / nd - var * var) / nd);
      const double z = std::abs(var - law.v()) / se;
      const auto ref = rejection_draws(k, law.a(), kSamplerDraws, seed++);
      const double ks = testutil::ks_statistic(draws, ref) / testutil::ks_critical(kKsAlpha, kSamplerDraws, kSamplerDraws);
      worst_ks = std::max(worst_ks, ks);
      worst_z = std::max(worst_z, z);
      if (ks >= 1.0 || z > kVarSe) {
        out.pass = false;
        out.detail += fmt("; K=%.0f p=%.3g KS/crit %.2f var z %.2f", k, p, ks, z);
      }
    }
  out.detail += fmt("; L sampler max KS/crit %.3f, max |var z| %.2f", worst_ks, worst_z);
  return out;
}

Outcome variance_reduction() {
  Timer t;
  auto pop = linear_population(1000, 100, 5, 0.6, 11);
  const double r2 = population_estimands(pop).r2;
  const double a = ChiSquareLaw(5).quantile(0.001);
  const double expected = 1.0 - (1.0 - v_Ka(5, a)) * r2;
  const FastTau tau_hat(pop);

  std::vector<double> cre(kRatioDraws), rem(kRatioDraws);
  const CounterRng root(21, 0xC0);
  for (std::size_t r = 0; r < kRatioDraws; ++r) {
    CounterRng rng = root.substream(r);
    cre[r] = tau_hat(sample_cre(1000, 100, rng).treated());
  }
  RemSampler sampler(pop, a);
  for (std::size_t r = 0; r < kRatioDraws; ++r) rem[r] = tau_hat(sampler.draw(22, r, 10'000'000).assignment.treated());
  const double ratio = sample_variance(rem) / sample_variance(cre);
  const double secs = t.seconds();
  Outcome out;
  out.pass = std::abs(ratio - expected) <= kRatioTol && secs < kRatioSeconds;
  out.detail = fmt("ratio %.4f vs 1-(1-v)R2 = %.4f (R2 %.3f), %.1f s", ratio, expected, r2, secs);
  return out;
}

Outcome coverage() {
  Timer t;
  auto pop = linear_population(500, 100, 5, 0.6, 12);
  const double tau = population_estimands(pop).tau;
  const double a = ChiSquareLaw(5).quantile(0.001);
  McConfig cfg;
  cfg.samples = kCoverageMc;
  cfg.seed = 31;
  const ConvolutionQuantiles q(ConstrainedGaussianLaw(5, a), cfg);
  RemSampler sampler(pop, a);
  // HC0 is the pinned estimator; HC1-HC3 are reported alongside
  std::array<std::size_t, 4> hit_c{};
  std::size_t hit_w = 0;
  for (std::size_t r = 0; r < kCoverageReps; ++r) {
    const auto d = sampler.draw(32, r, 10'000'000);
    const auto data = observe(pop, d.assignment);
    for (int hc = 0; hc < 4; ++hc) {
      const auto c = confidence_interval(data, q, 31, 0.05, CiMethod::Constrained, hc_from_int(hc));
      hit_c[hc] += c.ci_lower <= tau && tau <= c.ci_upper;
    }
    const auto w = confidence_interval(data, q, 31, 0.05, CiMethod::Wald, HcMode::HC0);
    hit_w += w.ci_lower <= tau && tau <= w.ci_upper;
  }
  const auto rate = [](std::size_t h) { return static_cast<double>(h) / kCoverageReps; };
  const double cov_c = rate(hit_c[0]);
  const double cov_w = rate(hit_w);
  const double secs = t.seconds();
  Outcome out;
  out.pass = cov_c >= kCoverageLo && cov_c <= kCoverageHi && cov_w >= kWaldMin && secs < kCoverageSeconds;
  out.detail = fmt("HC0 constrained %.4f, Wald %.4f over 5000 reps, %.1f s", cov_c, cov_w, secs);
  out.detail += fmt(" (constrained HC1 %.4f, HC2 %.4f, HC3 %.4f)", rate(hit_c[1]), rate(hit_c[2]), rate(hit_c[3]));
  return out;
}

Outcome berry_esseen() {
  Outcome out;
  double worst_route = 0.0, worst_delta = 0.0;
  std::size_t bad = 0;
  for (std::uint64_t s = 0; s < kBerryInstances; ++s) {
    CounterRng rng(s, 0xBE);
    const std::size_t n = 20 + rng.below(281);
    const std::size_t k = rng.below(11);
    const std::size_t n1 = 1 + rng.below(n - 1);
    auto pop = testutil::random_population(n, n1, k, 9000 + s);
    const double direct = gamma_n(pop);
    const auto g = gamma_decomposed(pop);
    worst_route = std::max(worst_route, std::abs(direct - g.gamma_n) / std::max(1.0, direct));
    const bool ok = direct >= gamma_lower_bound(n, n1, k) && g.gamma_n >= g.gamma_tilde / (4.0 * std::sqrt(2.0)) &&
                    g.gamma_n <= std::sqrt(2.0) * g.gamma_tilde;
    if (!ok) ++bad;
    const double ref = 174.0 * direct + 7.0 * std::cbrt(direct);
    worst_delta = std::max(worst_delta, std::abs(delta_bound(direct) - ref) / std::max(1.0, ref));
  }
  out.pass = bad == 0 && worst_route <= kGammaRouteTol && worst_delta <= kDeltaTol;
  out.detail = fmt("%.0f instances, %.0f bound violations, route gap %.1e, delta gap %.1e",
                   static_cast<double>(kBerryInstances), static_cast<double>(bad), worst_route, worst_delta);
  return out;
}

Outcome regimes() {
  const double v_small = v_Ka(50, ChiSquareLaw(50).quantile_from_log(-50.0 * 50.0));
  const double v_large = v_Ka(200, ChiSquareLaw(200).quantile_from_log(-1.0));
  Outcome out;
  out.pass = v_small < kRegimeSmall && v_large > kRegimeLarge;
  out.detail = fmt("v(50, p=e^-2500) = %.4f (< 0.05), v(200, p=e^-1) = %.4f (> 0.95)", v_small, v_large);
  return out;
}

Outcome lemma_properties() {
  Outcome out;
  std::size_t points = 0, bad_sandwich = 0, bad_monotone = 0;
  double worst_quad = 0.0;
  for (int k = 1; k <= 40; ++k) {
    double prev = 0.0;
    for (int i = 0; i < 25; ++i) {
      const double a = 0.01 * std::pow(1.5, i);
      const double v = v_Ka(k, a);
      ++points;
      if (v < std::min(a / (4.0 * k), (k - 2.0) / (4.0 * k)) || v > a / k) ++bad_sandwich;
      if (v < prev) ++bad_monotone;
      prev = v;
      worst_quad = std::max(worst_quad, std::abs(v - oracle::truncated_chi2_mean_over_k(k, a)));
    }
  }
  out.pass = bad_sandwich == 0 && bad_monotone == 0 && worst_quad <= kQuadratureTol;
  out.detail = fmt("%.0f grid points, %.0f sandwich and %.0f monotonicity violations, quadrature gap %.1e",
                   static_cast<double>(points), static_cast<double>(bad_sandwich), static_cast<double>(bad_monotone),
                   worst_quad);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// stdout plus the bytes of every file the command wrote.
std::string run_cli(std::vector<std::string> args, const std::vector<fs::path>& files) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  std::string all = std::to_string(code) + "\n" + out.str();
  for (const auto& f : files) {
    all += "\n--" + f.filename().string() + "\n" + slurp(f);
    fs::remove(f);
  }
  return all;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("rerand_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto pop = testutil::random_population(150, 50, 3, 4);
  CounterRng rng(2);
  const auto asg = sample_cre(150, 50, rng);
  {
    std::ofstream f(dir / "pop.csv");
    f.precision(17);
    f << "x1,x2,x3,y1,y0,z,y\n";
    for (std::size_t i = 0; i < pop.n(); ++i) {
      for (std::size_t j = 0; j < 3; ++j) f << pop.covariates()(i, j) << ",";
      f << pop.y1()(i) << "," << pop.y0()(i) << "," << int(asg.z[i]) << ","
        << (asg.z[i] ? pop.y1()(i) : pop.y0()(i)) << "\n";
    }
    std::ofstream(dir / "cfg.json") << R"({"ks": [0, 2], "trims": [false, true], "reps": 30, "mc_samples": 10000})";
  }
  const std::string in = (dir / "pop.csv").string();
  struct Command {
    std::string name;
    std::vector<std::string> args;
    std::vector<fs::path> files;
  };
  const std::vector<Command> commands{
      {"design",
       {"design", "--input", in, "--covariates", "x1,x2,x3", "--n1", "50", "--p", "0.001", "--seed", "99", "--output",
        (dir / "z.csv").string()},
       {dir / "z.csv", dir / "z.csv.json"}},
      {"diagnose",
       {"diagnose", "--input", in, "--covariates", "x1,x2,x3", "--n1", "50", "--y1", "y1", "--y0", "y0", "--p", "0.01",
        "--reps", "1000", "--seed", "5", "--output", (dir / "diag.json").string()},
       {dir / "diag.json"}},
      {"analyze",
       {"analyze", "--input", in, "--covariates", "x1,x2,x3", "--y", "y", "--z", "z", "--p", "0.001", "--seed", "8",
        "--mc-samples", "50000", "--output", (dir / "ci.json").string()},
       {dir / "ci.json"}},
      {"simulate",
       {"simulate", "--config", (dir / "cfg.json").string(), "--input", in, "--covariates", "x1,x2,x3", "--y1", "y1",
        "--y0", "y0", "--n1", "50", "--p", "0.01", "--seed", "3", "--output", (dir / "sim").string()},
       {dir / "sim.csv", dir / "sim.json"}},
  };
  Outcome out;
  for (const auto& cmd : commands) {
    auto one = cmd.args;
    one.insert(one.end(), {"--threads", "1"});
    auto four = cmd.args;
    four.insert(four.end(), {"--threads", "4"});
    const std::string a = run_cli(cmd.args, cmd.files);
    const std::string b = run_cli(cmd.args, cmd.files);
    const std::string c = run_cli(one, cmd.files);
    const std::string d = run_cli(four, cmd.files);
    if (a.rfind("0\n", 0) != 0) {
      out.pass = false;
      out.detail += cmd.name + " exit " + a.substr(0, a.find('\n')) + "; ";
      continue;
    }
    const bool ok = a == b && a == c && a == d;
    if (!ok) out.pass = false;
    out.detail += cmd.name + (ok ? " identical; " : " DIFFERS; ");
  }
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, table_values},        {2, corollary_limit}, {3, enumeration}, {4, sampler_correctness},
      {5, variance_reduction}, {6, coverage},        {7, berry_esseen}, {8, regimes},
      {9, lemma_properties},   {10, determinism}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "CRITERION " << id << ": " << (o.pass ? "PASS" : "FAIL") << ": " << o.detail << std::endl;
  }
  std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
