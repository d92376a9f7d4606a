#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "rerand/constrained_gaussian.hpp"
#include "rerand/design.hpp"
#include "rerand/diagnostics.hpp"
#include "rerand/error.hpp"
#include "rerand/inference.hpp"
#include "rerand/population.hpp"
#include "rerand/report.hpp"
#include "rerand/simulation.hpp"
#include "rerand/specialfn.hpp"

namespace rerand::cli {

namespace {

using nlohmann::json;

struct Options {
  std::string input;
  std::string output;
  std::string config;
  std::string assignment;
  std::vector<std::string> covariates;
  std::string y1, y0, y, z;
  std::optional<std::size_t> n1;
  std::optional<std::size_t> k;
  std::optional<double> p;
  std::optional<double> a;
  std::optional<double> alpha;
  int hc = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<std::size_t> mc_samples;
  std::vector<double> trim;
  unsigned threads = 1;
  std::uint64_t max_draws = 10'000'000;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open input file '" + path + "'");
  return in;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write output file '" + path + "'");
  out << content;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::uint64_t require_seed(const Options& o, const char* command) {
  if (!o.seed) throw ValidationError(std::string(command) + " is stochastic and needs an explicit --seed");
  return *o.seed;
}

FinitePopulation load(const Options& o, bool with_outcomes) {
  if (!o.n1) throw ValidationError("--n1 is required");
  ColumnSchema schema;
  schema.covariates = o.covariates;
  if (with_outcomes) {
    if (!o.y1.empty()) schema.y1 = o.y1;
    if (!o.y0.empty()) schema.y0 = o.y0;
    schema.require_both_outcomes = schema.y1.has_value() || schema.y0.has_value();
  }
  auto in = open_input(o.input);
  FinitePopulation pop = load_population(in, schema, *o.n1);
  if (o.k) {
    if (*o.k > pop.k()) {
      throw ValidationError("--k " + std::to_string(*o.k) + " exceeds the " + std::to_string(pop.k()) +
                            " listed covariates");
    }
    pop = pop.leading_covariates(*o.k);
  }
  if (!o.trim.empty()) pop = trim_covariates(pop, o.trim[0], o.trim[1]);
  return pop;
}

void check_threshold_flags(const Options& o) {
  if (o.p && o.a) throw ValidationError("--p and --a are mutually exclusive");
  if (!o.p && !o.a) throw ValidationError("one of --p or --a is required");
}

// Threshold and nominal acceptance probability for K covariates.
std::pair<double, double> resolve_threshold(const Options& o, std::size_t k) {
  check_threshold_flags(o);
  if (o.p) {
    DesignSpec spec = DesignSpec::from_acceptance(*o.p, 0);
    return {threshold(spec, k), *o.p};
  }
  DesignSpec::direct(*o.a, 0).validate();
  const double p = (k == 0 || *o.a == kInfiniteThreshold) ? 1.0 : chi2_cdf(*o.a, static_cast<int>(k));
  return {*o.a, p};
}

int cmd_design(const Options& o, std::ostream& out) {
  const std::uint64_t seed = require_seed(o, "design");
  const FinitePopulation pop = load(o, false);
  check_threshold_flags(o);
  DesignSpec spec = o.p ? DesignSpec::from_acceptance(*o.p, seed) : DesignSpec::direct(*o.a, seed);
  spec.max_draws = o.max_draws;
  spec.threads = o.threads;
  const auto [a, p] = resolve_threshold(o, pop.k());
  const RemDraw draw = sample_rem(pop, spec);

  std::ostringstream csv;
  csv << "z\n";
  for (const auto v : draw.assignment.z) csv << static_cast<int>(v) << '\n';
  json side{{"threshold", number_or_null(a)}, {"p", p},          {"k", pop.k()},
            {"n", pop.n()},                   {"n1", pop.n1()}, {"m_value", draw.m_value},
            {"draws_used", draw.draws_used},  {"seed", seed}};
  side["leverage"] = pop.k() > 0 ? to_json(leverage_scores(pop), false) : json(nullptr);

  if (o.output.empty()) {
    out << csv.str();
    out << dump(side);
  } else {
    write_file(o.output, csv.str());
    write_file(o.output + ".json", dump(side));
  }
  return kOk;
}

int cmd_diagnose(const Options& o, std::ostream& out) {
  const FinitePopulation pop = load(o, true);
  check_threshold_flags(o);
  DiagnoseOptions opts;
  opts.p = o.p;
  opts.a = o.a;
  opts.bias_draws = o.reps.value_or(0);
  if (opts.bias_draws > 0) opts.seed = require_seed(o, "diagnose with --reps");
  opts.max_draws = o.max_draws;
  opts.threads = o.threads;
  const DiagnosticsReport rep = diagnose(pop, opts);
  const std::string text = dump(to_json(rep));
  if (o.output.empty()) {
    out << text;
  } else {
    write_file(o.output, text);
    write_diagnostics_table(out, rep);
  }
  return kOk;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const std::uint64_t seed = require_seed(o, "analyze");
  if (o.y.empty()) throw ValidationError("--y names the observed outcome column");
  if (o.z.empty() == o.assignment.empty()) throw ValidationError("give exactly one of --z or --assignment");
  auto in = open_input(o.input);
  const Table table = read_table(in);

  ObservedData data;
  data.y = table.numeric_column(o.y);
  std::vector<double> zcol;
  if (!o.z.empty()) {
    zcol = table.numeric_column(o.z);
  } else {
    auto zin = open_input(o.assignment);
    zcol = read_table(zin).numeric_column("z");
  }
  if (zcol.size() != data.y.size()) throw ValidationError("assignment length differs from the outcome column");
  std::vector<std::uint8_t> z(zcol.size());
  for (std::size_t i = 0; i < zcol.size(); ++i) {
    if (zcol[i] != 0.0 && zcol[i] != 1.0) throw ValidationError("assignment entries must be 0 or 1");
    z[i] = static_cast<std::uint8_t>(zcol[i]);
  }
  data.asg = Assignment::from_indicators(std::move(z));
  data.covariates.resize(static_cast<Eigen::Index>(data.y.size()), static_cast<Eigen::Index>(o.covariates.size()));
  for (std::size_t j = 0; j < o.covariates.size(); ++j) {
    const auto col = table.numeric_column(o.covariates[j]);
    for (std::size_t i = 0; i < col.size(); ++i) {
      data.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    }
  }
  const std::size_t k = o.k.value_or(o.covariates.size());
  const auto [a, p] = resolve_threshold(o, k);
  McConfig cfg;
  cfg.seed = seed;
  cfg.threads = o.threads;
  if (o.mc_samples) cfg.samples = *o.mc_samples;
  const double alpha = o.alpha.value_or(0.05);
  const HcMode hc = hc_from_int(o.hc);
  json j;
  j["constrained"] = to_json(confidence_interval(data, static_cast<int>(k), a, alpha, CiMethod::Constrained, hc, cfg));
  j["wald"] = to_json(confidence_interval(data, static_cast<int>(k), a, alpha, CiMethod::Wald, hc, cfg));
  j["p"] = p;
  const std::string text = dump(j);
  if (o.output.empty()) {
    out << text;
  } else {
    write_file(o.output, text);
  }
  return kOk;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  Scenario sc;
  if (!o.config.empty()) {
    auto in = open_input(o.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ValidationError("scenario file '" + o.config + "' is not valid JSON: " + e.what());
    }
    if (!j.contains("seed") && !o.seed) throw ValidationError("simulate is stochastic and needs an explicit --seed");
    sc = scenario_from_json(j);
  } else {
    require_seed(o, "simulate");
    sc.mc_samples = 20'000;
  }
  if (o.seed) sc.seed = *o.seed;
  if (o.reps) sc.reps = *o.reps;
  if (o.mc_samples) sc.mc_samples = *o.mc_samples;
  if (o.p) sc.p = *o.p;
  if (o.alpha) sc.alpha = *o.alpha;
  if (!o.trim.empty()) {
    sc.trim_lower = o.trim[0];
    sc.trim_upper = o.trim[1];
  }
  sc.threads = o.threads;
  sc.max_draws = o.max_draws;
  sc.validate();

  std::optional<FinitePopulation> pop;
  if (!o.input.empty()) {
    Options load_opts = o;
    load_opts.trim.clear();
    pop.emplace(load(load_opts, true));
  } else {
    SurrogateOptions so;
    so.k_max = *std::max_element(sc.ks.begin(), sc.ks.end());
    so.seed = sc.seed;
    pop.emplace(star_surrogate(so));
  }
  const auto rows = run_scenario(*pop, sc);

  std::ostringstream csv;
  write_scenario_csv(csv, rows);
  json j;
  j["scenario"] = {{"ks", sc.ks},         {"trims", sc.trims}, {"p", sc.p},
                   {"outcomes", sc.outcomes}, {"reps", sc.reps}, {"mc_samples", sc.mc_samples},
                   {"alpha", sc.alpha},   {"trim", {sc.trim_lower, sc.trim_upper}}, {"seed", sc.seed},
                   {"n", pop->n()},       {"n1", pop->n1()}};
  j["rows"] = json::array();
  for (const auto& r : rows) j["rows"].push_back(to_json(r));
  if (o.output.empty()) {
    out << csv.str();
  } else {
    write_file(o.output + ".csv", csv.str());
    write_file(o.output + ".json", dump(j));
  }
  return kOk;
}

void add_population_flags(CLI::App* cmd, Options& o, bool outcomes) {
  cmd->add_option("--input", o.input, "Delimited table with a header row")->required();
  cmd->add_option("--covariates", o.covariates, "Covariate columns, comma separated")->delimiter(',');
  cmd->add_option("--n1", o.n1, "Number of treated units");
  cmd->add_option("--k", o.k, "Use only the first k listed covariates");
  cmd->add_option("--trim", o.trim, "Winsorize covariates at quantiles lo,hi")->delimiter(',')->expected(2);
  if (outcomes) {
    cmd->add_option("--y1", o.y1, "Treated potential outcome column");
    cmd->add_option("--y0", o.y0, "Control potential outcome column");
  }
}

void add_threshold_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--p", o.p, "Acceptance probability p_n in (0, 1]");
  cmd->add_option("--a", o.a, "Direct threshold a_n >= 0");
}

void add_run_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "Random seed (required for stochastic commands)");
  cmd->add_option("--threads", o.threads, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  cmd->add_option("--max-draws", o.max_draws, "Rejection-sampling budget per assignment")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Rerandomization design, diagnostics and inference", "rerand"};
  app.require_subcommand(1);

  auto* design = app.add_subcommand("design", "Draw one acceptable assignment");
  add_population_flags(design, o, false);
  add_threshold_flags(design, o);
  add_run_flags(design, o);
  design->add_option("--output", o.output, "Assignment CSV; the sidecar goes to <output>.json");

  auto* diag = app.add_subcommand("diagnose", "Leverage, Berry-Esseen and worst-case bias diagnostics");
  add_population_flags(diag, o, true);
  add_threshold_flags(diag, o);
  add_run_flags(diag, o);
  diag->add_option("--reps", o.reps, "ReM draws for max bias / RMSE (0 skips)");
  diag->add_option("--output", o.output, "Report JSON");

  auto* analyze = app.add_subcommand("analyze", "Point estimate and confidence intervals");
  analyze->add_option("--input", o.input, "Observed data table")->required();
  analyze->add_option("--covariates", o.covariates, "Covariate columns, comma separated")->delimiter(',');
  analyze->add_option("--y", o.y, "Observed outcome column");
  analyze->add_option("--z", o.z, "Assignment column in the input table");
  analyze->add_option("--assignment", o.assignment, "Separate assignment CSV with a z column");
  analyze->add_option("--k", o.k, "Number of covariates used by the design");
  analyze->add_option("--alpha", o.alpha, "1 - confidence level");
  analyze->add_option("--hc", o.hc, "Residual rescaling 0..3")->check(CLI::Range(0, 3));
  analyze->add_option("--mc-samples", o.mc_samples, "Monte Carlo draws for the nu quantile");
  add_threshold_flags(analyze, o);
  add_run_flags(analyze, o);
  analyze->add_option("--output", o.output, "Result JSON");

  auto* sim = app.add_subcommand("simulate", "Design/coverage study on a synthetic or supplied population");
  sim->add_option("--config", o.config, "Scenario JSON");
  sim->add_option("--input", o.input, "Population table (default: synthetic STAR-like surrogate)");
  sim->add_option("--covariates", o.covariates, "Covariate columns, comma separated")->delimiter(',');
  sim->add_option("--y1", o.y1, "Treated potential outcome column");
  sim->add_option("--y0", o.y0, "Control potential outcome column");
  sim->add_option("--n1", o.n1, "Number of treated units");
  sim->add_option("--trim", o.trim, "Winsorizing quantiles lo,hi for trimmed designs")->delimiter(',')->expected(2);
  sim->add_option("--p", o.p, "Acceptance probability");
  sim->add_option("--alpha", o.alpha, "1 - confidence level");
  sim->add_option("--reps", o.reps, "Replications per design");
  sim->add_option("--mc-samples", o.mc_samples, "Monte Carlo draws for nu quantiles");
  add_run_flags(sim, o);
  sim->add_option("--output", o.output, "Output prefix for <prefix>.csv and <prefix>.json");

  std::vector<std::string> argv_store{"rerand"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (!o.trim.empty() && !(0.0 <= o.trim[0] && o.trim[0] < o.trim[1] && o.trim[1] <= 1.0)) {
      throw ValidationError("--trim needs 0 <= lo < hi <= 1");
    }
    if (design->parsed()) return cmd_design(o, out);
    if (diag->parsed()) return cmd_diagnose(o, out);
    if (analyze->parsed()) return cmd_analyze(o, out);
    return cmd_simulate(o, out);
  } catch (const MaxDrawsExceededError& e) {
    err << "error: " << e.what() << '\n';
    return kMaxDraws;
  } catch (const SingularCovarianceError& e) {
    err << "error: " << e.what() << '\n';
    return kSingular;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace rerand::cli
