#include "rerand/report.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rerand/error.hpp"

namespace rerand {

namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? number_or_null(*v) : json(nullptr); }

std::string csv_cell(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

std::string fixed(const std::optional<double>& v, int digits) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << *v;
  return os.str();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario key '") + key + "': " + e.what());
  }
}

}  // namespace

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const LeverageReport& lev, bool include_h) {
  json j;
  if (include_h) j["h"] = std::vector<double>(lev.h.data(), lev.h.data() + lev.h.size());
  j["sum_h32"] = lev.sum_h32;
  j["max_h"] = lev.max_h;
  j["min_sum_h32"] = lev.min_sum_h32;
  j["min_max_h"] = lev.min_max_h;
  return j;
}

json to_json(const InferenceResult& res) {
  return json{{"tau_hat", res.tau_hat},
              {"v_hat", res.v_hat},
              {"r2_hat", res.r2_hat},
              {"ci", {res.ci_lower, res.ci_upper}},
              {"method", to_string(res.method)},
              {"hc", to_string(res.hc)},
              {"alpha", res.alpha},
              {"nu_used", res.nu_used},
              {"k", res.k},
              {"a", number_or_null(res.a)},
              {"seed", res.seed}};
}

json to_json(const DiagnosticsReport& rep) {
  json j{{"n", rep.n},
         {"n1", rep.n1},
         {"k", rep.k},
         {"a", number_or_null(rep.a)},
         {"p", rep.p},
         {"one_minus_v", rep.one_minus_v},
         {"leverage", to_json(rep.leverage)},
         {"gamma_leverage_term", rep.gamma_leverage_term},
         {"gamma_lower_bound", rep.gamma_lower_bound},
         {"gamma_n", optional_number(rep.gamma_n)},
         {"gamma_tilde", optional_number(rep.gamma_tilde)},
         {"residual_third_moment", optional_number(rep.residual_third_moment)},
         {"delta_bound", optional_number(rep.delta_bound)},
         {"condition6", optional_number(rep.condition6)}};
  if (rep.bias_rmse) {
    j["max_bias"] = rep.bias_rmse->max_bias;
    j["max_rmse"] = rep.bias_rmse->max_rmse;
    j["max_rmse_se"] = rep.bias_rmse->max_rmse_se;
    j["bias_designs"] = rep.bias_rmse->designs;
  } else {
    j["max_bias"] = nullptr;
    j["max_rmse"] = nullptr;
    j["max_rmse_se"] = nullptr;
    j["bias_designs"] = nullptr;
  }
  return j;
}

json to_json(const ScenarioRow& row) {
  json cov = json::array();
  for (const auto& c : row.coverage) cov.push_back(optional_number(c));
  return json{{"k", row.k},
              {"trim", row.trim},
              {"one_minus_v", row.one_minus_v},
              {"a", number_or_null(row.a)},
              {"max_bias", optional_number(row.max_bias)},
              {"max_rmse", optional_number(row.max_rmse)},
              {"max_rmse_se", optional_number(row.max_rmse_se)},
              {"sum_h32", optional_number(row.sum_h32)},
              {"max_h", optional_number(row.max_h)},
              {"min_sum_h32", optional_number(row.min_sum_h32)},
              {"min_max_h", optional_number(row.min_max_h)},
              {"outcome", row.outcome.empty() ? json(nullptr) : json(row.outcome)},
              {"bias_std", optional_number(row.bias_std)},
              {"mse_ratio", optional_number(row.mse_ratio)},
              {"coverage", cov}};
}

Scenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("scenario must be a JSON object");
  Scenario sc;
  sc.ks = get_or(j, "ks", sc.ks);
  sc.trims = get_or(j, "trims", sc.trims);
  sc.p = get_or(j, "p", sc.p);
  sc.outcomes = get_or(j, "outcomes", sc.outcomes);
  sc.reps = get_or(j, "reps", sc.reps);
  sc.mc_samples = get_or(j, "mc_samples", sc.mc_samples);
  sc.alpha = get_or(j, "alpha", sc.alpha);
  sc.seed = get_or(j, "seed", sc.seed);
  sc.max_draws = get_or(j, "max_draws", sc.max_draws);
  sc.threads = get_or(j, "threads", sc.threads);
  const auto trim = get_or(j, "trim", std::vector<double>{sc.trim_lower, sc.trim_upper});
  if (trim.size() != 2) throw ValidationError("scenario key 'trim' must be [lower, upper]");
  sc.trim_lower = trim[0];
  sc.trim_upper = trim[1];
  return sc;
}

void write_scenario_csv(std::ostream& os, const std::vector<ScenarioRow>& rows) {
  os << "k,trim,one_minus_v,max_bias,max_rmse,max_rmse_se,sum_h32,max_h,min_sum_h32,min_max_h,outcome,bias_std,"
        "mse_ratio,cov_hc0,cov_hc1,cov_hc2,cov_hc3\n";
  for (const auto& r : rows) {
    os << r.k << ',' << (r.trim ? 1 : 0) << ',' << csv_cell(r.one_minus_v) << ',' << csv_cell(r.max_bias) << ','
       << csv_cell(r.max_rmse) << ',' << csv_cell(r.max_rmse_se) << ',' << csv_cell(r.sum_h32) << ','
       << csv_cell(r.max_h) << ',' << csv_cell(r.min_sum_h32) << ',' << csv_cell(r.min_max_h) << ','
       << (r.outcome.empty() ? "NA" : r.outcome) << ',' << csv_cell(r.bias_std) << ',' << csv_cell(r.mse_ratio);
    for (const auto& c : r.coverage) os << ',' << csv_cell(c);
    os << '\n';
  }
}

void write_diagnostics_table(std::ostream& os, const DiagnosticsReport& rep) {
  std::optional<double> bias, rmse;
  if (rep.bias_rmse) {
    bias = rep.bias_rmse->max_bias;
    rmse = rep.bias_rmse->max_rmse;
  }
  const bool has_k = rep.k > 0;
  const std::optional<double> sum_h = has_k ? std::optional(rep.leverage.sum_h32) : std::nullopt;
  const std::optional<double> max_h = has_k ? std::optional(rep.leverage.max_h) : std::nullopt;
  const std::optional<double> min_sum = has_k ? std::optional(rep.leverage.min_sum_h32) : std::nullopt;
  const std::optional<double> min_max = has_k ? std::optional(rep.leverage.min_max_h) : std::nullopt;
  os << std::setw(5) << "K" << std::setw(8) << "1-v" << std::setw(8) << "Bias" << std::setw(8) << "RMSE"
     << std::setw(10) << "sumH^1.5" << std::setw(8) << "maxH" << std::setw(12) << "min sumH" << std::setw(10)
     << "min maxH" << '\n';
  os << std::setw(5) << rep.k << std::setw(8) << fixed(rep.one_minus_v, 2) << std::setw(8) << fixed(bias, 2)
     << std::setw(8) << fixed(rmse, 2) << std::setw(10) << fixed(sum_h, 2) << std::setw(8) << fixed(max_h, 2)
     << std::setw(12) << fixed(min_sum, 2) << std::setw(10) << fixed(min_max, 2) << '\n';
  if (rep.gamma_n) {
    os << "gamma_n " << fixed(rep.gamma_n, 4) << "  gamma_tilde " << fixed(rep.gamma_tilde, 4) << "  delta bound "
       << fixed(rep.delta_bound, 4) << "  condition 6 " << fixed(rep.condition6, 4) << '\n';
  }
}

}  // namespace rerand
