#pragma once

#include <iosfwd>
#include <json.hpp>
#include <vector>

#include "rerand/diagnostics.hpp"
#include "rerand/inference.hpp"
#include "rerand/population.hpp"
#include "rerand/simulation.hpp"

namespace rerand {

// Non-finite numbers (an infinite threshold) serialize as null.
nlohmann::json number_or_null(double v);

nlohmann::json to_json(const LeverageReport& lev, bool include_h = true);
nlohmann::json to_json(const InferenceResult& res);
nlohmann::json to_json(const DiagnosticsReport& rep);
nlohmann::json to_json(const ScenarioRow& row);

// Reads the optional keys ks, trims, p, outcomes, reps, mc_samples, alpha,
// trim ([lo, hi]), seed, max_draws, threads over the defaults of Scenario.
Scenario scenario_from_json(const nlohmann::json& j);

void write_scenario_csv(std::ostream& os, const std::vector<ScenarioRow>& rows);

// Aligned text table with the design-diagnostic columns.
void write_diagnostics_table(std::ostream& os, const DiagnosticsReport& rep);

}  // namespace rerand
