#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msmcost/cost_estimators.hpp"
#include "msmcost/event_history.hpp"
#include "msmcost/npv.hpp"
#include "msmcost/regression.hpp"
#include "msmcost/simulator.hpp"

namespace msmcost {

// Minimal delimited reader: comma separated, double quotes escape fields
// containing commas, quotes, or newlines, header row required. Every data
// row must match the header width. line[i] is the 1-based source line of
// rows[i]. Errors: IoError (unreadable file), SchemaError (malformed
// content, message carries the line number).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> line;

  std::optional<std::size_t> column(const std::string& name) const;
  std::size_t need(const std::string& name) const;  // SchemaError when absent
};

CsvTable read_csv_file(const std::string& path);
void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows);

// Ingest summary: row counts, rows set aside with a reason, documented
// defaults that were applied.
struct RejectedRow {
  long line = 0;
  std::string reason;
};

struct IngestReport {
  long event_rows = 0;
  long subject_rows = 0;
  std::vector<RejectedRow> rejected;
  std::vector<std::string> notes;
};

struct CohortBundle {
  StateSpace states;
  std::vector<EventHistory> histories;
  IngestReport report;
};

// states.json: {"states": [{"label": ..., "absorbing": ...}, ...]}
StateSpace read_states_json(const std::string& path);
void write_states_json(const std::string& path, const StateSpace& states);

// subjects.csv columns: subject_id, initial_state (integer index),
// censor_time (empty = never censored), remaining columns numeric baseline
// covariates. events.csv columns: subject_id, time, from_state, to_state,
// cost. Event rows past the horizon are set aside, not errors; a missing
// censor_time column is noted and read as uncensored throughout.
CohortBundle read_cohort(const std::string& events_path, const std::string& subjects_path,
                         const std::string& states_path, double horizon);

void write_events_csv(const std::string& path, const std::vector<EventHistory>& cohort);
void write_subjects_csv(const std::string& path, const std::vector<EventHistory>& cohort);

// panel.csv columns: subject_id, interval_start, interval_end, cost,
// observed (1 full, 0 unobserved, the word partial otherwise). Rows of one
// subject must chain interval_end to the next interval_start starting at 0.
std::vector<CostPanel> read_panels_csv(const std::string& path);
void write_panels_csv(const std::string& path, const std::vector<CostPanel>& panels);

// accrual.csv columns: subject_id, time, increment. Returned per subject as
// the accumulated step function of billing atoms.
std::map<std::string, StepFunction> read_accrual_csv(const std::string& path);
void write_accrual_csv(const std::string& path,
                       const std::vector<std::pair<std::string, StepFunction>>& accruals);

// Observed accumulation processes: transition costs at their event times
// plus any accrual atoms for the subject. Increments at time zero become the
// initial cost.
std::vector<CostProcess> cost_processes_from(
    const std::vector<EventHistory>& cohort,
    const std::map<std::string, StepFunction>& accrual = {});

// Single-cost reduction: terminal event time (+inf when absent), censoring
// time, total undiscounted observed cost including any accrual atoms.
std::vector<CostTriple> cost_triples_from(
    const std::vector<EventHistory>& cohort,
    const std::map<std::string, StepFunction>& accrual = {});

// Lifetime-cost regression rows, one per subject: discounted observed total
// against baseline covariates.
std::vector<SubjectCost> subject_costs_from(
    const std::vector<EventHistory>& cohort, double discount_rate,
    const std::map<std::string, StepFunction>& accrual = {});

// cost-records.csv columns: subject_id, seq, t_end, cost, observed, then one
// column per design coordinate. The recipe names each design column as a
// covariate so downstream prediction can feed values by column name.
CostRegressionData read_cost_records_csv(const std::string& path);

// Scenario round trip. The JSON mirrors ScenarioSpec field for field; step
// functions serialize as {"initial": v, "times": [...], "values": [...]}.
ScenarioSpec read_scenario_json(const std::string& path);
void write_scenario_json(const std::string& path, const ScenarioSpec& spec);

// Valuation profile: covariate values, discounting, horizon, optional cost
// model design and link, optional direct sojourn rates, optional quality
// weights and initial-distribution override.
struct AnalysisProfile {
  std::map<std::string, double> covariates;
  double discount_rate = 0.0;
  double horizon = 0.0;
  std::optional<DesignRecipe> cost_design;
  LinkKind link = LinkKind::identity;
  std::optional<std::vector<double>> sojourn_grid;
  std::optional<std::vector<std::vector<double>>> sojourn_rates;  // state by interval
  std::map<int, StepFunction> quality;  // state index to weight path
  std::optional<std::vector<double>> initial_probs;
  std::optional<int> initial_state;
};

AnalysisProfile read_profile_json(const std::string& path);

}  // namespace msmcost
