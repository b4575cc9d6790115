#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msmcost/design.hpp"
#include "msmcost/regression.hpp"
#include "msmcost/simulator.hpp"

namespace msmcost {

// Estimators a replication study can track against the oracle. The single
// interval-sum entry is undiscounted; its target folds in the exact expected
// shortfall from interval censoring.
enum class StudyEstimator {
  ipcw_single,               // inverse censoring weighted single-cost mean
  survival_weighted_single,  // survival-weighted form of the same mean
  accumulation_direct,       // increment-weighted accumulation estimator
  accumulation_dual,         // mean-curve-at-event-times form
  interval_sum,              // undiscounted interval estimator on the panel grid
  transition_npv,            // occupancy-weighted fitted-cost assembly
  lifetime_wls,              // weighted least squares on lifetime totals
};

const std::string& study_estimator_name(StudyEstimator e);
std::optional<StudyEstimator> study_estimator_from_name(const std::string& name);

struct StudyConfig {
  ScenarioSpec scenario;
  int replicates = 0;
  std::vector<StudyEstimator> estimators;
  int threads = 1;
  // transition_npv cost model; empty recipe means a single intercept
  DesignRecipe cost_recipe;
  LinkKind link = LinkKind::identity;
  // lifetime_wls weighting endpoint
  WeightConvention convention = WeightConvention::transition_time;
  // Monte Carlo draws behind the interval-sum target correction
  long shortfall_draws = 200000;
};

struct EstimatorSummary {
  std::string name;
  std::vector<double> estimates;   // by replicate index
  std::vector<double> std_errors;  // model standard errors when the estimator has them
  double target = 0.0;             // oracle value this estimator aims at
  double target_se = 0.0;          // Monte Carlo error of the target, usually 0
  double mean = 0.0;
  double sd = 0.0;
  double bias = 0.0;               // mean - target
  double mc_se = 0.0;              // sd / sqrt(replicates)
  std::optional<double> coverage;  // fraction of 95% intervals covering the target
};

struct StudyResult {
  OracleNpv oracle;  // at the scenario's discount rate, initial mixture
  std::vector<EstimatorSummary> summaries;
};

// Runs R independent replicates, each a fresh cohort under a seed derived
// from (master seed, replicate index), applies every selected estimator, and
// summarizes against the oracle. Results are stored by replicate index and
// reduced sequentially, so the numbers are identical for any thread count.
// The oracle comparison requires every scenario covariate to be a constant.
// Errors: InvalidInput, plus anything a replicate's estimator throws.
StudyResult run_study(const StudyConfig& config);

// One internal-consistency identity evaluated on simulated data.
struct CheckRow {
  std::string name;
  double gap = 0.0;  // worst absolute deviation observed
  double tol = 0.0;
  bool pass = false;
};

struct CheckResult {
  std::vector<CheckRow> rows;

  bool all_pass() const;
};

// Simulates one cohort and verifies estimator identities that hold exactly
// on tie-free data: the two single-cost weight forms agree, the product-limit
// fits multiply to the raw at-risk fraction, occupancy-matrix rows sum to
// one, and unit-weight generalized least squares collapses to ordinary least
// squares.
CheckResult run_check(const ScenarioSpec& spec);

// Stable per-replicate seed: a fixed-increment mix of the master seed and the
// replicate index, identical under any execution order.
std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate);

}  // namespace msmcost
