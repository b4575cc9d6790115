#include "msmcost/replication.hpp"

#include <cmath>
#include <set>

#include "doctest.h"
#include "msmcost/errors.hpp"
#include "test_cohorts.hpp"

using msmcost::BasisKind;
using msmcost::CensoringLaw;
using msmcost::CheckResult;
using msmcost::CovariateLaw;
using msmcost::DesignRecipe;
using msmcost::DesignTerm;
using msmcost::ScenarioSpec;
using msmcost::StepFunction;
using msmcost::StudyConfig;
using msmcost::StudyEstimator;
using msmcost::StudyResult;
using msmcost::TransitionKey;
using msmcost::WeightConvention;

namespace {

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const msmcost::Error& e) {
    return e.code();
  }
  return "";
}

// illness-death cohort, costs paid on entry to the absorbing state, costs
// linear in the transition time, continuous censoring
ScenarioSpec terminal_cost_scenario(unsigned n, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.states = testing::illness_death();
  spec.intensities.push_back({{0, 1}, StepFunction::constant(0.5), {}});
  spec.intensities.push_back({{0, 2}, StepFunction::constant(0.25), {}});
  spec.intensities.push_back({{1, 2}, StepFunction::constant(0.8), {}});
  spec.transition_costs.push_back({{0, 2}, 120.0, 6.0, {}, 0.3});
  spec.transition_costs.push_back({{1, 2}, 150.0, 5.0, {}, 0.3});
  spec.censoring = {CensoringLaw::Kind::uniform, 0.8, 6.0, 0.0, {}, {}};
  spec.discount_rate = 0.04;
  spec.horizon = 3.0;
  spec.grid = {0.0, 1.0, 2.0, 3.0};
  spec.n_subjects = n;
  spec.seed = seed;
  return spec;
}

// one dummy and one slope per transition that can carry cost, plus a dummy
// for the costless one so every jumping transition has a fitted mean
DesignRecipe per_transition_recipe() {
  DesignRecipe recipe;
  recipe.terms.push_back(DesignTerm{TransitionKey{0, 1}, BasisKind::one, "", ""});
  recipe.terms.push_back(DesignTerm{TransitionKey{0, 2}, BasisKind::one, "", ""});
  recipe.terms.push_back(DesignTerm{TransitionKey{1, 2}, BasisKind::one, "", ""});
  recipe.terms.push_back(DesignTerm{TransitionKey{0, 2}, BasisKind::time, "", ""});
  recipe.terms.push_back(DesignTerm{TransitionKey{1, 2}, BasisKind::time, "", ""});
  return recipe;
}

const msmcost::EstimatorSummary& summary_for(const StudyResult& result,
                                             const std::string& name) {
  for (const auto& s : result.summaries)
    if (s.name == name) return s;
  FAIL("no summary named ", name);
  static msmcost::EstimatorSummary dummy;
  return dummy;
}

}  // namespace

TEST_CASE("replicate seeds are stable and well spread") {
  CHECK(msmcost::replicate_seed(42, 7) == msmcost::replicate_seed(42, 7));
  CHECK(msmcost::replicate_seed(0, 0) != 0);

  std::set<std::uint64_t> seen;
  for (std::uint64_t master : {0ULL, 42ULL, 0xDEADBEEFULL})
    for (std::uint64_t rep = 0; rep < 200; ++rep)
      seen.insert(msmcost::replicate_seed(master, rep));
  CHECK(seen.size() == 600);
}

TEST_CASE("study estimator names round trip") {
  const std::vector<std::pair<StudyEstimator, std::string>> expected = {
      {StudyEstimator::ipcw_single, "ipcw_single_cost"},
      {StudyEstimator::survival_weighted_single, "survival_weighted_single_cost"},
      {StudyEstimator::accumulation_direct, "accumulation_direct"},
      {StudyEstimator::accumulation_dual, "accumulation_dual"},
      {StudyEstimator::interval_sum, "interval_sum"},
      {StudyEstimator::transition_npv, "transition_npv"},
      {StudyEstimator::lifetime_wls, "lifetime_wls"},
  };
  for (const auto& [kind, name] : expected) {
    CHECK(msmcost::study_estimator_name(kind) == name);
    REQUIRE(msmcost::study_estimator_from_name(name).has_value());
    CHECK(*msmcost::study_estimator_from_name(name) == kind);
  }
  CHECK(!msmcost::study_estimator_from_name("bogus").has_value());
}

TEST_CASE("study configuration validation") {
  StudyConfig cfg;
  cfg.scenario = terminal_cost_scenario(50, 7);
  cfg.replicates = 4;
  cfg.estimators = {StudyEstimator::ipcw_single};

  auto broken = [&](auto mutate) {
    StudyConfig c = cfg;
    mutate(c);
    return code_of([&] { msmcost::run_study(c); });
  };

  CHECK(broken([](StudyConfig& c) { c.replicates = 1; }) == "InvalidInput");
  CHECK(broken([](StudyConfig& c) { c.estimators.clear(); }) == "InvalidInput");
  CHECK(broken([](StudyConfig& c) {
          c.estimators = {StudyEstimator::ipcw_single, StudyEstimator::ipcw_single};
        }) == "InvalidInput");
  CHECK(broken([](StudyConfig& c) { c.threads = 0; }) == "InvalidInput");
  // the oracle is a fixed number only when covariates are degenerate
  CHECK(broken([](StudyConfig& c) {
          c.scenario.covariates.push_back(
              {"age", CovariateLaw::Kind::normal, 60.0, 8.0});
        }) == "InvalidInput");
  // lifetime weighting must stop at the horizon to share the oracle estimand
  CHECK(broken([](StudyConfig& c) {
          c.estimators = {StudyEstimator::lifetime_wls};
          c.convention = WeightConvention::transition_time;
        }) == "InvalidInput");
}

TEST_CASE("consistency checks pass on tie free data") {
  CheckResult result = msmcost::run_check(terminal_cost_scenario(200, 5151));

  REQUIRE(result.rows.size() == 4);
  CHECK(result.rows[0].name == "single_cost_weight_forms_agree");
  CHECK(result.rows[0].tol == 1e-10);
  CHECK(result.rows[1].name == "product_limit_duality");
  CHECK(result.rows[1].tol == 1e-12);
  CHECK(result.rows[2].name == "occupancy_rows_sum_to_one");
  CHECK(result.rows[2].tol == 1e-12);
  CHECK(result.rows[3].name == "unit_weight_gls_is_ols");
  CHECK(result.rows[3].tol == 1e-10);
  for (const auto& row : result.rows) {
    CAPTURE(row.name);
    CHECK(row.gap <= row.tol);
    CHECK(row.pass);
  }
  CHECK(result.all_pass());
}

TEST_CASE("study runs are reproducible across repeats and threads") {
  StudyConfig cfg;
  cfg.scenario = terminal_cost_scenario(120, 909);
  cfg.replicates = 6;
  cfg.estimators = {
      StudyEstimator::ipcw_single,     StudyEstimator::survival_weighted_single,
      StudyEstimator::accumulation_direct, StudyEstimator::accumulation_dual,
      StudyEstimator::interval_sum,    StudyEstimator::transition_npv,
      StudyEstimator::lifetime_wls,
  };
  cfg.cost_recipe = per_transition_recipe();
  cfg.convention = WeightConvention::horizon_truncated;
  cfg.shortfall_draws = 20000;

  const StudyResult first = msmcost::run_study(cfg);
  const StudyResult again = msmcost::run_study(cfg);
  StudyConfig threaded = cfg;
  threaded.threads = 3;
  const StudyResult parallel = msmcost::run_study(threaded);

  REQUIRE(first.summaries.size() == 7);
  REQUIRE(again.summaries.size() == 7);
  REQUIRE(parallel.summaries.size() == 7);
  CHECK(first.oracle.total == parallel.oracle.total);
  for (std::size_t k = 0; k < first.summaries.size(); ++k) {
    const auto& s = first.summaries[k];
    CAPTURE(s.name);
    REQUIRE(s.estimates.size() == 6);
    CHECK(s.estimates == again.summaries[k].estimates);
    CHECK(s.estimates == parallel.summaries[k].estimates);
    CHECK(s.std_errors == parallel.summaries[k].std_errors);
    CHECK(s.target == parallel.summaries[k].target);

    double sum = 0.0;
    for (double v : s.estimates) sum += v;
    CHECK(s.mean == sum / 6.0);
    CHECK(s.bias == s.mean - s.target);
    CHECK(s.mc_se == s.sd / std::sqrt(6.0));
  }

  // every discounted estimator aims at the oracle total, the occupancy
  // assembly at its transition stream, and the interval sum at the
  // undiscounted total less the interval-censoring shortfall
  CHECK(summary_for(first, "ipcw_single_cost").target == first.oracle.total);
  CHECK(summary_for(first, "accumulation_dual").target == first.oracle.total);
  CHECK(summary_for(first, "lifetime_wls").target == first.oracle.total);
  CHECK(summary_for(first, "transition_npv").target == first.oracle.transition_stream);
  CHECK(summary_for(first, "interval_sum").target > 0.0);
  CHECK(summary_for(first, "interval_sum").target != first.oracle.total);

  const auto& wls = summary_for(first, "lifetime_wls");
  REQUIRE(wls.std_errors.size() == 6);
  for (double se : wls.std_errors) CHECK(se > 0.0);
  REQUIRE(wls.coverage.has_value());
  CHECK(*wls.coverage >= 0.0);
  CHECK(*wls.coverage <= 1.0);
  CHECK(summary_for(first, "ipcw_single_cost").std_errors.empty());
  CHECK(!summary_for(first, "transition_npv").coverage.has_value());
}

TEST_CASE("estimator means track the oracle") {
  StudyConfig cfg;
  cfg.scenario = terminal_cost_scenario(400, 2718);
  cfg.replicates = 40;
  cfg.estimators = {
      StudyEstimator::ipcw_single,     StudyEstimator::survival_weighted_single,
      StudyEstimator::accumulation_direct, StudyEstimator::accumulation_dual,
      StudyEstimator::transition_npv,  StudyEstimator::lifetime_wls,
  };
  cfg.cost_recipe = per_transition_recipe();
  cfg.convention = WeightConvention::horizon_truncated;

  const StudyResult result = msmcost::run_study(cfg);
  CHECK(result.oracle.total > 0.0);
  CHECK(result.oracle.rel_error <= 1e-7);

  for (const auto& s : result.summaries) {
    CAPTURE(s.name);
    CHECK(s.sd > 0.0);
    const double slack = s.name == "transition_npv" ? 5.0 : 4.0;
    CHECK(std::abs(s.bias) <= slack * s.mc_se);
  }

  // sandwich intervals should cover most of the time at this size
  const auto& wls = summary_for(result, "lifetime_wls");
  REQUIRE(wls.coverage.has_value());
  CHECK(*wls.coverage >= 0.8);
}

TEST_CASE("interval estimator target folds the censoring shortfall") {
  // censoring atoms sitting on panel grid points cost nothing
  ScenarioSpec on_grid = terminal_cost_scenario(300, 611);
  on_grid.censoring = {CensoringLaw::Kind::atoms, 0.0, 0.0, 0.0, {1.0, 3.0}, {0.5, 0.5}};
  StudyConfig cfg;
  cfg.scenario = on_grid;
  cfg.replicates = 30;
  cfg.estimators = {StudyEstimator::interval_sum};

  const StudyResult exact = msmcost::run_study(cfg);
  ScenarioSpec flat = on_grid;
  flat.discount_rate = 0.0;
  const double undiscounted = msmcost::oracle_npv(flat, {}, 0).total;
  const auto& clean = exact.summaries.front();
  CHECK(clean.target == undiscounted);
  CHECK(clean.target_se == 0.0);
  CHECK(std::abs(clean.bias) <= 4.0 * clean.mc_se);

  // continuous censoring leaks part of each interval, so the target drops
  // below the undiscounted total by the simulated shortfall
  StudyConfig leaky = cfg;
  leaky.scenario = terminal_cost_scenario(300, 612);
  leaky.shortfall_draws = 60000;
  const StudyResult shifted = msmcost::run_study(leaky);
  ScenarioSpec flat_leaky = leaky.scenario;
  flat_leaky.discount_rate = 0.0;
  const double full = msmcost::oracle_npv(flat_leaky, {}, 0).total;
  const auto& lossy = shifted.summaries.front();
  CHECK(lossy.target < full);
  CHECK(lossy.target_se > 0.0);
  CHECK(std::abs(lossy.bias) <= 4.0 * (lossy.mc_se + lossy.target_se));
}
