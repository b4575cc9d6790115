#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmcost/cost_estimators.hpp"
#include "msmcost/event_history.hpp"
#include "msmcost/regression.hpp"
#include "msmcost/stepfn.hpp"

namespace msmcost {

// Baseline covariate draw: a fixed value, a coin flip, or a normal variate.
struct CovariateLaw {
  enum class Kind { constant, bernoulli, normal };
  std::string name;
  Kind kind = Kind::constant;
  double a = 0.0;  // value, success probability, or mean
  double b = 0.0;  // standard deviation for normal
};

// Hazard of one transition: piecewise-constant base rate in t, scaled
// log-linearly by the covariates.
struct IntensityLaw {
  TransitionKey key;
  StepFunction base{0.0};
  std::map<std::string, double> loglinear;
};

// Mean cost attached to one transition type, linear in time and covariates,
// with multiplicative lognormal noise of unit mean (log_sd 0: deterministic).
struct TransitionCostLaw {
  TransitionKey key;
  double intercept = 0.0;
  double slope_time = 0.0;
  std::map<std::string, double> coef;
  double log_sd = 0.0;
};

// Deterministic accrual rate while occupying one state.
struct SojournLaw {
  int state = 0;
  StepFunction rate{0.0};
};

// Law of the censoring time U, independent of everything else. survival(t)
// is the exact P(U > t) used by oracle computations.
struct CensoringLaw {
  enum class Kind { none, uniform, exponential, atoms };
  Kind kind = Kind::none;
  double lo = 0.0;
  double hi = 0.0;
  double rate = 0.0;
  std::vector<double> atom_times;
  std::vector<double> atom_probs;

  double survival(double t) const;
};

// Full generative description of a study: the ground truth every estimator
// is judged against.
struct ScenarioSpec {
  StateSpace states;
  std::vector<CovariateLaw> covariates;
  std::vector<IntensityLaw> intensities;
  std::vector<TransitionCostLaw> transition_costs;
  std::vector<SojournLaw> sojourn_rates;
  // additive subject effect on the accrual rate, truncated at 4 sd; requires
  // every declared sojourn rate to stay nonnegative after the shift
  double sojourn_effect_sd = 0.0;
  CensoringLaw censoring;
  double discount_rate = 0.0;
  double horizon = 0.0;
  std::vector<double> grid;          // panel grid; empty means {0, horizon}
  std::vector<double> initial_probs; // empty means all mass on state 0
  std::size_t n_subjects = 0;
  std::uint64_t seed = 0;
  // billing time of the accrual accumulated between the last grid point and
  // the end of observation: at the end itself, or strictly inside so that
  // billed jumps avoid observed event times
  bool bill_tail_at_end = true;
};

// InvalidSpec on any structural problem; returns the panel grid actually in
// effect.
std::vector<double> validate_scenario(const ScenarioSpec& spec);

struct SimulatedSubject {
  std::string id;
  std::map<std::string, double> z;
  int initial_state = 0;
  double censor_time = 0.0;  // +inf when never censored
  double sojourn_effect = 0.0;
  std::vector<TransitionEvent> truth_path;  // uncensored, truncated at the horizon
  std::optional<double> absorption;         // within the horizon
  double discounted_total = 0.0;    // uncensored cost over (0, horizon]
  double undiscounted_total = 0.0;  // V(horizon), uncensored
  double discounted_observed = 0.0;   // cost accumulated to min(U, horizon, absorption)
  double undiscounted_observed = 0.0; // same endpoint, r = 0
  EventHistory history;               // censored view
  StepFunction accrual{0.0};        // accrual billing atoms alone
  CostProcess billed;               // censored view, accrual billed at grid points
  CostPanel panel;                  // censored view, exact interval costs
};

struct SimulatedCohort {
  std::vector<SimulatedSubject> subjects;

  std::vector<EventHistory> histories() const;
  std::vector<CostProcess> processes() const;
  std::vector<FollowUp> follow_ups() const;
  std::vector<CostPanel> panels() const;
  // (event time, censor time, undiscounted observed cost) per subject
  std::vector<CostTriple> triples() const;
  // one lifetime record per subject with the discounted observed cost
  std::vector<SubjectCost> subject_costs() const;
};

// Deterministic given the spec: subject k draws from an independent
// substream keyed by (seed, k), in the fixed order covariates, initial
// state, censoring, sojourn effect, path.
SimulatedCohort simulate_cohort(const ScenarioSpec& spec);

// True expected discounted cost over (0, horizon] for a covariate profile
// and starting state: transition probabilities from the refined product
// integral, both cost streams by dyadically refined composite quadrature
// until successive levels agree below rel_tol. NoConvergence when the finest
// level still disagrees.
struct OracleNpv {
  double total = 0.0;
  double transition_stream = 0.0;
  double sojourn_stream = 0.0;
  double rel_error = 0.0;
};
OracleNpv oracle_npv(const ScenarioSpec& spec, const std::map<std::string, double>& z,
                     int initial_state, double rel_tol = 1e-7);

// Monte Carlo value of the interval-estimator shortfall: the expected cost
// accrued between each censoring time and the end of its grid interval,
// summed over intervals with inverse-probability conditioning. Zero when
// censoring only happens on grid points or never before the horizon.
struct LinBias {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
};
LinBias oracle_lin_bias(const ScenarioSpec& spec, std::size_t draws, std::uint64_t seed);

}  // namespace msmcost
