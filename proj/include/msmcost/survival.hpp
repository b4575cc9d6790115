#pragma once

#include <map>
#include <string>
#include <vector>

#include "msmcost/event_history.hpp"
#include "msmcost/stepfn.hpp"

namespace msmcost {

// Product-limit fit. survival is the right-continuous S-hat; at_risk is the
// carrier whose left limit counts subjects still under observation, so
// risk_at(t) = #{i : follow-up time >= t}. At tied times events precede
// censorings: subjects censored at t remain in the risk set at t.
struct SurvivalFit {
  StepFunction survival{1.0};
  StepFunction at_risk{0.0};
  std::size_t n = 0;
  std::string stratum;

  double at(double t) const { return survival(t); }
  double left(double t) const { return survival.left_limit(t); }
  double risk_at(double t) const { return at_risk.left_limit(t); }
};

// times[i]: end of follow-up; event[i]: 1 if the terminal event was observed
// at times[i], 0 if follow-up was censored there.
SurvivalFit kaplan_meier(const std::vector<double>& times, const std::vector<int>& event);

// Kaplan-Meier for the time to absorption; censoring (and the horizon) end
// follow-up without an event.
SurvivalFit event_time_survival(const std::vector<EventHistory>& cohort);

// Role-reversed Kaplan-Meier for the censoring distribution, G-hat(t) =
// P(U > t): censorings are the events, absorption censors. Optionally
// stratified on a baseline covariate; keys are formatted covariate values
// ("" for the unstratified fit). Weights evaluate G-hat at left limits;
// EmptyStratum if a stratum has no subjects.
std::map<std::string, SurvivalFit> censoring_survival(
    const std::vector<EventHistory>& cohort, const std::string& strata_covariate = "");

// Formats a covariate value the way censoring_survival keys its strata.
std::string stratum_key(double covariate_value);

}  // namespace msmcost
