#pragma once

#include <string>
#include <vector>

#include "msmcost/event_history.hpp"
#include "msmcost/stepfn.hpp"
#include "msmcost/survival.hpp"

namespace msmcost {

// One subject in the single-cost setting: a terminal event at event_time
// incurring cost, censored at censor_time (+inf when uncensored). The cost is
// observed when event_time <= min(censor_time, horizon).
struct CostTriple {
  double event_time = 0.0;
  double censor_time = 0.0;
  double cost = 0.0;
};

enum class WeightForm {
  ipcw,              // inverse censoring weights 1 / G-hat(t-)
  survival_weighted  // survival weights S-hat(t-) / Y_0(t)
};

// Discounted mean cost restricted to the horizon, from single-cost data.
// Tied event times are grouped (multiplicity d, group mean cost); the two
// forms are algebraically equal when no event time ties a censoring time.
// Errors: EmptySample, ZeroCensoringSurvival.
double bang_tsiatis_npv(const std::vector<CostTriple>& data, double r, double tau,
                        WeightForm form);

// Observed cost accumulation process of one subject: optional cost at t = 0
// plus nondecreasing step accrual, no mass after min(event, censoring,
// horizon).
struct CostProcess {
  std::string subject_id;
  double initial_cost = 0.0;
  StepFunction v{0.0};  // accumulated increments, undiscounted
};

enum class StrawdermanForm { direct, dual };

struct StrawdermanResult {
  double value = 0.0;
  // set when an accrual increment lands exactly on an observed event time;
  // the direct form is then the authoritative number
  bool shared_jump_warning = false;
};

// Discounted mean accumulated cost over (0, tau]. The direct form weights
// each increment by S-hat(t-)/Y_0(t); the dual form evaluates the estimated
// mean cost curve at event times and the horizon. Discounting folds exp(-rt)
// into the increments. Initial costs enter as their sample mean.
// events[i] pairs with costs[i]. Errors: EmptySample, AccrualAfterEnd,
// EmptyRiskSetAtAccrual.
StrawdermanResult strawderman_npv(const std::vector<CostProcess>& costs,
                                  const std::vector<FollowUp>& events, double r,
                                  double tau, StrawdermanForm form);

enum class PanelFlag { full, partial, unobserved };

// Interval costs on a shared grid 0 = a_0 < ... < a_G = tau. vtilde[g] is the
// observed (possibly partial) cost over (a_g, a_{g+1}]; flags mark complete /
// cut-short-by-censoring / unobserved intervals.
struct CostPanel {
  std::string subject_id;
  std::vector<double> grid;
  std::vector<double> vtilde;
  std::vector<PanelFlag> flags;
};

// Undiscounted interval estimator: sum over intervals of
// S-hat(a_{g-1}-) * (mean observed interval cost among subjects at risk at
// a_{g-1}). At-risk at a grid point: terminal events at the point stay in
// (contributing zero cost); censorings exactly at the point leave, so
// grid-atom censoring loses nothing. panels[i] pairs with events[i].
// Errors: GridMismatch, EmptyRiskSetAtInterval, PanelInconsistent.
double lin_interval_npv(const std::vector<CostPanel>& panels,
                        const std::vector<FollowUp>& events);

}  // namespace msmcost
