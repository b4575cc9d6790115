#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msmcost/stepfn.hpp"

namespace msmcost {

using TransitionKey = std::pair<int, int>;  // (from state, to state)

// Finite labelled state space with a designated set of absorbing states.
class StateSpace {
 public:
  StateSpace() = default;
  StateSpace(std::vector<std::string> labels, std::vector<bool> absorbing);

  int n_states() const { return static_cast<int>(labels_.size()); }
  bool is_absorbing(int h) const;
  const std::string& label(int h) const;
  int index_of(const std::string& label) const;  // UnknownState if absent
  const std::vector<std::string>& labels() const { return labels_; }

  bool operator==(const StateSpace&) const = default;

 private:
  std::vector<std::string> labels_;
  std::vector<bool> absorbing_;
};

struct TransitionEvent {
  double time = 0.0;
  int from_state = 0;
  int to_state = 0;
  double cost = 0.0;  // cost incurred at this transition
};

// One subject's observed path: initial state, ordered transitions up to
// min(censor time, horizon), fixed or time-varying covariates. An event at
// exactly the censor time is observed (the at-risk condition is U >= t).
// censor_time is +inf when the subject is never censored.
class EventHistory {
 public:
  EventHistory(std::string subject_id, StateSpace states, int initial_state,
               std::vector<TransitionEvent> events, double censor_time, double horizon,
               std::map<std::string, StepFunction> covariates = {});

  const std::string& subject_id() const { return id_; }
  const StateSpace& states() const { return states_; }
  int initial_state() const { return initial_; }
  const std::vector<TransitionEvent>& events() const { return events_; }
  double censor_time() const { return censor_; }
  double horizon() const { return horizon_; }

  int state_before(double t) const;  // X(t-)
  int state_at(double t) const;      // X(t)

  // Entry into an absorbing state, if observed.
  std::optional<double> absorption_time() const;
  // End of observation: min(absorption, censor time, horizon).
  double observation_end() const;

  double covariate(const std::string& name, double t) const;  // z(t-), left limit
  bool has_covariate(const std::string& name) const;
  const std::map<std::string, StepFunction>& covariates() const { return covariates_; }

 private:
  std::string id_;
  StateSpace states_;
  int initial_ = 0;
  std::vector<TransitionEvent> events_;
  double censor_ = 0.0;
  double horizon_ = 0.0;
  std::map<std::string, StepFunction> covariates_;
};

// Subject's terminal follow-up summary: time = min(absorption, censoring,
// horizon); event = true when the subject was observed to absorb.
struct FollowUp {
  double time = 0.0;
  bool event = false;
  bool censored = false;  // true when a genuine censoring (U <= horizon) ended follow-up
};

FollowUp follow_up(const EventHistory& h);

// Aggregated counting processes for a cohort sharing one state space.
// n[(h,j)](t) counts observed h->j transitions in (0, t]. y[h] stores the
// right-continuous carrier of subjects in state h; at_risk(h, t) evaluates its
// left limit, the number of subjects with X(t-) = h and U >= t.
class CountingProcesses {
 public:
  CountingProcesses(const std::vector<EventHistory>& cohort);

  const StateSpace& states() const { return states_; }
  std::size_t n_subjects() const { return n_subjects_; }
  double at_risk(int h, double t) const;
  const std::map<TransitionKey, StepFunction>& counts() const { return n_; }
  const StepFunction& count(TransitionKey hj) const;
  const StepFunction& risk_carrier(int h) const;

 private:
  StateSpace states_;
  std::size_t n_subjects_ = 0;
  std::map<TransitionKey, StepFunction> n_;
  std::vector<StepFunction> y_;
};

// Validates and assembles one subject from raw rows (assumed one subject's
// rows). Errors: NonMonotoneTimes, BrokenChain, TransitionFromAbsorbing,
// EventAfterCensoring, EventAfterHorizon, UnknownState.
EventHistory build_event_history(std::string subject_id, const StateSpace& states,
                                 int initial_state, std::vector<TransitionEvent> rows,
                                 double censor_time, double horizon,
                                 std::map<std::string, StepFunction> covariates = {});

}  // namespace msmcost
