#include "msmcost/event_history.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msmcost/errors.hpp"

namespace msmcost {

StateSpace::StateSpace(std::vector<std::string> labels, std::vector<bool> absorbing)
    : labels_(std::move(labels)), absorbing_(std::move(absorbing)) {
  require(!labels_.empty(), "InvalidStateSpace", "state space is empty");
  require(labels_.size() == absorbing_.size(), "InvalidStateSpace",
          "labels and absorbing flags differ in length");
  for (std::size_t a = 0; a < labels_.size(); ++a)
    for (std::size_t b = a + 1; b < labels_.size(); ++b)
      require(labels_[a] != labels_[b], "InvalidStateSpace",
              "duplicate state label '" + labels_[a] + "'");
  bool any_transient = false;
  for (bool f : absorbing_) any_transient |= !f;
  require(any_transient, "InvalidStateSpace", "all states are absorbing");
}

bool StateSpace::is_absorbing(int h) const {
  require(h >= 0 && h < n_states(), "UnknownState", "state index out of range");
  return absorbing_[static_cast<std::size_t>(h)];
}

const std::string& StateSpace::label(int h) const {
  require(h >= 0 && h < n_states(), "UnknownState", "state index out of range");
  return labels_[static_cast<std::size_t>(h)];
}

int StateSpace::index_of(const std::string& label) const {
  for (int h = 0; h < n_states(); ++h)
    if (labels_[static_cast<std::size_t>(h)] == label) return h;
  fail("UnknownState", "no state labelled '" + label + "'");
}

EventHistory::EventHistory(std::string subject_id, StateSpace states, int initial_state,
                           std::vector<TransitionEvent> events, double censor_time,
                           double horizon, std::map<std::string, StepFunction> covariates)
    : id_(std::move(subject_id)),
      states_(std::move(states)),
      initial_(initial_state),
      events_(std::move(events)),
      censor_(censor_time),
      horizon_(horizon),
      covariates_(std::move(covariates)) {}

int EventHistory::state_before(double t) const {
  int s = initial_;
  for (const auto& e : events_) {
    if (e.time >= t) break;
    s = e.to_state;
  }
  return s;
}

int EventHistory::state_at(double t) const {
  int s = initial_;
  for (const auto& e : events_) {
    if (e.time > t) break;
    s = e.to_state;
  }
  return s;
}

std::optional<double> EventHistory::absorption_time() const {
  if (!events_.empty() && states_.is_absorbing(events_.back().to_state))
    return events_.back().time;
  return std::nullopt;
}

double EventHistory::observation_end() const {
  double end = std::min(censor_, horizon_);
  if (auto t = absorption_time()) end = std::min(end, *t);
  return end;
}

double EventHistory::covariate(const std::string& name, double t) const {
  auto it = covariates_.find(name);
  require(it != covariates_.end(), "UnknownCovariate",
          "subject " + id_ + " has no covariate '" + name + "'");
  return it->second.left_limit(t);
}

bool EventHistory::has_covariate(const std::string& name) const {
  return covariates_.count(name) > 0;
}

FollowUp follow_up(const EventHistory& h) {
  if (auto t = h.absorption_time()) return {*t, true, false};
  if (h.censor_time() <= h.horizon()) return {h.censor_time(), false, true};
  return {h.horizon(), false, false};
}

EventHistory build_event_history(std::string subject_id, const StateSpace& states,
                                 int initial_state, std::vector<TransitionEvent> rows,
                                 double censor_time, double horizon,
                                 std::map<std::string, StepFunction> covariates) {
  require(horizon > 0.0 && std::isfinite(horizon), "InvalidHorizon",
          "horizon must be positive and finite");
  require(initial_state >= 0 && initial_state < states.n_states(), "UnknownState",
          "subject " + subject_id + ": initial state out of range");
  require(censor_time >= 0.0, "InvalidCensorTime",
          "subject " + subject_id + ": negative censor time");

  std::stable_sort(rows.begin(), rows.end(),
                   [](const TransitionEvent& a, const TransitionEvent& b) {
                     return a.time < b.time;
                   });
  int current = initial_state;
  double last_time = 0.0;
  for (const auto& e : rows) {
    require(e.time > last_time, "NonMonotoneTimes",
            "subject " + subject_id + ": event times must be strictly increasing");
    require(e.from_state >= 0 && e.from_state < states.n_states() && e.to_state >= 0 &&
                e.to_state < states.n_states(),
            "UnknownState", "subject " + subject_id + ": state index out of range");
    require(e.from_state == current, "BrokenChain",
            "subject " + subject_id + ": event from state '" + states.label(e.from_state) +
                "' but subject is in '" + states.label(current) + "'");
    require(!states.is_absorbing(e.from_state), "TransitionFromAbsorbing",
            "subject " + subject_id + ": transition out of absorbing state '" +
                states.label(e.from_state) + "'");
    require(e.from_state != e.to_state, "BrokenChain",
            "subject " + subject_id + ": self transition");
    require(e.time <= censor_time, "EventAfterCensoring",
            "subject " + subject_id + ": event after censor time");
    require(e.time <= horizon, "EventAfterHorizon",
            "subject " + subject_id + ": event beyond the horizon");
    last_time = e.time;
    current = e.to_state;
  }
  return EventHistory(std::move(subject_id), states, initial_state, std::move(rows),
                      censor_time, horizon, std::move(covariates));
}

CountingProcesses::CountingProcesses(const std::vector<EventHistory>& cohort) {
  require(!cohort.empty(), "EmptySample", "no subjects");
  states_ = cohort.front().states();
  n_subjects_ = cohort.size();
  const double horizon = cohort.front().horizon();
  for (const auto& h : cohort) {
    require(h.states() == states_, "MixedStateSpaces",
            "subject " + h.subject_id() + " uses a different state space");
    require(h.horizon() == horizon, "MixedStateSpaces",
            "subject " + h.subject_id() + " uses a different horizon");
  }

  std::map<TransitionKey, std::vector<std::pair<double, double>>> count_jumps;
  std::vector<std::vector<std::pair<double, double>>> risk_jumps(
      static_cast<std::size_t>(states_.n_states()));

  for (const auto& h : cohort) {
    int state = h.initial_state();
    double entered = 0.0;
    for (const auto& e : h.events()) {
      count_jumps[{e.from_state, e.to_state}].emplace_back(e.time, 1.0);
      // occupied [entered, e.time); zero-length spans cancel in from_increments
      risk_jumps[static_cast<std::size_t>(state)].emplace_back(entered, 1.0);
      risk_jumps[static_cast<std::size_t>(state)].emplace_back(e.time, -1.0);
      state = e.to_state;
      entered = e.time;
    }
    // the final state (absorbing included) is occupied until censoring/horizon
    const double end = std::min(h.censor_time(), h.horizon());
    risk_jumps[static_cast<std::size_t>(state)].emplace_back(entered, 1.0);
    risk_jumps[static_cast<std::size_t>(state)].emplace_back(end, -1.0);
  }

  for (auto& [key, jumps] : count_jumps)
    n_.emplace(key, StepFunction::from_increments(0.0, std::move(jumps)));
  y_.reserve(risk_jumps.size());
  for (auto& jumps : risk_jumps)
    y_.push_back(StepFunction::from_increments(0.0, std::move(jumps)));
}

double CountingProcesses::at_risk(int h, double t) const {
  require(h >= 0 && h < states_.n_states(), "UnknownState", "state index out of range");
  return y_[static_cast<std::size_t>(h)].left_limit(t);
}

const StepFunction& CountingProcesses::count(TransitionKey hj) const {
  auto it = n_.find(hj);
  require(it != n_.end(), "UnknownTransition",
          "no observed transitions " + states_.label(hj.first) + " -> " +
              states_.label(hj.second));
  return it->second;
}

const StepFunction& CountingProcesses::risk_carrier(int h) const {
  require(h >= 0 && h < states_.n_states(), "UnknownState", "state index out of range");
  return y_[static_cast<std::size_t>(h)];
}

}  // namespace msmcost
