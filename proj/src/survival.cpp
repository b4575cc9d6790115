#include "msmcost/survival.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msmcost/errors.hpp"

namespace msmcost {

SurvivalFit kaplan_meier(const std::vector<double>& times, const std::vector<int>& event) {
  require(times.size() == event.size(), "InvalidInput",
          "follow-up times and event flags differ in length");
  require(!times.empty(), "EmptySample", "no subjects");
  for (double t : times)
    require(t >= 0.0 && std::isfinite(t), "InvalidInput", "bad follow-up time");

  std::vector<std::size_t> order(times.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  SurvivalFit fit;
  fit.n = times.size();
  std::vector<double> s_times, s_values;
  std::vector<std::pair<double, double>> risk_jumps;
  risk_jumps.emplace_back(0.0, static_cast<double>(times.size()));

  double s = 1.0;
  std::size_t k = 0;
  double at_risk = static_cast<double>(times.size());
  while (k < order.size()) {
    const double t = times[order[k]];
    double d = 0.0, leaving = 0.0;
    while (k < order.size() && times[order[k]] == t) {
      d += event[order[k]] ? 1.0 : 0.0;
      leaving += 1.0;
      ++k;
    }
    if (d > 0.0) {
      s *= 1.0 - d / at_risk;  // censored-at-t subjects still count in at_risk
      s_times.push_back(t);
      s_values.push_back(s);
    }
    risk_jumps.emplace_back(t, -leaving);
    at_risk -= leaving;
  }
  fit.survival = StepFunction(1.0, std::move(s_times), std::move(s_values));
  fit.at_risk = StepFunction::from_increments(0.0, std::move(risk_jumps));
  return fit;
}

SurvivalFit event_time_survival(const std::vector<EventHistory>& cohort) {
  require(!cohort.empty(), "EmptySample", "no subjects");
  std::vector<double> times;
  std::vector<int> event;
  times.reserve(cohort.size());
  event.reserve(cohort.size());
  for (const auto& h : cohort) {
    const FollowUp f = follow_up(h);
    times.push_back(f.time);
    event.push_back(f.event ? 1 : 0);
  }
  return kaplan_meier(times, event);
}

std::string stratum_key(double covariate_value) {
  std::ostringstream os;
  os << covariate_value;
  return os.str();
}

std::map<std::string, SurvivalFit> censoring_survival(
    const std::vector<EventHistory>& cohort, const std::string& strata_covariate) {
  require(!cohort.empty(), "EmptySample", "no subjects");

  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> groups;
  for (const auto& h : cohort) {
    std::string key;
    if (!strata_covariate.empty()) key = stratum_key(h.covariate(strata_covariate, 0.0));
    const FollowUp f = follow_up(h);
    // role reversal: a censoring is the event for G-hat; absorption (or
    // reaching the horizon) censors G. Event-censoring ties resolve in favor
    // of the event, so a subject with both at t counts as G-censored.
    groups[key].first.push_back(f.time);
    groups[key].second.push_back(f.censored ? 1 : 0);
  }

  std::map<std::string, SurvivalFit> fits;
  for (auto& [key, data] : groups) {
    require(!data.first.empty(), "EmptyStratum", "stratum '" + key + "' has no subjects");
    SurvivalFit fit = kaplan_meier(data.first, data.second);
    fit.stratum = key;
    fits.emplace(key, std::move(fit));
  }
  return fits;
}

}  // namespace msmcost
