#include "msmcost/cost_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "msmcost/errors.hpp"

namespace msmcost {

double bang_tsiatis_npv(const std::vector<CostTriple>& data, double r, double tau,
                        WeightForm form) {
  require(!data.empty(), "EmptySample", "no subjects");
  require(tau > 0.0 && std::isfinite(tau), "InvalidHorizon", "horizon must be positive");

  std::vector<double> w_times;
  std::vector<int> s_event, g_event;
  w_times.reserve(data.size());
  for (const auto& d : data) {
    require(d.event_time > 0.0, "InvalidInput", "event times must be positive");
    require(d.censor_time >= 0.0, "InvalidInput", "negative censor time");
    const double w = std::min(d.event_time, d.censor_time);
    require(std::isfinite(w), "InvalidInput", "subject with neither event nor censoring");
    w_times.push_back(w);
    s_event.push_back(d.event_time <= d.censor_time ? 1 : 0);
    // ties resolve events first, so a subject with both at w censors G there
    g_event.push_back(d.censor_time < d.event_time ? 1 : 0);
  }

  // group observed events at distinct times: multiplicity d_j, group mean cost
  std::map<double, std::pair<double, double>> groups;  // t* -> (d_j, sum cost)
  for (std::size_t i = 0; i < data.size(); ++i)
    if (s_event[i] && data[i].event_time <= tau) {
      auto& g = groups[data[i].event_time];
      g.first += 1.0;
      g.second += data[i].cost;
    }

  const double n = static_cast<double>(data.size());
  double total = 0.0;
  if (form == WeightForm::ipcw) {
    const SurvivalFit ghat = kaplan_meier(w_times, g_event);
    for (const auto& [t, g] : groups) {
      const double gm = ghat.left(t);
      require(gm > 0.0, "ZeroCensoringSurvival",
              "censoring survival vanishes before an observed event");
      total += std::exp(-r * t) * g.first * (g.second / g.first) / gm;
    }
    return total / n;
  }
  const SurvivalFit shat = kaplan_meier(w_times, s_event);
  for (const auto& [t, g] : groups) {
    const double y0 = shat.risk_at(t);
    require(y0 > 0.0, "EmptyRiskSetAtAccrual", "observed event outside the risk set");
    total += std::exp(-r * t) * g.first * (g.second / g.first) * shat.left(t) / y0;
  }
  return total;
}

namespace {

SurvivalFit survival_of(const std::vector<FollowUp>& events) {
  std::vector<double> times;
  std::vector<int> flags;
  times.reserve(events.size());
  for (const auto& f : events) {
    times.push_back(f.time);
    flags.push_back(f.event ? 1 : 0);
  }
  return kaplan_meier(times, flags);
}

}  // namespace

StrawdermanResult strawderman_npv(const std::vector<CostProcess>& costs,
                                  const std::vector<FollowUp>& events, double r,
                                  double tau, StrawdermanForm form) {
  require(!costs.empty(), "EmptySample", "no subjects");
  require(costs.size() == events.size(), "InvalidInput",
          "cost processes and follow-up records differ in length");
  require(tau > 0.0 && std::isfinite(tau), "InvalidHorizon", "horizon must be positive");

  for (std::size_t i = 0; i < costs.size(); ++i) {
    require(costs[i].v.is_nondecreasing(), "InvalidInput",
            "cost process must be nondecreasing");
    require(costs[i].initial_cost >= 0.0, "InvalidInput", "negative initial cost");
    for (double t : costs[i].v.times())
      require(t > 0.0 && t <= events[i].time + 0.0, "AccrualAfterEnd",
              "subject " + costs[i].subject_id + ": accrual outside (0, follow-up end]");
  }

  const SurvivalFit shat = survival_of(events);
  const double n = static_cast<double>(costs.size());

  std::set<double> event_times;
  for (const auto& f : events)
    if (f.event) event_times.insert(f.time);

  double initial_mean = 0.0;
  for (const auto& c : costs) initial_mean += c.initial_cost;
  initial_mean /= n;

  StrawdermanResult result;
  for (const auto& c : costs)
    for (double u : c.v.times())
      if (u <= tau && event_times.count(u)) {
        result.shared_jump_warning = true;
        break;
      }

  if (form == StrawdermanForm::direct) {
    double total = initial_mean;
    for (std::size_t i = 0; i < costs.size(); ++i)
      for (double u : costs[i].v.times()) {
        if (u > tau) break;
        if (events[i].time < u) continue;  // subject already out of follow-up
        const double y0 = shat.risk_at(u);
        require(y0 > 0.0, "EmptyRiskSetAtAccrual",
                "cost increment at a time with empty risk set");
        total += shat.left(u) * std::exp(-r * u) * costs[i].v.increment_at(u) / y0;
      }
    result.value = total;
    return result;
  }

  // dual form: m-hat(t) = mean initial cost + sum of pooled discounted
  // increments / Y_0, evaluated right-continuously
  std::vector<std::pair<double, double>> m_jumps;
  for (std::size_t i = 0; i < costs.size(); ++i)
    for (double u : costs[i].v.times()) {
      if (u > tau) break;
      if (events[i].time < u) continue;
      const double y0 = shat.risk_at(u);
      require(y0 > 0.0, "EmptyRiskSetAtAccrual",
              "cost increment at a time with empty risk set");
      m_jumps.emplace_back(u, std::exp(-r * u) * costs[i].v.increment_at(u) / y0);
    }
  const StepFunction mhat = StepFunction::from_increments(initial_mean, std::move(m_jumps));

  double total = mhat(tau) * shat.at(tau);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& f = events[i];
    if (!f.event || f.time > tau) continue;
    const double y0 = shat.risk_at(f.time);
    require(y0 > 0.0, "EmptyRiskSetAtAccrual", "observed event outside the risk set");
    total += mhat(f.time) * shat.left(f.time) / y0;
  }
  result.value = total;
  return result;
}

double lin_interval_npv(const std::vector<CostPanel>& panels,
                        const std::vector<FollowUp>& events) {
  require(!panels.empty(), "EmptySample", "no subjects");
  require(panels.size() == events.size(), "InvalidInput",
          "panels and follow-up records differ in length");

  const std::vector<double>& grid = panels.front().grid;
  require(grid.size() >= 2 && grid.front() == 0.0, "GridMismatch",
          "grid must start at 0 with at least one interval");
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    require(grid[k] < grid[k + 1], "GridMismatch", "grid must be strictly increasing");
  const std::size_t n_intervals = grid.size() - 1;
  for (const auto& p : panels) {
    require(p.grid == grid, "GridMismatch",
            "subject " + p.subject_id + ": panel grid differs");
    require(p.vtilde.size() == n_intervals && p.flags.size() == n_intervals,
            "GridMismatch", "subject " + p.subject_id + ": panel shape differs");
  }

  const SurvivalFit shat = survival_of(events);

  // At-risk at a grid point: events at the point stay in; genuine censorings
  // exactly at the point drop out, so nothing is lost at grid-atom censoring.
  const auto at_risk = [](const FollowUp& f, double a) {
    return f.censored ? f.time > a : f.time >= a;
  };

  double total = 0.0;
  for (std::size_t g = 0; g < n_intervals; ++g) {
    const double a = grid[g];
    double y0 = 0.0, numer = 0.0;
    bool observed_cost = false;
    for (std::size_t i = 0; i < panels.size(); ++i) {
      const bool risk = at_risk(events[i], a);
      if (risk) {
        require(panels[i].flags[g] != PanelFlag::unobserved, "PanelInconsistent",
                "subject " + panels[i].subject_id +
                    ": at risk but interval flagged unobserved");
        y0 += 1.0;
        numer += panels[i].vtilde[g];
      }
      if (panels[i].flags[g] != PanelFlag::unobserved && panels[i].vtilde[g] != 0.0)
        observed_cost = true;
    }
    if (y0 == 0.0) {
      require(!observed_cost, "EmptyRiskSetAtInterval",
              "interval has observed cost but an empty risk set");
      continue;
    }
    total += shat.survival.left_limit(a) * numer / y0;
  }
  return total;
}

}  // namespace msmcost
