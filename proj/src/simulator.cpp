#include "msmcost/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <set>

#include "msmcost/errors.hpp"
#include "msmcost/markov.hpp"

namespace msmcost {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

// Raw mt19937_64 output mapped to doubles by fixed transforms; the std
// distribution objects are implementation-defined, which would break the
// bit-reproducibility contract across toolchains.
class Substream {
 public:
  Substream(std::uint64_t master, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(master),
                      static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    rng_.seed(seq);
  }

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }  // [0, 1)
  double exponential() { return -std::log1p(-uniform()); }
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * kPi * u2);
  }
  double truncated_normal(double bound) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= bound) return z;
    }
  }

 private:
  std::mt19937_64 rng_;
};

bool finite_nonnegative(const StepFunction& f) {
  if (!std::isfinite(f.initial_value()) || f.initial_value() < 0.0) return false;
  return std::all_of(f.values().begin(), f.values().end(),
                     [](double v) { return std::isfinite(v) && v >= 0.0; });
}

double min_value(const StepFunction& f) {
  double m = f.initial_value();
  for (double v : f.values()) m = std::min(m, v);
  return m;
}

struct Ctx {
  const ScenarioSpec* spec = nullptr;
  std::vector<double> grid;
  std::vector<std::vector<const IntensityLaw*>> out;  // per origin state
  std::vector<const SojournLaw*> sojourn;             // per state, null when silent
  std::map<TransitionKey, const TransitionCostLaw*> cost;
};

Ctx make_ctx(const ScenarioSpec& spec) {
  const int n = spec.states.n_states();
  require(n >= 1, "InvalidSpec", "scenario has no states");

  std::set<std::string> names;
  for (const CovariateLaw& law : spec.covariates) {
    require(!law.name.empty() && names.insert(law.name).second, "InvalidSpec",
            "covariate names must be unique and nonempty");
    if (law.kind == CovariateLaw::Kind::bernoulli)
      require(law.a >= 0.0 && law.a <= 1.0, "InvalidSpec",
              "success probability outside [0, 1]");
    if (law.kind == CovariateLaw::Kind::normal)
      require(std::isfinite(law.b) && law.b >= 0.0, "InvalidSpec",
              "normal covariate needs a nonnegative sd");
    require(std::isfinite(law.a), "InvalidSpec", "covariate parameter must be finite");
  }
  const auto known = [&](const std::map<std::string, double>& coefs) {
    for (const auto& [name, g] : coefs) {
      require(names.count(name) == 1, "InvalidSpec",
              "coefficient on an undeclared covariate: " + name);
      require(std::isfinite(g), "InvalidSpec", "coefficient must be finite");
    }
  };

  Ctx ctx;
  ctx.spec = &spec;
  ctx.out.assign(static_cast<std::size_t>(n), {});
  ctx.sojourn.assign(static_cast<std::size_t>(n), nullptr);

  std::set<TransitionKey> seen;
  for (const IntensityLaw& law : spec.intensities) {
    const auto [h, j] = law.key;
    require(h >= 0 && h < n && j >= 0 && j < n && h != j, "InvalidSpec",
            "intensity on an invalid transition");
    require(!spec.states.is_absorbing(h), "InvalidSpec",
            "intensity out of an absorbing state");
    require(seen.insert(law.key).second, "InvalidSpec", "duplicate intensity law");
    require(finite_nonnegative(law.base), "InvalidSpec",
            "intensity rates must be finite and nonnegative");
    known(law.loglinear);
    ctx.out[static_cast<std::size_t>(h)].push_back(&law);
  }

  std::set<TransitionKey> seen_cost;
  for (const TransitionCostLaw& law : spec.transition_costs) {
    const auto [h, j] = law.key;
    require(h >= 0 && h < n && j >= 0 && j < n && h != j, "InvalidSpec",
            "cost law on an invalid transition");
    require(seen_cost.insert(law.key).second, "InvalidSpec", "duplicate cost law");
    require(std::isfinite(law.intercept) && std::isfinite(law.slope_time), "InvalidSpec",
            "cost coefficients must be finite");
    require(std::isfinite(law.log_sd) && law.log_sd >= 0.0, "InvalidSpec",
            "cost noise sd must be nonnegative");
    known(law.coef);
    ctx.cost[law.key] = &law;
  }

  require(std::isfinite(spec.sojourn_effect_sd) && spec.sojourn_effect_sd >= 0.0,
          "InvalidSpec", "sojourn effect sd must be nonnegative");
  std::set<int> seen_state;
  for (const SojournLaw& law : spec.sojourn_rates) {
    require(law.state >= 0 && law.state < n, "InvalidSpec", "sojourn rate on an unknown state");
    require(!spec.states.is_absorbing(law.state), "InvalidSpec",
            "absorbing states do not accrue");
    require(seen_state.insert(law.state).second, "InvalidSpec", "duplicate sojourn law");
    require(finite_nonnegative(law.rate), "InvalidSpec",
            "accrual rates must be finite and nonnegative");
    // the subject effect is truncated at 4 sd, so this keeps rates nonnegative
    require(min_value(law.rate) >= 4.0 * spec.sojourn_effect_sd, "InvalidSpec",
            "accrual rate can go negative under the subject effect");
    ctx.sojourn[static_cast<std::size_t>(law.state)] = &law;
  }

  const CensoringLaw& cl = spec.censoring;
  switch (cl.kind) {
    case CensoringLaw::Kind::none:
      break;
    case CensoringLaw::Kind::uniform:
      require(std::isfinite(cl.lo) && std::isfinite(cl.hi) && cl.lo >= 0.0 && cl.lo < cl.hi,
              "InvalidSpec", "uniform censoring needs 0 <= lo < hi");
      break;
    case CensoringLaw::Kind::exponential:
      require(std::isfinite(cl.rate) && cl.rate > 0.0, "InvalidSpec",
              "exponential censoring needs a positive rate");
      break;
    case CensoringLaw::Kind::atoms: {
      require(!cl.atom_times.empty() && cl.atom_times.size() == cl.atom_probs.size(),
              "InvalidSpec", "censoring atoms need matching times and probabilities");
      double sum = 0.0;
      for (std::size_t k = 0; k < cl.atom_times.size(); ++k) {
        require(std::isfinite(cl.atom_times[k]) && cl.atom_times[k] > 0.0, "InvalidSpec",
                "censoring atoms must sit at positive times");
        require(cl.atom_probs[k] >= 0.0, "InvalidSpec",
                "atom probabilities must be nonnegative");
        sum += cl.atom_probs[k];
      }
      require(std::abs(sum - 1.0) <= 1e-9, "InvalidSpec", "atom probabilities must sum to one");
      break;
    }
  }

  require(std::isfinite(spec.horizon) && spec.horizon > 0.0, "InvalidSpec",
          "horizon must be positive and finite");
  require(std::isfinite(spec.discount_rate) && spec.discount_rate >= 0.0, "InvalidSpec",
          "discount rate must be nonnegative");

  if (spec.grid.empty()) {
    ctx.grid = {0.0, spec.horizon};
  } else {
    require(spec.grid.size() >= 2 && spec.grid.front() == 0.0, "InvalidSpec",
            "panel grid must start at 0 and bound at least one interval");
    for (std::size_t k = 1; k < spec.grid.size(); ++k)
      require(std::isfinite(spec.grid[k]) && spec.grid[k] > spec.grid[k - 1], "InvalidSpec",
              "panel grid must be strictly increasing");
    require(spec.grid.back() <= spec.horizon, "InvalidSpec",
            "panel grid extends past the horizon");
    ctx.grid = spec.grid;
  }

  if (spec.initial_probs.empty()) {
    require(!spec.states.is_absorbing(0), "InvalidSpec",
            "default initial state 0 is absorbing");
  } else {
    require(static_cast<int>(spec.initial_probs.size()) == n, "InvalidSpec",
            "initial distribution does not match the state count");
    double sum = 0.0;
    for (int h = 0; h < n; ++h) {
      const double p = spec.initial_probs[static_cast<std::size_t>(h)];
      require(std::isfinite(p) && p >= 0.0, "InvalidSpec",
              "initial probabilities must be nonnegative");
      require(p == 0.0 || !spec.states.is_absorbing(h), "InvalidSpec",
              "initial mass on an absorbing state");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "InvalidSpec",
            "initial probabilities must sum to one");
  }

  return ctx;
}

struct TruthDraw {
  std::map<std::string, double> z;
  int initial_state = 0;
  double censor = kInf;
  double effect = 0.0;
  std::vector<TransitionEvent> path;
  std::optional<double> absorption;
};

double cost_mean(const TransitionCostLaw& law, double t,
                 const std::map<std::string, double>& z) {
  double m = law.intercept + law.slope_time * t;
  for (const auto& [name, c] : law.coef) m += c * z.at(name);
  require(m >= 0.0, "InvalidSpec", "mean transition cost went negative");
  return m;
}

// Fixed draw order: covariates, initial state, censoring, sojourn effect,
// then the path walk (one Exp(1) per sojourn, destination, cost noise).
TruthDraw draw_truth(const Ctx& ctx, Substream& rs) {
  const ScenarioSpec& sp = *ctx.spec;
  TruthDraw d;
  for (const CovariateLaw& law : sp.covariates) {
    double v = law.a;
    if (law.kind == CovariateLaw::Kind::bernoulli) v = rs.uniform() < law.a ? 1.0 : 0.0;
    if (law.kind == CovariateLaw::Kind::normal) v = law.a + law.b * rs.normal();
    d.z.emplace(law.name, v);
  }

  if (!sp.initial_probs.empty()) {
    const double u = rs.uniform();
    double cum = 0.0;
    d.initial_state = 0;
    for (std::size_t h = 0; h < sp.initial_probs.size(); ++h) {
      if (sp.initial_probs[h] == 0.0) continue;
      d.initial_state = static_cast<int>(h);
      cum += sp.initial_probs[h];
      if (u < cum) break;
    }
  }

  switch (sp.censoring.kind) {
    case CensoringLaw::Kind::none:
      break;
    case CensoringLaw::Kind::uniform:
      d.censor = sp.censoring.lo + (sp.censoring.hi - sp.censoring.lo) * rs.uniform();
      break;
    case CensoringLaw::Kind::exponential:
      d.censor = rs.exponential() / sp.censoring.rate;
      break;
    case CensoringLaw::Kind::atoms: {
      const double u = rs.uniform();
      double cum = 0.0;
      d.censor = sp.censoring.atom_times.back();
      for (std::size_t k = 0; k < sp.censoring.atom_times.size(); ++k) {
        cum += sp.censoring.atom_probs[k];
        if (u < cum) {
          d.censor = sp.censoring.atom_times[k];
          break;
        }
      }
      break;
    }
  }

  if (sp.sojourn_effect_sd > 0.0) d.effect = sp.sojourn_effect_sd * rs.truncated_normal(4.0);

  int state = d.initial_state;
  double now = 0.0;
  while (!sp.states.is_absorbing(state) && now < sp.horizon) {
    const auto& laws = ctx.out[static_cast<std::size_t>(state)];
    if (laws.empty()) break;

    std::vector<double> scale(laws.size(), 1.0);
    for (std::size_t k = 0; k < laws.size(); ++k) {
      double eta = 0.0;
      for (const auto& [name, g] : laws[k]->loglinear) eta += g * d.z.at(name);
      scale[k] = std::exp(eta);
    }

    std::set<double> bps;
    for (const IntensityLaw* law : laws)
      for (double t : law->base.times())
        if (t > now) bps.insert(t);

    const auto hazard_right = [&](double u) {
      double s = 0.0;
      for (std::size_t k = 0; k < laws.size(); ++k) s += laws[k]->base(u) * scale[k];
      return s;
    };

    // invert the cumulative hazard at one Exp(1) draw
    double target = rs.exponential();
    double t = now;
    double event_time = kInf;
    auto bp = bps.begin();
    for (;;) {
      const double seg_end = bp == bps.end() ? kInf : *bp;
      const double lam = hazard_right(t);
      if (lam > 0.0) {
        const double need = target / lam;
        if (t + need < seg_end) {
          event_time = t + need;
          break;
        }
        target -= lam * (seg_end - t);
        if (target <= 0.0) {
          event_time = seg_end;
          break;
        }
      }
      if (seg_end == kInf) break;
      t = seg_end;
      ++bp;
    }
    if (event_time > sp.horizon) break;

    // destination, by rates at the left limit (the segment that fired)
    double total = 0.0;
    for (std::size_t k = 0; k < laws.size(); ++k)
      total += laws[k]->base.left_limit(event_time) * scale[k];
    const double u = rs.uniform() * total;
    std::size_t pick = laws.size() - 1;
    double cum = 0.0;
    for (std::size_t k = 0; k < laws.size(); ++k) {
      cum += laws[k]->base.left_limit(event_time) * scale[k];
      if (u < cum) {
        pick = k;
        break;
      }
    }
    const int dest = laws[pick]->key.second;

    double cost = 0.0;
    auto it = ctx.cost.find(laws[pick]->key);
    if (it != ctx.cost.end()) {
      const TransitionCostLaw& law = *it->second;
      cost = cost_mean(law, event_time, d.z);
      if (law.log_sd > 0.0)
        cost *= std::exp(law.log_sd * rs.normal() - 0.5 * law.log_sd * law.log_sd);
    }

    d.path.push_back({event_time, state, dest, cost});
    state = dest;
    now = event_time;
    if (sp.states.is_absorbing(state)) d.absorption = event_time;
  }
  return d;
}

double discounted_length(double r, double a, double b) {
  if (b <= a) return 0.0;
  return r == 0.0 ? b - a : (std::exp(-r * a) - std::exp(-r * b)) / r;
}

// discounted integral of (rate + shift) over (t0, t1]; null law means silence
double accrue(const SojournLaw* law, double shift, double r, double t0, double t1) {
  if (law == nullptr || t1 <= t0) return 0.0;
  const auto& times = law->rate.times();
  double total = 0.0;
  double t = t0;
  auto it = std::upper_bound(times.begin(), times.end(), t0);
  while (t < t1) {
    const double seg_end = it == times.end() ? t1 : std::min(*it, t1);
    total += (law->rate(t) + shift) * discounted_length(r, t, seg_end);
    t = seg_end;
    if (it != times.end() && *it <= t) ++it;
  }
  return total;
}

// transition costs plus sojourn accrual over (t0, t1], discounted at r
double cost_between(const Ctx& ctx, const TruthDraw& d, double t0, double t1, double r) {
  if (t1 <= t0) return 0.0;
  double total = 0.0;
  int state = d.initial_state;
  double t = 0.0;
  for (const TransitionEvent& e : d.path) {
    total += accrue(ctx.sojourn[static_cast<std::size_t>(state)], d.effect, r,
                    std::max(t, t0), std::min(e.time, t1));
    if (e.time > t0 && e.time <= t1) total += std::exp(-r * e.time) * e.cost;
    state = e.to_state;
    t = e.time;
    if (t >= t1) break;
  }
  if (t < t1)
    total += accrue(ctx.sojourn[static_cast<std::size_t>(state)], d.effect, r,
                    std::max(t, t0), t1);
  return total;
}

// accrual only, undiscounted: what billing aggregates between boundaries
double accrual_between(const Ctx& ctx, const TruthDraw& d, double t0, double t1) {
  if (t1 <= t0) return 0.0;
  double total = 0.0;
  int state = d.initial_state;
  double t = 0.0;
  for (const TransitionEvent& e : d.path) {
    total += accrue(ctx.sojourn[static_cast<std::size_t>(state)], d.effect, 0.0,
                    std::max(t, t0), std::min(e.time, t1));
    state = e.to_state;
    t = e.time;
    if (t >= t1) break;
  }
  if (t < t1)
    total += accrue(ctx.sojourn[static_cast<std::size_t>(state)], d.effect, 0.0,
                    std::max(t, t0), t1);
  return total;
}

}  // namespace

double CensoringLaw::survival(double t) const {
  switch (kind) {
    case Kind::none:
      return 1.0;
    case Kind::uniform:
      if (t < lo) return 1.0;
      if (t >= hi) return 0.0;
      return (hi - t) / (hi - lo);
    case Kind::exponential:
      return std::exp(-rate * t);
    case Kind::atoms: {
      double s = 0.0;
      for (std::size_t k = 0; k < atom_times.size(); ++k)
        if (atom_times[k] > t) s += atom_probs[k];
      return s;
    }
  }
  return 1.0;
}

std::vector<double> validate_scenario(const ScenarioSpec& spec) { return make_ctx(spec).grid; }

SimulatedCohort simulate_cohort(const ScenarioSpec& spec) {
  Ctx ctx = make_ctx(spec);
  require(spec.n_subjects >= 1, "InvalidSpec", "need at least one subject");

  SimulatedCohort out;
  out.subjects.reserve(spec.n_subjects);
  for (std::size_t k = 0; k < spec.n_subjects; ++k) {
    Substream rs(spec.seed, static_cast<std::uint64_t>(k));
    TruthDraw d = draw_truth(ctx, rs);

    char buf[24];
    std::snprintf(buf, sizeof buf, "s%06zu", k);
    const std::string id(buf);

    const double end_obs = std::min({d.censor, spec.horizon, d.absorption.value_or(kInf)});
    const double end_uncensored = std::min(d.censor, spec.horizon);

    std::vector<TransitionEvent> observed;
    for (const TransitionEvent& e : d.path)
      if (e.time <= end_uncensored) observed.push_back(e);

    std::map<std::string, StepFunction> covs;
    for (const auto& [name, v] : d.z) covs.emplace(name, StepFunction::constant(v));

    // accrual billed at grid points inside follow-up, remainder at the tail
    std::vector<std::pair<double, double>> accrual_inc;
    double last_atom = 0.0;
    for (std::size_t g = 1; g < ctx.grid.size() && ctx.grid[g] <= end_obs; ++g) {
      const double m = accrual_between(ctx, d, ctx.grid[g - 1], ctx.grid[g]);
      if (m > 0.0) accrual_inc.emplace_back(ctx.grid[g], m);
      last_atom = ctx.grid[g];
    }
    if (end_obs > last_atom) {
      const double m = accrual_between(ctx, d, last_atom, end_obs);
      if (m > 0.0)
        accrual_inc.emplace_back(spec.bill_tail_at_end ? end_obs : 0.5 * (last_atom + end_obs),
                                 m);
    }
    std::vector<std::pair<double, double>> inc = accrual_inc;
    for (const TransitionEvent& e : observed)
      if (e.cost > 0.0) inc.emplace_back(e.time, e.cost);

    EventHistory history = build_event_history(id, spec.states, d.initial_state,
                                               std::move(observed), d.censor, spec.horizon,
                                               std::move(covs));
    const FollowUp fu = follow_up(history);

    const std::size_t n_intervals = ctx.grid.size() - 1;
    std::vector<double> vtilde(n_intervals, 0.0);
    std::vector<PanelFlag> flags(n_intervals, PanelFlag::full);
    for (std::size_t g = 0; g < n_intervals; ++g) {
      const double a0 = ctx.grid[g];
      const double a1 = ctx.grid[g + 1];
      vtilde[g] = cost_between(ctx, d, std::min(a0, end_uncensored),
                               std::min(a1, end_uncensored), 0.0);
      if (fu.censored) {
        if (fu.time <= a0)
          flags[g] = PanelFlag::unobserved;
        else if (fu.time < a1)
          flags[g] = PanelFlag::partial;
      }
    }

    SimulatedSubject subject{
        id,
        d.z,
        d.initial_state,
        d.censor,
        d.effect,
        d.path,
        d.absorption,
        cost_between(ctx, d, 0.0, spec.horizon, spec.discount_rate),
        cost_between(ctx, d, 0.0, spec.horizon, 0.0),
        cost_between(ctx, d, 0.0, end_obs, spec.discount_rate),
        cost_between(ctx, d, 0.0, end_obs, 0.0),
        std::move(history),
        StepFunction::from_increments(0.0, std::move(accrual_inc)),
        CostProcess{id, 0.0, StepFunction::from_increments(0.0, std::move(inc))},
        CostPanel{id, ctx.grid, std::move(vtilde), std::move(flags)}};
    out.subjects.push_back(std::move(subject));
  }
  return out;
}

std::vector<EventHistory> SimulatedCohort::histories() const {
  std::vector<EventHistory> v;
  v.reserve(subjects.size());
  for (const auto& s : subjects) v.push_back(s.history);
  return v;
}

std::vector<CostProcess> SimulatedCohort::processes() const {
  std::vector<CostProcess> v;
  v.reserve(subjects.size());
  for (const auto& s : subjects) v.push_back(s.billed);
  return v;
}

std::vector<FollowUp> SimulatedCohort::follow_ups() const {
  std::vector<FollowUp> v;
  v.reserve(subjects.size());
  for (const auto& s : subjects) v.push_back(follow_up(s.history));
  return v;
}

std::vector<CostPanel> SimulatedCohort::panels() const {
  std::vector<CostPanel> v;
  v.reserve(subjects.size());
  for (const auto& s : subjects) v.push_back(s.panel);
  return v;
}

std::vector<CostTriple> SimulatedCohort::triples() const {
  std::vector<CostTriple> v;
  v.reserve(subjects.size());
  for (const auto& s : subjects)
    v.push_back({s.absorption.value_or(kInf), s.censor_time, s.undiscounted_observed});
  return v;
}

std::vector<SubjectCost> SimulatedCohort::subject_costs() const {
  std::vector<SubjectCost> v;
  v.reserve(subjects.size());
  for (const auto& s : subjects)
    v.push_back({s.id, s.absorption.value_or(kInf), s.censor_time, s.discounted_observed, s.z});
  return v;
}

OracleNpv oracle_npv(const ScenarioSpec& spec, const std::map<std::string, double>& z,
                     int initial_state, double rel_tol) {
  Ctx ctx = make_ctx(spec);
  const int n = spec.states.n_states();
  require(initial_state >= 0 && initial_state < n, "UnknownState",
          "starting state outside the state space");
  for (const CovariateLaw& law : spec.covariates)
    require(z.count(law.name) == 1, "InvalidInput",
            "profile is missing covariate " + law.name);

  // covariate-conditional rates
  std::map<TransitionKey, StepFunction> rates;
  for (const IntensityLaw& law : spec.intensities) {
    double eta = 0.0;
    for (const auto& [name, g] : law.loglinear) eta += g * z.at(name);
    const double s = std::exp(eta);
    std::vector<double> values = law.base.values();
    for (double& v : values) v *= s;
    rates.emplace(law.key, StepFunction(law.base.initial_value() * s, law.base.times(),
                                        std::move(values)));
  }

  // smooth segments: rate and accrual breakpoints inside (0, horizon)
  std::set<double> cuts{0.0, spec.horizon};
  for (const auto& [key, fn] : rates)
    for (double t : fn.times())
      if (t > 0.0 && t < spec.horizon) cuts.insert(t);
  for (const SojournLaw& law : spec.sojourn_rates)
    for (double t : law.rate.times())
      if (t > 0.0 && t < spec.horizon) cuts.insert(t);
  // long smooth segments would starve the fixed per-segment node budget, so
  // split anything beyond a fraction of the horizon into equal chunks
  const double cap = spec.horizon / 16.0;
  std::vector<double> seg;
  {
    const std::vector<double> coarse(cuts.begin(), cuts.end());
    for (std::size_t s = 0; s + 1 < coarse.size(); ++s) {
      seg.push_back(coarse[s]);
      const double len = coarse[s + 1] - coarse[s];
      const auto parts = static_cast<std::size_t>(std::ceil(len / cap));
      for (std::size_t p = 1; p < parts; ++p)
        seg.push_back(coarse[s] + len * static_cast<double>(p) / static_cast<double>(parts));
    }
    seg.push_back(coarse.back());
  }
  const std::size_t n_seg = seg.size() - 1;

  constexpr int kMaxLevel = 10;
  constexpr std::size_t kNodes = std::size_t{1} << kMaxLevel;  // intervals per segment

  // all quadrature nodes, finest level, one transition-probability solve
  std::vector<double> nodes;
  nodes.reserve(n_seg * kNodes + 1);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const double lo = seg[s];
    const double h = (seg[s + 1] - lo) / static_cast<double>(kNodes);
    for (std::size_t j = 0; j < kNodes; ++j) nodes.push_back(lo + static_cast<double>(j) * h);
  }
  nodes.push_back(seg.back());
  for (std::size_t k = 1; k < nodes.size(); ++k)
    require(nodes[k] > nodes[k - 1], "InvalidSpec", "quadrature nodes collapsed");

  ParametricPathResult path =
      product_integral_parametric(rates, n, spec.horizon, nodes, 1e-8);

  // integrand values per segment and node; rates at a segment's right
  // endpoint read the left limit so each segment sees its own rate value
  std::vector<std::vector<double>> ft(n_seg), fs(n_seg);
  for (std::size_t s = 0; s < n_seg; ++s) {
    ft[s].assign(kNodes + 1, 0.0);
    fs[s].assign(kNodes + 1, 0.0);
    for (std::size_t j = 0; j <= kNodes; ++j) {
      const std::size_t global = s * kNodes + j;
      const double t = path.times[global];
      const Eigen::MatrixXd& p = path.matrices[global];
      const double disc = std::exp(-spec.discount_rate * t);
      const bool right_end = j == kNodes;

      double trans = 0.0;
      for (const auto& [key, fn] : rates) {
        const double rate = right_end ? fn.left_limit(t) : fn(t);
        if (rate == 0.0) continue;
        auto it = ctx.cost.find(key);
        if (it == ctx.cost.end()) continue;
        trans += cost_mean(*it->second, t, z) * p(initial_state, key.first) * rate;
      }
      ft[s][j] = disc * trans;

      double soj = 0.0;
      for (const SojournLaw& law : spec.sojourn_rates) {
        const double rate = right_end ? law.rate.left_limit(t) : law.rate(t);
        soj += rate * p(initial_state, law.state);
      }
      fs[s][j] = disc * soj;
    }
  }

  const auto simpson = [&](const std::vector<std::vector<double>>& f, int level) {
    const std::size_t m = std::size_t{1} << level;
    const std::size_t stride = kNodes / m;
    double total = 0.0;
    for (std::size_t s = 0; s < n_seg; ++s) {
      const double h = (seg[s + 1] - seg[s]) / static_cast<double>(m);
      double acc = f[s][0] + f[s][kNodes];
      for (std::size_t j = 1; j < m; ++j) acc += (j % 2 == 1 ? 4.0 : 2.0) * f[s][j * stride];
      total += h / 3.0 * acc;
    }
    return total;
  };

  double prev_total = 0.0;
  bool have_prev = false;
  for (int level = 4; level <= kMaxLevel; ++level) {
    const double trans = simpson(ft, level);
    const double soj = simpson(fs, level);
    const double total = trans + soj;
    if (have_prev) {
      const double err = std::abs(total - prev_total) / std::max(1.0, std::abs(total));
      if (err <= rel_tol) return {total, trans, soj, err};
    }
    prev_total = total;
    have_prev = true;
  }
  fail("NoConvergence", "quadrature did not settle at the finest level");
}

LinBias oracle_lin_bias(const ScenarioSpec& spec, std::size_t draws, std::uint64_t seed) {
  Ctx ctx = make_ctx(spec);
  require(draws >= 2, "InvalidInput", "need at least two draws");

  const std::vector<double>& grid = ctx.grid;
  std::vector<double> denom(grid.size() - 1, 0.0);
  for (std::size_t g = 0; g + 1 < grid.size(); ++g)
    denom[g] = spec.censoring.survival(grid[g]);

  Substream rs(seed, 0);
  double sum = 0.0;
  double sumsq = 0.0;
  for (std::size_t rep = 0; rep < draws; ++rep) {
    TruthDraw d = draw_truth(ctx, rs);
    double xi = 0.0;
    const double u = d.censor;
    if (std::isfinite(u)) {
      for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
        if (!(u > grid[g] && u <= grid[g + 1])) continue;
        const bool before_event = !d.absorption.has_value() || u <= *d.absorption;
        if (before_event && denom[g] > 0.0)
          xi = cost_between(ctx, d, u, grid[g + 1], 0.0) / denom[g];
        break;
      }
    }
    sum += xi;
    sumsq += xi * xi;
  }
  const double mean = sum / static_cast<double>(draws);
  const double var =
      std::max(0.0, (sumsq - static_cast<double>(draws) * mean * mean) /
                        static_cast<double>(draws - 1));
  return {mean, std::sqrt(var / static_cast<double>(draws)), draws};
}

}  // namespace msmcost
