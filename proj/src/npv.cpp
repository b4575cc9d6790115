#include "msmcost/npv.hpp"

#include <algorithm>
#include <cmath>

#include "msmcost/errors.hpp"

namespace msmcost {

namespace {

void check_probability_vector(const std::vector<double>& pi) {
  require(!pi.empty(), "InvalidDistribution", "initial distribution is empty");
  double sum = 0.0;
  for (double p : pi) {
    require(std::isfinite(p) && p >= 0.0, "InvalidDistribution",
            "initial probabilities must be nonnegative");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "InvalidDistribution",
          "initial probabilities must sum to one");
}

bool identically_zero(const StepFunction& f) {
  if (f.initial_value() != 0.0) return false;
  return std::all_of(f.values().begin(), f.values().end(), [](double v) { return v == 0.0; });
}

void check_unit_range(const StepFunction& f, const std::string& label) {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  require(ok(f.initial_value()), "InvalidQualityWeight", "weight outside [0, 1] for " + label);
  for (double v : f.values())
    require(ok(v), "InvalidQualityWeight", "weight outside [0, 1] for " + label);
}

bool recipe_reaches(const DesignRecipe& recipe, TransitionKey hj) {
  return std::any_of(recipe.terms.begin(), recipe.terms.end(), [&](const DesignTerm& t) {
    return !t.filter.has_value() || *t.filter == hj;
  });
}

}  // namespace

InitialDistribution make_initial_distribution(std::vector<double> pi) {
  check_probability_vector(pi);
  return InitialDistribution{std::move(pi)};
}

InitialDistribution point_mass(int state, int n_states) {
  require(n_states > 0 && state >= 0 && state < n_states, "UnknownState",
          "point mass outside the state space");
  std::vector<double> pi(static_cast<std::size_t>(n_states), 0.0);
  pi[static_cast<std::size_t>(state)] = 1.0;
  return InitialDistribution{std::move(pi)};
}

InitialDistribution empirical_initial_distribution(const StateSpace& states,
                                                   const std::vector<EventHistory>& cohort) {
  require(!cohort.empty(), "EmptySample", "no subjects to tabulate");
  std::vector<double> pi(static_cast<std::size_t>(states.n_states()), 0.0);
  for (const EventHistory& h : cohort) {
    require(h.states() == states, "MixedStateSpaces",
            "cohort subjects disagree on the state space");
    pi[static_cast<std::size_t>(h.initial_state())] += 1.0;
  }
  for (double& p : pi) p /= static_cast<double>(cohort.size());
  return InitialDistribution{std::move(pi)};
}

StepFunction SojournRateModel::rate_fn(int state) const {
  require(state >= 0 && state < n_states(), "UnknownState", "no rates stored for this state");
  const auto& r = rates[static_cast<std::size_t>(state)];
  if (r.empty()) return StepFunction::constant(0.0);
  std::vector<double> times(grid.begin() + 1, grid.end());
  std::vector<double> values(r.begin() + 1, r.end());
  values.push_back(0.0);  // accrual stops past the grid
  return StepFunction(r.front(), std::move(times), std::move(values));
}

SojournRateModel sojourn_rates_from_values(std::vector<double> grid,
                                           std::vector<std::vector<double>> rates) {
  require(grid.size() >= 2 && grid.front() == 0.0, "InvalidGrid",
          "rate grid must start at 0 and bound at least one interval");
  for (std::size_t k = 1; k < grid.size(); ++k)
    require(grid[k] > grid[k - 1] && std::isfinite(grid[k]), "InvalidGrid",
            "rate grid must be strictly increasing");
  require(!rates.empty(), "InvalidRate", "no per-state rates given");
  for (const auto& r : rates) {
    require(r.size() == grid.size() - 1, "InvalidRate",
            "each state needs one rate per grid interval");
    for (double v : r)
      require(std::isfinite(v) && v >= 0.0, "InvalidRate", "rates must be finite and nonnegative");
  }
  return SojournRateModel{std::move(grid), std::move(rates)};
}

SojournRateModel sojourn_rates_from_fit(const ReFit& fit, const CovariateProfile& profile,
                                        int n_states, const std::vector<int>& covered_states,
                                        std::vector<double> grid) {
  require(n_states > 0, "InvalidInput", "state count must be positive");
  for (int h : covered_states)
    require(h >= 0 && h < n_states, "UnknownState", "covered state outside the state space");
  const CovariateFn z = profile.lookup();
  std::vector<std::vector<double>> rates(static_cast<std::size_t>(n_states));
  // validate the grid once through the value builder, starting from zeros
  for (auto& r : rates) r.assign(grid.size() >= 2 ? grid.size() - 1 : 0, 0.0);
  SojournRateModel model = sojourn_rates_from_values(std::move(grid), std::move(rates));
  for (int h : covered_states) {
    auto& r = model.rates[static_cast<std::size_t>(h)];
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double mid = 0.5 * (model.grid[k] + model.grid[k + 1]);
      Eigen::VectorXd row = fit.recipe.row({h, h}, mid, z);
      require(row.size() == fit.beta.size(), "DimensionMismatch",
              "design row does not match the fitted coefficients");
      r[k] = std::exp(row.dot(fit.beta));
    }
  }
  return model;
}

QualityWeights make_quality_weights(const StateSpace& states,
                                    const std::map<int, StepFunction>& q) {
  QualityWeights w;
  w.q.assign(static_cast<std::size_t>(states.n_states()), StepFunction::constant(0.0));
  for (const auto& [h, fn] : q) {
    require(h >= 0 && h < states.n_states(), "UnknownState", "weight for an unknown state");
    if (states.is_absorbing(h)) {
      require(identically_zero(fn), "InvalidQualityWeight",
              "absorbing state " + states.label(h) + " must keep weight 0");
      continue;
    }
    check_unit_range(fn, states.label(h));
    w.q[static_cast<std::size_t>(h)] = fn;
  }
  for (int h = 0; h < states.n_states(); ++h)
    require(states.is_absorbing(h) || q.count(h) == 1, "InvalidQualityWeight",
            "transient state " + states.label(h) + " needs a quality weight");
  return w;
}

double predict_mean_cost(const CovariateProfile& profile, const ReFit& fit, TransitionKey hj,
                         double t) {
  Eigen::VectorXd row = fit.recipe.row(hj, t, profile.lookup());
  require(row.size() == fit.beta.size(), "DimensionMismatch",
          "design row does not match the fitted coefficients");
  const double eta = row.dot(fit.beta);
  return fit.link == LinkKind::identity ? eta : std::exp(eta);
}

NpvReport npv_profile(const CovariateProfile& profile, const InitialDistribution& pi0,
                      const CumulativeIntensityMatrix& a, const TransitionPath& path,
                      const ReFit* cost_fit, const SojournRateModel* sojourn,
                      double discount_rate, double horizon) {
  check_probability_vector(pi0.pi);
  const int n = path.n_states();
  require(a.n_states == n, "DimensionMismatch",
          "intensities and transition path disagree on the state count");
  require(static_cast<int>(pi0.pi.size()) == n, "DimensionMismatch",
          "initial distribution does not match the state count");
  require(std::isfinite(horizon) && horizon > 0.0, "InvalidHorizon",
          "horizon must be positive and finite");
  require(std::isfinite(discount_rate) && discount_rate >= 0.0, "InvalidInput",
          "discount rate must be nonnegative");
  if (sojourn != nullptr)
    require(sojourn->n_states() == n, "DimensionMismatch",
            "rate model does not match the state count");

  if (cost_fit != nullptr) {
    for (const auto& [hj, fn] : a.a) {
      const bool active = std::any_of(fn.times().begin(), fn.times().end(),
                                      [&](double t) { return t > 0.0 && t <= horizon; });
      require(!active || recipe_reaches(cost_fit->recipe, hj), "MissingCostModel",
              "a transition type has events inside the horizon but no cost terms");
    }
  }

  NpvReport report;
  report.initial = pi0;
  report.discount_rate = discount_rate;
  report.horizon = horizon;
  report.conditional.assign(static_cast<std::size_t>(n), NpvStream{});

  for (int i = 0; i < n; ++i) {
    NpvStream& stream = report.conditional[static_cast<std::size_t>(i)];
    if (cost_fit != nullptr) {
      for (const auto& [hj, fn] : a.a) {
        for (double t : fn.times()) {
          if (t <= 0.0 || t > horizon) continue;
          const double occupancy = path.prob_left(i, hj.first, t);
          if (occupancy == 0.0) continue;
          stream.transition += std::exp(-discount_rate * t) *
                               predict_mean_cost(profile, *cost_fit, hj, t) * occupancy *
                               fn.increment_at(t);
        }
      }
    }
    if (sojourn != nullptr) {
      for (int h = 0; h < n; ++h) {
        StepFunction weighted = pointwise_product(path.occupancy(i, h), sojourn->rate_fn(h));
        stream.sojourn += discounted_lebesgue_integral(weighted, discount_rate, 0.0, horizon);
      }
    }
    report.mixed.transition += pi0.pi[static_cast<std::size_t>(i)] * stream.transition;
    report.mixed.sojourn += pi0.pi[static_cast<std::size_t>(i)] * stream.sojourn;
  }
  return report;
}

double npv_single_transition_cov(const CovariateProfile& profile, const SurvivalFit& surv,
                                 const Eigen::VectorXd& beta, const DesignRecipe& x0,
                                 double discount_rate, double horizon) {
  require(x0.dim() == beta.size(), "DimensionMismatch",
          "design recipe does not match the coefficient length");
  require(std::isfinite(horizon) && horizon > 0.0, "InvalidHorizon",
          "horizon must be positive and finite");
  const CovariateFn z = profile.lookup();
  Eigen::VectorXd moment = Eigen::VectorXd::Zero(beta.size());
  bool jumped = false;
  for (double t : surv.survival.times()) {
    if (t <= 0.0 || t > horizon) continue;
    jumped = true;
    const double mass = -surv.survival.increment_at(t);  // dF = -dS
    moment += std::exp(-discount_rate * t) * mass * x0.row_plain(t, z);
  }
  require(jumped, "NoJumps", "the survival curve is constant inside the horizon");
  return beta.dot(moment);
}

double discounted_life_expectancy(const StepFunction& survival, double discount_rate, double t) {
  return discounted_lebesgue_integral(survival, discount_rate, 0.0, t);
}

double quality_adjusted_life_years(const QualityWeights& weights, const TransitionPath& path,
                                   const InitialDistribution& pi0, double discount_rate,
                                   double horizon) {
  check_probability_vector(pi0.pi);
  const int n = path.n_states();
  require(static_cast<int>(weights.q.size()) == n, "DimensionMismatch",
          "quality weights do not match the state count");
  require(static_cast<int>(pi0.pi.size()) == n, "DimensionMismatch",
          "initial distribution does not match the state count");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double pi = pi0.pi[static_cast<std::size_t>(i)];
    if (pi == 0.0) continue;
    for (int h = 0; h < n; ++h) {
      const StepFunction& q = weights.q[static_cast<std::size_t>(h)];
      if (identically_zero(q)) continue;
      StepFunction weighted = pointwise_product(path.occupancy(i, h), q);
      total += pi * discounted_lebesgue_integral(weighted, discount_rate, 0.0, horizon);
    }
  }
  return total;
}

}  // namespace msmcost
