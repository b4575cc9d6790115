#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmcost/design.hpp"
#include "msmcost/event_history.hpp"
#include "msmcost/markov.hpp"
#include "msmcost/regression.hpp"
#include "msmcost/stepfn.hpp"
#include "msmcost/survival.hpp"

namespace msmcost {

// Fixed covariate values a prediction is made for.
struct CovariateProfile {
  std::map<std::string, double> covariates;

  CovariateFn lookup() const { return fixed_covariates(covariates); }
};

// Distribution over starting states; nonnegative, sums to 1 within 1e-9.
struct InitialDistribution {
  std::vector<double> pi;
};

InitialDistribution make_initial_distribution(std::vector<double> pi);
InitialDistribution point_mass(int state, int n_states);
// Observed initial-state frequencies.
InitialDistribution empirical_initial_distribution(const StateSpace& states,
                                                   const std::vector<EventHistory>& cohort);

// Piecewise-constant cost accrual rates per state on a shared grid
// 0 = a_0 < a_1 < ... < a_K; rates[h][k] applies while occupying state h
// during (a_k, a_{k+1}]. The rate is 0 beyond a_K, so a grid ending before
// the horizon simply stops accruing there.
struct SojournRateModel {
  std::vector<double> grid;
  std::vector<std::vector<double>> rates;

  int n_states() const { return static_cast<int>(rates.size()); }
  StepFunction rate_fn(int state) const;
};

SojournRateModel sojourn_rates_from_values(std::vector<double> grid,
                                           std::vector<std::vector<double>> rates);
// Evaluates a fitted accrual-rate regression at interval midpoints; sojourn
// terms address state h through the diagonal key (h, h). An identity-link fit
// is read as a model of the log rate and exponentiated naively, which
// underestimates the mean rate when the log-scale errors are heavy; a
// log-link fit already predicts the rate itself. States outside
// covered_states get rate 0.
SojournRateModel sojourn_rates_from_fit(const ReFit& fit, const CovariateProfile& profile,
                                        int n_states, const std::vector<int>& covered_states,
                                        std::vector<double> grid);

// Per-state quality-of-life weights with values in [0, 1]; absorbing states
// carry weight 0.
struct QualityWeights {
  std::vector<StepFunction> q;
};

// Every transient state needs an entry; absorbing states may only be given
// an identically zero weight and default to it.
QualityWeights make_quality_weights(const StateSpace& states,
                                    const std::map<int, StepFunction>& q);

// Expected cost attached to one h->j transition at time t for the profile.
double predict_mean_cost(const CovariateProfile& profile, const ReFit& fit, TransitionKey hj,
                         double t);

struct NpvStream {
  double transition = 0.0;  // costs attached to transition events
  double sojourn = 0.0;     // costs accrued while occupying states

  double total() const { return transition + sojourn; }
};

struct NpvReport {
  std::vector<NpvStream> conditional;  // by initial state
  InitialDistribution initial;
  NpvStream mixed;  // initial-distribution average of the conditionals
  double discount_rate = 0.0;
  double horizon = 0.0;
  std::optional<double> quality_adjusted;  // filled by callers that want them
  std::optional<double> discounted_le;
};

// Discounted expected cost over (0, horizon] assembled from fitted pieces:
// the transition stream sums exp(-r t) c_hj(t) P_ih(0, t-) dA_hj(t) over the
// jump times of each cumulative intensity, and the sojourn stream integrates
// exp(-r t) b_h(t) P_ih(0, t) dt exactly over constancy intervals. A null
// cost fit zeroes the transition stream, a null rate model the sojourn
// stream. MissingCostModel if a transition type has jumps inside the horizon
// but no design term reaches it.
NpvReport npv_profile(const CovariateProfile& profile, const InitialDistribution& pi0,
                      const CumulativeIntensityMatrix& a, const TransitionPath& path,
                      const ReFit* cost_fit, const SojournRateModel* sojourn,
                      double discount_rate, double horizon);

// Single-transition shortcut: beta' sum over jump times t of S in
// (0, horizon] of exp(-r t) x0(t) (-dS(t)). NoJumps when S is constant
// there.
double npv_single_transition_cov(const CovariateProfile& profile, const SurvivalFit& surv,
                                 const Eigen::VectorXd& beta, const DesignRecipe& x0,
                                 double discount_rate, double horizon);

// Exact integral of exp(-r u) S(u) du over (0, t].
double discounted_life_expectancy(const StepFunction& survival, double discount_rate, double t);

// Sum over initial states i of pi_i times the per-state discounted integrals
// of q(h, u) P_ih(0, u) du over (0, horizon].
double quality_adjusted_life_years(const QualityWeights& weights, const TransitionPath& path,
                                   const InitialDistribution& pi0, double discount_rate,
                                   double horizon);

}  // namespace msmcost
