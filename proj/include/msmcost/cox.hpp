#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "msmcost/design.hpp"
#include "msmcost/event_history.hpp"
#include "msmcost/markov.hpp"

namespace msmcost {

// Multiplicative-intensity regression shared across transition types: the
// h->j intensity is alpha_hj0(t) exp(beta' z_hj(t)), z_hj built by the recipe
// (transition-filtered terms give type-specific effects). Ties are handled by
// letting tied events share the full risk set.
struct CoxSpec {
  DesignRecipe recipe;
  double beta_bound = 50.0;  // MonotoneLikelihood beyond this
  double tol = 1e-8;
  int max_iter = 50;
};

struct CoxFit {
  DesignRecipe recipe;
  Eigen::VectorXd beta;
  Eigen::MatrixXd information;  // observed information at beta
  double log_likelihood = 0.0;
  int n_events = 0;
  int iterations = 0;
  // cumulative baseline per transition type: jumps d / sum of exp(beta'z)
  std::map<TransitionKey, StepFunction> baseline;

  Eigen::VectorXd standard_errors() const;  // sqrt of diagonal of information^-1
};

double cox_log_likelihood(const std::vector<EventHistory>& cohort, const CoxSpec& spec,
                          const Eigen::VectorXd& beta);
Eigen::VectorXd cox_score(const std::vector<EventHistory>& cohort, const CoxSpec& spec,
                          const Eigen::VectorXd& beta);

// Damped Newton on the partial likelihood. Errors: NoEvents,
// SingularInformation, MonotoneLikelihood, NoConvergence.
CoxFit fit_cox(const std::vector<EventHistory>& cohort, const CoxSpec& spec);

// Cumulative intensities for a covariate profile: each baseline jump scaled
// by exp(beta' z_hj(t)) with z built from the profile values.
CumulativeIntensityMatrix predict_cumulative_intensities(
    const CoxFit& fit, int n_states, const std::map<std::string, double>& profile);

}  // namespace msmcost
