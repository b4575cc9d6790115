#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "msmcost/design.hpp"
#include "msmcost/survival.hpp"

namespace msmcost {

// Longitudinal cost records for one subject. Rows align across y, x, and the
// per-record metadata: anchor_time is the time whose censoring survival
// inverse-weights the record, observed marks records whose response was seen
// in full. censor_stratum keys the censoring fit used for this subject.
struct SubjectRecords {
  std::string subject_id;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  std::vector<double> anchor_time;
  std::vector<int> observed;
  std::string censor_stratum;
};

struct CostRegressionData {
  std::vector<SubjectRecords> subjects;
  DesignRecipe recipe;

  int p() const { return recipe.dim(); }
};

// w_ig = observed_ig / G-hat(anchor- | stratum); zero for unobserved records.
// Errors: UnknownStratum, ZeroCensoringSurvival (an observed record whose
// anchor lies where the fitted censoring survival has reached zero).
std::vector<Eigen::VectorXd> ipc_weights(const CostRegressionData& data,
                                         const std::map<std::string, SurvivalFit>& g);

// Exchangeable working covariance sigma_u^2 I + sigma_a^2 J across one
// subject's records; sigma_a2 = 0 gives working independence.
struct OmegaSpec {
  double sigma_u2 = 1.0;
  double sigma_a2 = 0.0;
};

enum class LinkKind { identity, log };

struct GeeFit {
  Eigen::VectorXd beta;
  LinkKind link = LinkKind::identity;
  OmegaSpec omega;
  int n_subjects_used = 0;   // subjects with at least one positive weight
  long n_rows_used = 0;
  int iterations = 0;
};

// Estimating-equation fit: sum_i D_i' M_i (y_i - mu_i) = 0 over the positive
// weight rows, with M_i = L_i^-T W_i L_i^-1 for the Cholesky factor L of the
// working covariance. The identity link solves in closed form (weighted
// generalized least squares); the log link runs damped Fisher scoring.
// Errors: EmptySample, SingularDesign, SingularWorkingMatrix, NoConvergence.
GeeFit fit_weighted_gee(const CostRegressionData& data,
                        const std::vector<Eigen::VectorXd>& weights,
                        const OmegaSpec& omega, LinkKind link,
                        double rel_tol = 1e-8, int max_iter = 100);

// Identity-link shortcut.
GeeFit fit_weighted_gls(const CostRegressionData& data,
                        const std::vector<Eigen::VectorXd>& weights,
                        const OmegaSpec& omega);

// Fitted mean for one record row.
double gee_mean(const GeeFit& fit, const Eigen::VectorXd& row);

// Moment estimates from stage-one residuals: the weighted mean square gives
// the total variance, weighted cross products within subjects give the
// shared component (each pair weighted by its later record's weight, which
// is the pair's joint inverse observation probability under monotone
// follow-up). Subjects need two or more observed records to form pairs;
// insufficient_pairs reports the sigma_a2 = 0 fallback instead of failing.
struct VarianceComponents {
  double sigma_u2 = 1.0;
  double sigma_a2 = 0.0;
  long n_pairs = 0;
  bool insufficient_pairs = false;
};
VarianceComponents estimate_variance_components(
    const CostRegressionData& data, const std::vector<Eigen::VectorXd>& weights,
    const GeeFit& stage_one);

// Robust covariance of beta-hat: A^-1 B A^-1 / n over the n subjects used,
// with A the analytic mean derivative of the estimating function and B the
// mean outer product of per-subject scores.
Eigen::MatrixXd sandwich_variance(const CostRegressionData& data,
                                  const std::vector<Eigen::VectorXd>& weights,
                                  const GeeFit& fit);

// Full pipeline for a random-effects cost model: inverse-probability
// weights, working-independence fit, variance components from its
// residuals, refit under the exchangeable covariance, robust variance.
struct ReFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd sandwich;
  DesignRecipe recipe;
  LinkKind link = LinkKind::identity;
  double sigma_u2 = 1.0;
  double sigma_a2 = 0.0;
  bool insufficient_pairs = false;
  int n_subjects_used = 0;

  Eigen::VectorXd standard_errors() const;
};
ReFit fit_re_cost_model(const CostRegressionData& data,
                        const std::map<std::string, SurvivalFit>& g, LinkKind link);

// One record per observed costed transition: response the transition cost,
// design row evaluated at the transition time, weight anchored there.
// Transitions after tau are dropped.
CostRegressionData transition_cost_records(const std::vector<EventHistory>& cohort,
                                           const DesignRecipe& recipe, double tau,
                                           const std::string& strata_covariate = "");

// Whether a subject's lifetime cost counts as fully observed for the
// single-record regression: up to the event when it precedes censoring and
// the horizon, or up to min(event, horizon) with censoring still pending.
enum class WeightConvention { transition_time, horizon_truncated };

// One record per subject: response the discounted cost accumulated to the
// convention's endpoint, design row at time zero.
struct SubjectCost {
  std::string subject_id;
  double event_time = 0.0;   // +inf when the terminal event was never seen
  double censor_time = 0.0;  // +inf when never censored
  double discounted_cost = 0.0;
  std::map<std::string, double> covariates;
};
CostRegressionData lifetime_cost_records(const std::vector<SubjectCost>& subjects,
                                         const DesignRecipe& recipe, double tau,
                                         WeightConvention convention,
                                         const std::string& strata_covariate = "");

}  // namespace msmcost
