#include "msmcost/cox.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "msmcost/errors.hpp"
#include "test_cohorts.hpp"

using msmcost::BasisKind;
using msmcost::CoxFit;
using msmcost::CoxSpec;
using msmcost::EventHistory;
using msmcost::fit_cox;
using msmcost::StepFunction;
using testing::kInf;
using testing::survival_subject;

namespace {

std::map<std::string, StepFunction> fixed_z(double v) {
  return {{"z", StepFunction::constant(v)}};
}

CoxSpec one_covariate_spec(double tol = 1e-8) {
  CoxSpec spec;
  spec.recipe.terms.push_back({std::nullopt, BasisKind::covariate, "z", ""});
  spec.tol = tol;
  return spec;
}

// Deaths at 1, 2, 3 with z = 1, 0, 1: the score equation reduces to
// 2 exp(2 beta) = 1, so the maximizer is -log(2)/2 and the information
// there is 2 (3 sqrt(2) - 4).
std::vector<EventHistory> closed_form_cohort() {
  std::vector<EventHistory> cohort;
  cohort.push_back(survival_subject("a", 1.0, kInf, 10.0, fixed_z(1.0)));
  cohort.push_back(survival_subject("b", 2.0, kInf, 10.0, fixed_z(0.0)));
  cohort.push_back(survival_subject("c", 3.0, kInf, 10.0, fixed_z(1.0)));
  return cohort;
}

}  // namespace

TEST_CASE("proportional hazards fit matches the closed-form maximizer") {
  CoxFit fit = fit_cox(closed_form_cohort(), one_covariate_spec(1e-12));

  const double beta_hat = -0.5 * std::log(2.0);
  const double info = 2.0 * (3.0 * std::sqrt(2.0) - 4.0);
  CHECK(fit.beta(0) == doctest::Approx(beta_hat).epsilon(1e-9));
  CHECK(fit.information(0, 0) == doctest::Approx(info).epsilon(1e-8));
  CHECK(fit.standard_errors()(0) == doctest::Approx(1.0 / std::sqrt(info)).epsilon(1e-8));
  CHECK(fit.n_events == 3);

  const double x = std::exp(fit.beta(0));
  CHECK(fit.log_likelihood ==
        doctest::Approx(fit.beta(0) - std::log(2 * x + 1) - std::log(1 + x))
            .epsilon(1e-12));

  // event-total baseline increments 1 / sum of exp(beta z) over the risk
  // set: exactly that sum at the fitted coefficient, and the closed-form
  // value up to the solver tolerance
  const StepFunction& base = fit.baseline.at({0, 1});
  CHECK(base.increment_at(1.0) == doctest::Approx(1.0 / (2 * x + 1)).epsilon(1e-14));
  CHECK(base.increment_at(2.0) == doctest::Approx(1.0 / (1 + x)).epsilon(1e-14));
  CHECK(base.increment_at(3.0) == doctest::Approx(1.0 / x).epsilon(1e-14));
  CHECK(base.increment_at(1.0) == doctest::Approx(std::sqrt(2.0) - 1).epsilon(1e-9));
  CHECK(base.increment_at(2.0) == doctest::Approx(2 - std::sqrt(2.0)).epsilon(1e-9));
  CHECK(base.increment_at(3.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("profile prediction scales baseline jumps") {
  CoxFit fit = fit_cox(closed_form_cohort(), one_covariate_spec(1e-12));
  auto a = msmcost::predict_cumulative_intensities(fit, 2, {{"z", 1.0}});

  // exp(beta) = 1/sqrt(2) at the maximizer
  CHECK(a.a.at({0, 1}).increment_at(1.0) ==
        doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-9));
  CHECK(a.a.at({0, 1}).increment_at(2.0) ==
        doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-9));
  CHECK(a.a.at({0, 1}).increment_at(3.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("score matches a finite-difference gradient") {
  auto cohort = closed_form_cohort();
  auto spec = one_covariate_spec();
  const double h = 1e-5;
  for (double b : {-0.4, 0.0, 0.6}) {
    Eigen::VectorXd beta(1);
    beta << b;
    Eigen::VectorXd lo = beta, hi = beta;
    lo(0) -= h;
    hi(0) += h;
    const double fd = (msmcost::cox_log_likelihood(cohort, spec, hi) -
                       msmcost::cox_log_likelihood(cohort, spec, lo)) /
                      (2 * h);
    const double score = msmcost::cox_score(cohort, spec, beta)(0);
    CHECK(score == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("time-varying covariates enter risk sums at left limits") {
  // A's covariate switches from 0 to 1 at 1.5, between the first two deaths.
  std::map<std::string, StepFunction> switching{{"z", StepFunction(0.0, {1.5}, {1.0})}};
  std::vector<EventHistory> cohort;
  cohort.push_back(survival_subject("a", 2.0, kInf, 10.0, switching));
  cohort.push_back(survival_subject("b", 1.0, kInf, 10.0, fixed_z(0.0)));
  cohort.push_back(survival_subject("c", kInf, 3.0, 10.0, fixed_z(0.0)));
  cohort.push_back(survival_subject("d", 2.5, kInf, 10.0, fixed_z(1.0)));
  cohort.push_back(survival_subject("e", kInf, 3.0, 10.0, fixed_z(1.0)));

  auto spec = one_covariate_spec();
  // hand-expanded partial likelihood: risk sums at t = 1, 2, 2.5 are
  // 3 + 2x, 1 + 3x, 1 + 2x with x = exp(beta); events have z = 0, 1, 1
  auto hand_loglik = [](double beta) {
    const double x = std::exp(beta);
    return -std::log(3 + 2 * x) + (beta - std::log(1 + 3 * x)) +
           (beta - std::log(1 + 2 * x));
  };
  auto hand_score = [](double beta) {
    const double x = std::exp(beta);
    return -2 * x / (3 + 2 * x) + 1 - 3 * x / (1 + 3 * x) + 1 - 2 * x / (1 + 2 * x);
  };

  for (double b : {-0.5, 0.0, 0.7}) {
    Eigen::VectorXd beta(1);
    beta << b;
    CHECK(msmcost::cox_log_likelihood(cohort, spec, beta) ==
          doctest::Approx(hand_loglik(b)).epsilon(1e-12));
    CHECK(msmcost::cox_score(cohort, spec, beta)(0) ==
          doctest::Approx(hand_score(b)).epsilon(1e-12));
  }

  CoxFit fit = fit_cox(cohort, spec);
  CHECK(hand_score(fit.beta(0)) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("sweep and scan evaluations agree on the same data") {
  // 30 subjects with two fixed covariates; the clone gives one subject a
  // covariate jump far beyond every follow-up, forcing the per-event scan
  // without changing any value it sees.
  std::mt19937_64 rng(4711);
  std::uniform_real_distribution<double> unif01(0.0, 1.0);

  std::vector<EventHistory> fast, slow;
  for (int i = 0; i < 30; ++i) {
    const double z1 = unif01(rng) < 0.5 ? 0.0 : 1.0;
    const double z2 = 2 * unif01(rng) - 1;
    const double rate = 0.4 * std::exp(0.5 * z1 - 0.3 * z2);
    const double death = -std::log(unif01(rng)) / rate;
    const double censor = 6 * unif01(rng);
    std::map<std::string, StepFunction> cov{{"z1", StepFunction::constant(z1)},
                                            {"z2", StepFunction::constant(z2)}};
    auto died = death <= censor;
    fast.push_back(survival_subject("s" + std::to_string(i), died ? death : kInf,
                                    died ? kInf : censor, 10.0, cov));
    if (i == 0) cov["z1"] = StepFunction(z1, {50.0}, {z1 + 1.0});
    slow.push_back(survival_subject("s" + std::to_string(i), died ? death : kInf,
                                    died ? kInf : censor, 10.0, cov));
  }

  CoxSpec spec;
  spec.recipe.terms.push_back({std::nullopt, BasisKind::covariate, "z1", ""});
  spec.recipe.terms.push_back({std::nullopt, BasisKind::covariate, "z2", ""});

  CoxFit f1 = fit_cox(fast, spec);
  CoxFit f2 = fit_cox(slow, spec);
  CHECK(f1.beta(0) == doctest::Approx(f2.beta(0)).epsilon(1e-12));
  CHECK(f1.beta(1) == doctest::Approx(f2.beta(1)).epsilon(1e-12));
  CHECK(f1.log_likelihood == doctest::Approx(f2.log_likelihood).epsilon(1e-12));
  CHECK(f1.information(0, 1) == doctest::Approx(f2.information(0, 1)).epsilon(1e-10));
  for (double t : {0.5, 1.5, 3.0})
    CHECK(f1.baseline.at({0, 1})(t) == doctest::Approx(f2.baseline.at({0, 1})(t)).epsilon(1e-12));
}

TEST_CASE("large-sample fit recovers the generating coefficients") {
  std::mt19937_64 rng(220);
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  const double b1 = 0.5, b2 = -0.7;

  std::vector<EventHistory> cohort;
  for (int i = 0; i < 400; ++i) {
    const double z1 = unif01(rng) < 0.5 ? 0.0 : 1.0;
    const double z2 = 2 * unif01(rng) - 1;
    const double rate = 0.5 * std::exp(b1 * z1 + b2 * z2);
    const double death = -std::log(unif01(rng)) / rate;
    const double censor = 8 * unif01(rng);
    std::map<std::string, StepFunction> cov{{"z1", StepFunction::constant(z1)},
                                            {"z2", StepFunction::constant(z2)}};
    auto died = death <= censor;
    cohort.push_back(survival_subject("s" + std::to_string(i), died ? death : kInf,
                                      died ? kInf : censor, 20.0, cov));
  }

  CoxSpec spec;
  spec.recipe.terms.push_back({std::nullopt, BasisKind::covariate, "z1", ""});
  spec.recipe.terms.push_back({std::nullopt, BasisKind::covariate, "z2", ""});
  CoxFit fit = fit_cox(cohort, spec);

  Eigen::VectorXd se = fit.standard_errors();
  CHECK(std::abs(fit.beta(0) - b1) < 3 * se(0));
  CHECK(std::abs(fit.beta(1) - b2) < 3 * se(1));
}

TEST_CASE("zero covariates converge immediately to the increment estimator") {
  std::vector<EventHistory> cohort;
  cohort.push_back(survival_subject("a", 1.0, kInf, 10.0, fixed_z(0.0)));
  cohort.push_back(survival_subject("b", 2.0, kInf, 10.0, fixed_z(0.0)));
  cohort.push_back(survival_subject("c", kInf, 3.0, 10.0, fixed_z(0.0)));

  CoxFit fit = fit_cox(cohort, one_covariate_spec());
  CHECK(fit.beta(0) == 0.0);
  CHECK(fit.baseline.at({0, 1}).increment_at(1.0) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(fit.baseline.at({0, 1}).increment_at(2.0) == doctest::Approx(1.0 / 2).epsilon(1e-15));
}

TEST_CASE("degenerate samples raise typed errors") {
  SUBCASE("no events") {
    std::vector<EventHistory> cohort;
    cohort.push_back(survival_subject("a", kInf, 1.0, 10.0, fixed_z(0.0)));
    try {
      fit_cox(cohort, one_covariate_spec());
      CHECK(false);
    } catch (const msmcost::Error& e) {
      CHECK(e.code() == "NoEvents");
    }
  }
  SUBCASE("perfectly separated covariate drifts without bound") {
    std::vector<EventHistory> cohort;
    cohort.push_back(survival_subject("a", 1.0, kInf, 10.0, fixed_z(1.0)));
    cohort.push_back(survival_subject("b", 2.0, kInf, 10.0, fixed_z(0.0)));
    CoxSpec spec = one_covariate_spec();
    spec.beta_bound = 10.0;
    try {
      fit_cox(cohort, spec);
      CHECK(false);
    } catch (const msmcost::Error& e) {
      CHECK(e.code() == "MonotoneLikelihood");
    }
  }
}
