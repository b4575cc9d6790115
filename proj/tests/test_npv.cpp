#include "msmcost/npv.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "msmcost/cost_estimators.hpp"
#include "msmcost/errors.hpp"
#include "test_cohorts.hpp"

using msmcost::CovariateProfile;
using msmcost::CumulativeIntensityMatrix;
using msmcost::DesignRecipe;
using msmcost::EventHistory;
using msmcost::InitialDistribution;
using msmcost::LinkKind;
using msmcost::NpvReport;
using msmcost::ReFit;
using msmcost::SojournRateModel;
using msmcost::StepFunction;
using msmcost::SurvivalFit;
using msmcost::TransitionPath;
using testing::kInf;

namespace {

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const msmcost::Error& e) {
    return e.code();
  }
  return "";
}

ReFit constant_cost(double c) {
  ReFit fit;
  fit.recipe.terms.push_back({std::nullopt, msmcost::BasisKind::one, "", ""});
  fit.beta = Eigen::VectorXd::Constant(1, c);
  fit.sandwich = Eigen::MatrixXd::Zero(1, 1);
  return fit;
}

// three deaths, one censoring; the usual survival fixture
std::vector<EventHistory> small_cohort() {
  std::vector<EventHistory> cohort;
  cohort.push_back(testing::survival_subject("a", 1.0, kInf, 10.0));
  cohort.push_back(testing::survival_subject("b", kInf, 1.5, 10.0));
  cohort.push_back(testing::survival_subject("c", 2.0, kInf, 10.0));
  cohort.push_back(testing::survival_subject("d", 3.0, kInf, 10.0));
  return cohort;
}

struct TwoStateFit {
  CumulativeIntensityMatrix a;
  TransitionPath path;
};

TwoStateFit two_state_fit(const std::vector<EventHistory>& cohort) {
  msmcost::CountingProcesses cp(cohort);
  CumulativeIntensityMatrix a = msmcost::nelson_aalen(cp);
  return {a, msmcost::aalen_johansen(a)};
}

}  // namespace

TEST_CASE("initial distributions validate and tabulate") {
  SUBCASE("explicit probabilities") {
    auto d = msmcost::make_initial_distribution({0.25, 0.75});
    CHECK(d.pi[1] == 0.75);
    CHECK(code_of([] { msmcost::make_initial_distribution({0.5, 0.6}); }) ==
          "InvalidDistribution");
    CHECK(code_of([] { msmcost::make_initial_distribution({1.5, -0.5}); }) ==
          "InvalidDistribution");
    CHECK(code_of([] { msmcost::make_initial_distribution({}); }) == "InvalidDistribution");
  }

  SUBCASE("point mass") {
    auto d = msmcost::point_mass(1, 3);
    CHECK(d.pi == std::vector<double>{0.0, 1.0, 0.0});
    CHECK(code_of([] { msmcost::point_mass(3, 3); }) == "UnknownState");
  }

  SUBCASE("empirical frequencies") {
    auto states = testing::illness_death();
    std::vector<EventHistory> cohort;
    for (int k = 0; k < 3; ++k)
      cohort.push_back(msmcost::build_event_history("w" + std::to_string(k), states, 0, {},
                                                    kInf, 5.0));
    cohort.push_back(msmcost::build_event_history("i0", states, 1, {}, kInf, 5.0));
    auto d = msmcost::empirical_initial_distribution(states, cohort);
    CHECK(d.pi == std::vector<double>{0.75, 0.25, 0.0});
    CHECK(code_of([&] { msmcost::empirical_initial_distribution(states, {}); }) ==
          "EmptySample");
  }
}

TEST_CASE("sojourn rate models hold per-interval rates and stop at the grid end") {
  auto model = msmcost::sojourn_rates_from_values({0.0, 1.0, 3.0}, {{2.0, 5.0}, {0.0, 0.0}});
  StepFunction f = model.rate_fn(0);
  CHECK(f(0.5) == 2.0);
  CHECK(f(2.0) == 5.0);
  CHECK(f(4.0) == 0.0);
  // integral sees 2 on the first interval, 5 on the second, nothing after
  CHECK(msmcost::discounted_lebesgue_integral(f, 0.0, 0.0, 10.0) ==
        doctest::Approx(12.0).epsilon(1e-14));
  CHECK(msmcost::discounted_lebesgue_integral(model.rate_fn(1), 0.0, 0.0, 10.0) == 0.0);

  CHECK(code_of([] { msmcost::sojourn_rates_from_values({0.0}, {{1.0}}); }) == "InvalidGrid");
  CHECK(code_of([] { msmcost::sojourn_rates_from_values({0.5, 1.0}, {{1.0}}); }) ==
        "InvalidGrid");
  CHECK(code_of([] { msmcost::sojourn_rates_from_values({0.0, 1.0, 1.0}, {{1.0, 1.0}}); }) ==
        "InvalidGrid");
  CHECK(code_of([] { msmcost::sojourn_rates_from_values({0.0, 1.0}, {{1.0, 2.0}}); }) ==
        "InvalidRate");
  CHECK(code_of([] { msmcost::sojourn_rates_from_values({0.0, 1.0}, {{-1.0}}); }) ==
        "InvalidRate");
}

TEST_CASE("fitted accrual rates are evaluated at interval midpoints per state") {
  ReFit fit;
  fit.recipe.terms.push_back({msmcost::TransitionKey{0, 0}, msmcost::BasisKind::one, "", ""});
  fit.recipe.terms.push_back({msmcost::TransitionKey{0, 0}, msmcost::BasisKind::time, "", ""});
  fit.recipe.terms.push_back({msmcost::TransitionKey{1, 1}, msmcost::BasisKind::one, "", ""});
  fit.beta = Eigen::VectorXd(3);
  fit.beta << 0.1, 0.2, -0.4;

  CovariateProfile profile;
  auto model = msmcost::sojourn_rates_from_fit(fit, profile, 3, {0, 1}, {0.0, 2.0, 4.0});
  // identity link reads the fit as a log-rate model: exp(0.1 + 0.2 * mid)
  CHECK(model.rates[0][0] == doctest::Approx(std::exp(0.1 + 0.2 * 1.0)).epsilon(1e-14));
  CHECK(model.rates[0][1] == doctest::Approx(std::exp(0.1 + 0.2 * 3.0)).epsilon(1e-14));
  CHECK(model.rates[1][0] == doctest::Approx(std::exp(-0.4)).epsilon(1e-14));
  CHECK(model.rates[2][0] == 0.0);
  CHECK(model.rates[2][1] == 0.0);

  CHECK(code_of([&] { msmcost::sojourn_rates_from_fit(fit, profile, 3, {3}, {0.0, 1.0}); }) ==
        "UnknownState");
}

TEST_CASE("quality weights pin absorbing states to zero and stay in range") {
  auto states = testing::illness_death();
  std::map<int, StepFunction> q;
  q[0] = StepFunction::constant(1.0);
  q[1] = StepFunction::constant(0.5);
  auto w = msmcost::make_quality_weights(states, q);
  CHECK(w.q.size() == 3);
  CHECK(w.q[2](1.0) == 0.0);

  std::map<int, StepFunction> bad = q;
  bad[2] = StepFunction::constant(0.3);
  CHECK(code_of([&] { msmcost::make_quality_weights(states, bad); }) == "InvalidQualityWeight");

  std::map<int, StepFunction> out = q;
  out[1] = StepFunction::constant(1.2);
  CHECK(code_of([&] { msmcost::make_quality_weights(states, out); }) == "InvalidQualityWeight");

  std::map<int, StepFunction> missing;
  missing[0] = StepFunction::constant(1.0);
  CHECK(code_of([&] { msmcost::make_quality_weights(states, missing); }) ==
        "InvalidQualityWeight");
}

TEST_CASE("mean cost prediction is the linked linear predictor") {
  CovariateProfile profile;
  profile.covariates["z"] = 2.0;

  ReFit fit;
  fit.recipe.terms.push_back({std::nullopt, msmcost::BasisKind::one, "", ""});
  fit.recipe.terms.push_back({std::nullopt, msmcost::BasisKind::time, "", ""});
  fit.beta = Eigen::VectorXd(2);
  fit.beta << 2.0, 3.0;
  CHECK(msmcost::predict_mean_cost(profile, fit, {0, 1}, 4.0) == 14.0);

  fit.beta.setZero();
  CHECK(msmcost::predict_mean_cost(profile, fit, {0, 1}, 4.0) == 0.0);

  fit.link = LinkKind::log;
  CHECK(msmcost::predict_mean_cost(profile, fit, {0, 1}, 4.0) == 1.0);

  fit.beta = Eigen::VectorXd::Zero(3);
  CHECK(code_of([&] { msmcost::predict_mean_cost(profile, fit, {0, 1}, 4.0); }) ==
        "DimensionMismatch");
}

TEST_CASE("transition stream telescopes to cumulative incidence at constant cost") {
  auto cohort = small_cohort();
  auto fit = two_state_fit(cohort);
  ReFit cost = constant_cost(40.0);
  CovariateProfile profile;
  auto pi0 = msmcost::point_mass(0, 2);

  const double tau = 10.0;
  NpvReport report = msmcost::npv_profile(profile, pi0, fit.a, fit.path, &cost, nullptr, 0.0, tau);

  // sum of S(t-) dA over jump times collapses to P_01(0, tau)
  CHECK(report.conditional[0].transition ==
        doctest::Approx(40.0 * fit.path.prob(0, 1, tau)).epsilon(1e-12));
  CHECK(report.conditional[0].sojourn == 0.0);
  // a subject starting absorbed never pays a transition cost
  CHECK(report.conditional[1].transition == 0.0);
  CHECK(report.mixed.transition == doctest::Approx(report.conditional[0].transition));
  CHECK(report.mixed.total() == report.mixed.transition + report.mixed.sojourn);
}

TEST_CASE("sojourn stream with unit rate is restricted mean survival") {
  auto cohort = small_cohort();
  auto fit = two_state_fit(cohort);
  auto km = msmcost::event_time_survival(cohort);
  CovariateProfile profile;
  auto pi0 = msmcost::point_mass(0, 2);

  const double tau = 10.0;
  auto rates = msmcost::sojourn_rates_from_values({0.0, tau}, {{1.0}, {0.0}});
  NpvReport report =
      msmcost::npv_profile(profile, pi0, fit.a, fit.path, nullptr, &rates, 0.0, tau);

  CHECK(report.conditional[0].transition == 0.0);
  CHECK(report.conditional[0].sojourn ==
        doctest::Approx(msmcost::discounted_life_expectancy(km.survival, 0.0, tau))
            .epsilon(1e-12));
}

TEST_CASE("npv responds monotonically to discounting and horizon") {
  auto cohort = small_cohort();
  auto fit = two_state_fit(cohort);
  ReFit cost = constant_cost(40.0);
  auto rates = msmcost::sojourn_rates_from_values({0.0, 10.0}, {{3.0}, {0.0}});
  CovariateProfile profile;
  auto pi0 = msmcost::point_mass(0, 2);

  double last = std::numeric_limits<double>::infinity();
  for (double r : {0.0, 0.02, 0.1, 0.5}) {
    NpvReport rep = msmcost::npv_profile(profile, pi0, fit.a, fit.path, &cost, &rates, r, 10.0);
    CHECK(rep.mixed.total() <= last);
    last = rep.mixed.total();
  }

  last = 0.0;
  for (double tau : {0.5, 1.0, 2.0, 5.0, 10.0}) {
    NpvReport rep = msmcost::npv_profile(profile, pi0, fit.a, fit.path, &cost, &rates, 0.03, tau);
    CHECK(rep.mixed.total() >= last);
    last = rep.mixed.total();
  }
}

TEST_CASE("initial distribution mixes the conditional streams") {
  auto states = testing::illness_death();
  std::vector<EventHistory> cohort;
  cohort.push_back(msmcost::build_event_history("a", states, 0,
                                                {{1.0, 0, 1, 10.0}, {2.0, 1, 2, 20.0}}, kInf,
                                                5.0));
  cohort.push_back(msmcost::build_event_history("b", states, 0, {{1.5, 0, 2, 30.0}}, kInf, 5.0));
  cohort.push_back(msmcost::build_event_history("c", states, 1, {{2.5, 1, 2, 25.0}}, kInf, 5.0));
  cohort.push_back(msmcost::build_event_history("d", states, 0, {}, 3.0, 5.0));

  msmcost::CountingProcesses cp(cohort);
  auto a = msmcost::nelson_aalen(cp);
  auto path = msmcost::aalen_johansen(a);
  ReFit cost = constant_cost(1.0);
  CovariateProfile profile;
  auto pi0 = msmcost::make_initial_distribution({0.6, 0.4, 0.0});

  NpvReport rep = msmcost::npv_profile(profile, pi0, a, path, &cost, nullptr, 0.05, 5.0);
  CHECK(rep.mixed.transition ==
        doctest::Approx(0.6 * rep.conditional[0].transition +
                        0.4 * rep.conditional[1].transition)
            .epsilon(1e-14));
  // starting ill cannot pay 0 -> 1 or 0 -> 2 costs
  CHECK(rep.conditional[1].transition < rep.conditional[0].transition);
}

TEST_CASE("a transition with events but no reaching cost term is rejected") {
  auto states = testing::illness_death();
  std::vector<EventHistory> cohort;
  cohort.push_back(msmcost::build_event_history("a", states, 0,
                                                {{1.0, 0, 1, 10.0}, {2.0, 1, 2, 20.0}}, kInf,
                                                5.0));
  cohort.push_back(msmcost::build_event_history("b", states, 0, {}, kInf, 5.0));

  msmcost::CountingProcesses cp(cohort);
  auto a = msmcost::nelson_aalen(cp);
  auto path = msmcost::aalen_johansen(a);
  CovariateProfile profile;
  auto pi0 = msmcost::point_mass(0, 3);

  ReFit partial;
  partial.recipe.terms.push_back({msmcost::TransitionKey{0, 1}, msmcost::BasisKind::one, "", ""});
  partial.beta = Eigen::VectorXd::Constant(1, 5.0);

  CHECK(code_of([&] {
          msmcost::npv_profile(profile, pi0, a, path, &partial, nullptr, 0.0, 5.0);
        }) == "MissingCostModel");

  // shrinking the horizon below the uncovered 1 -> 2 event makes it fine
  NpvReport rep = msmcost::npv_profile(profile, pi0, a, path, &partial, nullptr, 0.0, 1.5);
  CHECK(rep.conditional[0].transition == doctest::Approx(5.0 * 0.5).epsilon(1e-12));

  // and a null cost model simply reports a zero transition stream
  NpvReport none = msmcost::npv_profile(profile, pi0, a, path, nullptr, nullptr, 0.0, 5.0);
  CHECK(none.mixed.total() == 0.0);
}

TEST_CASE("single-transition shortcut integrates the design against -dS") {
  auto km = msmcost::kaplan_meier({1.0, 1.5, 2.0}, {1, 0, 1});
  CovariateProfile profile;

  SUBCASE("intercept only collapses to cumulative incidence") {
    DesignRecipe x0;
    x0.terms.push_back({std::nullopt, msmcost::BasisKind::one, "", ""});
    Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, 7.0);
    const double got = msmcost::npv_single_transition_cov(profile, km, beta, x0, 0.0, 10.0);
    CHECK(got == doctest::Approx(7.0 * (1.0 - km.at(10.0))).epsilon(1e-12));

    beta.setZero();
    CHECK(msmcost::npv_single_transition_cov(profile, km, beta, x0, 0.0, 10.0) == 0.0);
  }

  SUBCASE("interpolating design reproduces the grouped estimator") {
    // (1, t) through the group means 100 at t=1 and 300 at t=2
    DesignRecipe x0;
    x0.terms.push_back({std::nullopt, msmcost::BasisKind::one, "", ""});
    x0.terms.push_back({std::nullopt, msmcost::BasisKind::time, "", ""});
    Eigen::VectorXd beta(2);
    beta << -100.0, 200.0;

    std::vector<msmcost::CostTriple> triples = {
        {1.0, kInf, 100.0}, {kInf, 1.5, 0.0}, {2.0, kInf, 300.0}};
    for (double r : {0.0, 0.04, 0.3}) {
      const double direct =
          msmcost::bang_tsiatis_npv(triples, r, 10.0, msmcost::WeightForm::survival_weighted);
      const double via_design =
          msmcost::npv_single_transition_cov(profile, km, beta, x0, r, 10.0);
      CHECK(via_design == doctest::Approx(direct).epsilon(1e-10));
    }
  }

  SUBCASE("degenerate inputs") {
    DesignRecipe x0;
    x0.terms.push_back({std::nullopt, msmcost::BasisKind::one, "", ""});
    Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, 1.0);

    auto flat = msmcost::kaplan_meier({1.0, 2.0}, {0, 0});
    CHECK(code_of([&] {
            msmcost::npv_single_transition_cov(profile, flat, beta, x0, 0.0, 10.0);
          }) == "NoJumps");
    // jumps exist but beyond the horizon
    CHECK(code_of([&] {
            msmcost::npv_single_transition_cov(profile, km, beta, x0, 0.0, 0.5);
          }) == "NoJumps");

    Eigen::VectorXd wide = Eigen::VectorXd::Zero(2);
    CHECK(code_of([&] {
            msmcost::npv_single_transition_cov(profile, km, wide, x0, 0.0, 10.0);
          }) == "DimensionMismatch");
  }
}

TEST_CASE("discounted life expectancy has closed forms") {
  CHECK(msmcost::discounted_life_expectancy(StepFunction::constant(1.0), 0.0, 7.0) == 7.0);

  // S = exp(-t) sampled on a fine grid; r = 1 gives (1 - exp(-2)) / 2
  std::vector<double> times;
  std::vector<double> values;
  for (int k = 1; k <= 4000; ++k) {
    times.push_back(k / 4000.0);
    values.push_back(std::exp(-times.back()));
  }
  StepFunction s(1.0, times, values);
  const double expect = (1.0 - std::exp(-2.0)) / 2.0;
  CHECK(msmcost::discounted_life_expectancy(s, 1.0, 1.0) ==
        doctest::Approx(expect).epsilon(2e-4));
}

TEST_CASE("piecewise-constant rates times life-expectancy increments match the sojourn stream") {
  auto cohort = small_cohort();
  auto fit = two_state_fit(cohort);
  auto km = msmcost::event_time_survival(cohort);
  CovariateProfile profile;
  auto pi0 = msmcost::point_mass(0, 2);

  const std::vector<double> grid = {0.0, 1.2, 2.5, 6.0};
  const std::vector<double> b = {4.0, 1.5, 0.25};
  auto rates = msmcost::sojourn_rates_from_values(grid, {b, {0.0, 0.0, 0.0}});
  const double r = 0.07;
  const double tau = 6.0;

  NpvReport rep = msmcost::npv_profile(profile, pi0, fit.a, fit.path, nullptr, &rates, r, tau);

  double by_increments = 0.0;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const double le_step = msmcost::discounted_life_expectancy(km.survival, r, grid[j + 1]) -
                           msmcost::discounted_life_expectancy(km.survival, r, grid[j]);
    by_increments += b[j] * le_step;
  }
  CHECK(rep.conditional[0].sojourn == doctest::Approx(by_increments).epsilon(1e-10));
}

TEST_CASE("quality adjustment mixes state occupancies against the weights") {
  auto states = testing::illness_death();
  std::vector<EventHistory> cohort;
  cohort.push_back(msmcost::build_event_history("a", states, 0,
                                                {{1.0, 0, 1, 0.0}, {2.0, 1, 2, 0.0}}, kInf,
                                                6.0));
  cohort.push_back(msmcost::build_event_history("b", states, 0, {{1.5, 0, 2, 0.0}}, kInf, 6.0));
  cohort.push_back(msmcost::build_event_history("c", states, 0, {{3.0, 0, 1, 0.0}}, kInf, 6.0));
  cohort.push_back(msmcost::build_event_history("d", states, 0, {}, 4.0, 6.0));

  msmcost::CountingProcesses cp(cohort);
  auto path = msmcost::aalen_johansen(msmcost::nelson_aalen(cp));

  std::map<int, StepFunction> q;
  q[0] = StepFunction::constant(1.0);
  q[1] = StepFunction::constant(0.5);
  auto weights = msmcost::make_quality_weights(states, q);
  auto pi0 = msmcost::point_mass(0, 3);
  const double tau = 6.0;

  const double got = msmcost::quality_adjusted_life_years(weights, path, pi0, 0.0, tau);

  // independent areas: walk the occupancy segments by hand
  auto area = [&](int h) {
    std::vector<double> cuts = {0.0};
    for (double t : path.factor_times())
      if (t > 0.0 && t < tau) cuts.push_back(t);
    cuts.push_back(tau);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
      total += path.prob(0, h, cuts[k]) * (cuts[k + 1] - cuts[k]);
    return total;
  };
  CHECK(got == doctest::Approx(1.0 * area(0) + 0.5 * area(1)).epsilon(1e-12));

  // all-zero weights wipe the total
  std::map<int, StepFunction> zero;
  zero[0] = StepFunction::constant(0.0);
  zero[1] = StepFunction::constant(0.0);
  auto none = msmcost::make_quality_weights(states, zero);
  CHECK(msmcost::quality_adjusted_life_years(none, path, pi0, 0.0, tau) == 0.0);
}

TEST_CASE("unit quality weight on the transient state is discounted life expectancy") {
  auto cohort = small_cohort();
  auto fit = two_state_fit(cohort);
  auto km = msmcost::event_time_survival(cohort);

  std::map<int, StepFunction> q;
  q[0] = StepFunction::constant(1.0);
  auto weights = msmcost::make_quality_weights(testing::two_state(), q);
  auto pi0 = msmcost::point_mass(0, 2);

  for (double r : {0.0, 0.05}) {
    const double qaly = msmcost::quality_adjusted_life_years(weights, fit.path, pi0, r, 10.0);
    CHECK(qaly ==
          doctest::Approx(msmcost::discounted_life_expectancy(km.survival, r, 10.0))
              .epsilon(1e-12));
  }
}
