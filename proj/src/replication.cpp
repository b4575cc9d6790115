#include "msmcost/replication.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

#include "msmcost/cost_estimators.hpp"
#include "msmcost/errors.hpp"
#include "msmcost/markov.hpp"
#include "msmcost/npv.hpp"
#include "msmcost/survival.hpp"

namespace msmcost {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ95 = 1.959963984540054;

const std::vector<std::pair<StudyEstimator, std::string>>& estimator_names() {
  static const std::vector<std::pair<StudyEstimator, std::string>> table = {
      {StudyEstimator::ipcw_single, "ipcw_single_cost"},
      {StudyEstimator::survival_weighted_single, "survival_weighted_single_cost"},
      {StudyEstimator::accumulation_direct, "accumulation_direct"},
      {StudyEstimator::accumulation_dual, "accumulation_dual"},
      {StudyEstimator::interval_sum, "interval_sum"},
      {StudyEstimator::transition_npv, "transition_npv"},
      {StudyEstimator::lifetime_wls, "lifetime_wls"},
  };
  return table;
}

DesignRecipe intercept_recipe() {
  DesignRecipe recipe;
  recipe.terms.push_back(DesignTerm{std::nullopt, BasisKind::one, "", ""});
  return recipe;
}

// covariate values the oracle conditions on; the study design keeps them
// degenerate so population-level estimators share the oracle's estimand
std::map<std::string, double> fixed_covariate_values(const ScenarioSpec& spec) {
  std::map<std::string, double> z;
  for (const CovariateLaw& law : spec.covariates) {
    require(law.kind == CovariateLaw::Kind::constant, "InvalidInput",
            "replication studies need constant covariates so the oracle matches "
            "the population estimand; covariate " +
                law.name + " is random");
    z[law.name] = law.a;
  }
  return z;
}

std::vector<double> initial_mixture(const ScenarioSpec& spec) {
  if (!spec.initial_probs.empty()) return spec.initial_probs;
  std::vector<double> pi(static_cast<std::size_t>(spec.states.n_states()), 0.0);
  pi[0] = 1.0;
  return pi;
}

OracleNpv oracle_mixture(const ScenarioSpec& spec, const std::map<std::string, double>& z) {
  const std::vector<double> pi = initial_mixture(spec);
  OracleNpv out{0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (pi[i] <= 0.0) continue;
    OracleNpv o = oracle_npv(spec, z, static_cast<int>(i));
    out.total += pi[i] * o.total;
    out.transition_stream += pi[i] * o.transition_stream;
    out.sojourn_stream += pi[i] * o.sojourn_stream;
    out.rel_error = std::max(out.rel_error, o.rel_error);
  }
  return out;
}

// per-replicate estimator evaluations, lazily sharing derived views
struct ReplicateData {
  const StudyConfig& cfg;
  const std::map<std::string, double>& z;
  SimulatedCohort cohort;

  std::optional<std::vector<EventHistory>> histories_;
  std::optional<std::vector<FollowUp>> follow_ups_;
  std::optional<std::vector<CostTriple>> triples_;

  const std::vector<EventHistory>& histories() {
    if (!histories_) histories_ = cohort.histories();
    return *histories_;
  }
  const std::vector<FollowUp>& follow_ups() {
    if (!follow_ups_) follow_ups_ = cohort.follow_ups();
    return *follow_ups_;
  }
  // administrative censoring at the horizon keeps follow-up finite without
  // changing any weight: risk sets on (0, horizon] are unaffected
  const std::vector<CostTriple>& triples() {
    if (!triples_) {
      triples_ = cohort.triples();
      for (CostTriple& t : *triples_)
        t.censor_time = std::min(t.censor_time, cfg.scenario.horizon);
    }
    return *triples_;
  }

  std::pair<double, double> evaluate(StudyEstimator which) {
    const double r = cfg.scenario.discount_rate;
    const double tau = cfg.scenario.horizon;
    switch (which) {
      case StudyEstimator::ipcw_single:
        return {bang_tsiatis_npv(triples(), r, tau, WeightForm::ipcw), kNan};
      case StudyEstimator::survival_weighted_single:
        return {bang_tsiatis_npv(triples(), r, tau, WeightForm::survival_weighted), kNan};
      case StudyEstimator::accumulation_direct:
        return {strawderman_npv(cohort.processes(), follow_ups(), r, tau,
                                StrawdermanForm::direct)
                    .value,
                kNan};
      case StudyEstimator::accumulation_dual:
        return {strawderman_npv(cohort.processes(), follow_ups(), r, tau,
                                StrawdermanForm::dual)
                    .value,
                kNan};
      case StudyEstimator::interval_sum:
        return {lin_interval_npv(cohort.panels(), follow_ups()), kNan};
      case StudyEstimator::transition_npv: {
        CountingProcesses cp(histories());
        CumulativeIntensityMatrix a = nelson_aalen(cp);
        TransitionPath path = aalen_johansen(a);
        DesignRecipe recipe =
            cfg.cost_recipe.terms.empty() ? intercept_recipe() : cfg.cost_recipe;
        CostRegressionData records = transition_cost_records(histories(), recipe, tau);
        auto g = censoring_survival(histories());
        ReFit fit = fit_re_cost_model(records, g, cfg.link);
        CovariateProfile profile{z};
        InitialDistribution pi0 =
            empirical_initial_distribution(cfg.scenario.states, histories());
        NpvReport report = npv_profile(profile, pi0, a, path, &fit, nullptr, r, tau);
        return {report.mixed.total(), kNan};
      }
      case StudyEstimator::lifetime_wls: {
        CostRegressionData records = lifetime_cost_records(
            cohort.subject_costs(), intercept_recipe(), tau, cfg.convention);
        auto g = censoring_survival(histories());
        ReFit fit = fit_re_cost_model(records, g, LinkKind::identity);
        return {fit.beta(0), fit.standard_errors()(0)};
      }
    }
    fail("InvalidInput", "unknown estimator");
  }
};

struct ReplicateOutput {
  std::vector<double> est;
  std::vector<double> se;
};

ReplicateOutput run_replicate(const StudyConfig& cfg, const std::map<std::string, double>& z,
                              std::uint64_t seed) {
  ScenarioSpec spec = cfg.scenario;
  spec.seed = seed;
  ReplicateData data{cfg, z, simulate_cohort(spec)};
  ReplicateOutput out;
  out.est.reserve(cfg.estimators.size());
  out.se.reserve(cfg.estimators.size());
  for (StudyEstimator which : cfg.estimators) {
    auto [est, se] = data.evaluate(which);
    out.est.push_back(est);
    out.se.push_back(se);
  }
  return out;
}

}  // namespace

const std::string& study_estimator_name(StudyEstimator e) {
  for (const auto& [kind, name] : estimator_names())
    if (kind == e) return name;
  fail("InvalidInput", "unknown estimator");
}

std::optional<StudyEstimator> study_estimator_from_name(const std::string& name) {
  for (const auto& [kind, candidate] : estimator_names())
    if (candidate == name) return kind;
  return std::nullopt;
}

std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate) {
  std::uint64_t x = master + (replicate + 1) * 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

StudyResult run_study(const StudyConfig& config) {
  require(config.replicates >= 2, "InvalidInput", "need at least two replicates");
  require(!config.estimators.empty(), "InvalidInput", "select at least one estimator");
  require(config.threads >= 1, "InvalidInput", "thread count must be positive");
  {
    std::set<StudyEstimator> seen(config.estimators.begin(), config.estimators.end());
    require(seen.size() == config.estimators.size(), "InvalidInput",
            "estimator list has duplicates");
  }
  validate_scenario(config.scenario);

  const std::map<std::string, double> z = fixed_covariate_values(config.scenario);
  const bool wants_interval = std::count(config.estimators.begin(), config.estimators.end(),
                                         StudyEstimator::interval_sum) > 0;
  for (StudyEstimator which : config.estimators)
    if (which == StudyEstimator::lifetime_wls)
      require(config.convention == WeightConvention::horizon_truncated, "InvalidInput",
              "the lifetime estimator tracks the oracle only when costs are "
              "truncated at the horizon; the event-time convention estimates a "
              "conditional mean with no oracle here");

  StudyResult result;
  result.oracle = oracle_mixture(config.scenario, z);

  // the interval estimator is undiscounted and converges to the expected
  // total less the exact interval-censoring shortfall
  double undiscounted_total = 0.0;
  LinBias shortfall{0.0, 0.0, 0};
  if (wants_interval) {
    ScenarioSpec flat = config.scenario;
    flat.discount_rate = 0.0;
    undiscounted_total = oracle_mixture(flat, z).total;
    shortfall = oracle_lin_bias(config.scenario,
                                static_cast<std::size_t>(config.shortfall_draws),
                                replicate_seed(config.scenario.seed, 0x53484F52ULL));
  }

  const long R = config.replicates;
  std::vector<ReplicateOutput> rows(static_cast<std::size_t>(R));
  const int n_threads = static_cast<int>(std::min<long>(config.threads, R));
  if (n_threads <= 1) {
    for (long rep = 0; rep < R; ++rep)
      rows[static_cast<std::size_t>(rep)] = run_replicate(
          config, z, replicate_seed(config.scenario.seed, static_cast<std::uint64_t>(rep)));
  } else {
    std::atomic<long> next{0};
    std::vector<std::exception_ptr> thrown(static_cast<std::size_t>(n_threads));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (long rep = next.fetch_add(1); rep < R; rep = next.fetch_add(1))
            rows[static_cast<std::size_t>(rep)] =
                run_replicate(config, z,
                              replicate_seed(config.scenario.seed,
                                             static_cast<std::uint64_t>(rep)));
        } catch (...) {
          thrown[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (const auto& e : thrown)
      if (e) std::rethrow_exception(e);
  }

  for (std::size_t which = 0; which < config.estimators.size(); ++which) {
    const StudyEstimator kind = config.estimators[which];
    EstimatorSummary s;
    s.name = study_estimator_name(kind);
    s.estimates.reserve(static_cast<std::size_t>(R));
    bool has_se = true;
    for (const auto& row : rows) {
      s.estimates.push_back(row.est[which]);
      has_se = has_se && std::isfinite(row.se[which]);
    }
    if (has_se)
      for (const auto& row : rows) s.std_errors.push_back(row.se[which]);

    switch (kind) {
      case StudyEstimator::interval_sum:
        s.target = undiscounted_total - shortfall.value;
        s.target_se = shortfall.std_error;
        break;
      case StudyEstimator::transition_npv:
        s.target = result.oracle.transition_stream;
        break;
      default:
        s.target = result.oracle.total;
        break;
    }

    double sum = 0.0;
    for (double v : s.estimates) sum += v;
    s.mean = sum / static_cast<double>(R);
    double ss = 0.0;
    for (double v : s.estimates) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(R - 1));
    s.bias = s.mean - s.target;
    s.mc_se = s.sd / std::sqrt(static_cast<double>(R));
    if (has_se) {
      long covered = 0;
      for (std::size_t rep = 0; rep < s.estimates.size(); ++rep)
        if (std::abs(s.estimates[rep] - s.target) <= kZ95 * s.std_errors[rep]) ++covered;
      s.coverage = static_cast<double>(covered) / static_cast<double>(R);
    }
    result.summaries.push_back(std::move(s));
  }
  return result;
}

bool CheckResult::all_pass() const {
  for (const CheckRow& row : rows)
    if (!row.pass) return false;
  return true;
}

CheckResult run_check(const ScenarioSpec& spec) {
  SimulatedCohort cohort = simulate_cohort(spec);
  const std::vector<EventHistory> histories = cohort.histories();
  const double r = spec.discount_rate;
  const double tau = spec.horizon;

  CheckResult result;
  auto add = [&](std::string name, double gap, double tol) {
    result.rows.push_back({std::move(name), gap, tol, gap <= tol});
  };

  {
    const auto triples = cohort.triples();
    const double ipcw = bang_tsiatis_npv(triples, r, tau, WeightForm::ipcw);
    const double sw = bang_tsiatis_npv(triples, r, tau, WeightForm::survival_weighted);
    add("single_cost_weight_forms_agree", std::abs(ipcw - sw), 1e-10);
  }

  {
    const SurvivalFit event_fit = event_time_survival(histories);
    const SurvivalFit censor_fit = censoring_survival(histories).at("");
    const double n = static_cast<double>(event_fit.n);
    double gap = 0.0;
    for (const FollowUp& fu : cohort.follow_ups()) {
      const double lhs = event_fit.left(fu.time) * censor_fit.left(fu.time);
      gap = std::max(gap, std::abs(lhs - event_fit.risk_at(fu.time) / n));
    }
    add("product_limit_duality", gap, 1e-12);
  }

  {
    CountingProcesses cp(histories);
    TransitionPath path = aalen_johansen(nelson_aalen(cp));
    double gap = 0.0;
    for (double t : path.factor_times()) {
      const Eigen::MatrixXd m = path.at(t);
      for (int i = 0; i < path.n_states(); ++i)
        gap = std::max(gap, std::abs(m.row(i).sum() - 1.0));
    }
    add("occupancy_rows_sum_to_one", gap, 1e-12);
  }

  {
    DesignRecipe recipe;
    recipe.terms.push_back(DesignTerm{std::nullopt, BasisKind::one, "", ""});
    recipe.terms.push_back(DesignTerm{std::nullopt, BasisKind::time, "", ""});
    CostRegressionData records = transition_cost_records(histories, recipe, tau);
    std::vector<Eigen::VectorXd> ones;
    ones.reserve(records.subjects.size());
    for (const auto& s : records.subjects) ones.push_back(Eigen::VectorXd::Ones(s.y.size()));
    GeeFit gls = fit_weighted_gls(records, ones, OmegaSpec{1.0, 0.0});

    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(2, 2);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(2);
    for (const auto& s : records.subjects) {
      xtx += s.x.transpose() * s.x;
      xty += s.x.transpose() * s.y;
    }
    const Eigen::VectorXd ols = xtx.ldlt().solve(xty);
    add("unit_weight_gls_is_ols", (gls.beta - ols).cwiseAbs().maxCoeff(), 1e-10);
  }

  return result;
}

}  // namespace msmcost
