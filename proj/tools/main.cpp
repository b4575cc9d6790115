// msmcost: simulate multi-state cost cohorts, run any estimator on cohort
// files, replicate estimators against the built-in oracle, and verify
// estimator identities. Reports are JSON with the resolved configuration
// embedded; anything time-dependent goes to the run_meta.json sidecar so
// identical configurations produce byte-identical reports.
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msmcost/cost_estimators.hpp"
#include "msmcost/cox.hpp"
#include "msmcost/errors.hpp"
#include "msmcost/io.hpp"
#include "msmcost/markov.hpp"
#include "msmcost/npv.hpp"
#include "msmcost/regression.hpp"
#include "msmcost/replication.hpp"
#include "msmcost/simulator.hpp"
#include "msmcost/survival.hpp"

namespace {

using ordered_json = nlohmann::ordered_json;
using namespace msmcost;

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  char buf[48];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  require(ec == std::errc(), "Internal", "number formatting failed");
  return std::string(buf, end);
}

std::string default_out_dir() {
  const char* env = std::getenv("MSMCOST_OUT");
  return env != nullptr && *env != '\0' ? env : ".";
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_json_file(const std::string& path, const ordered_json& j) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IoError", "cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  require(out.good(), "IoError", "write to " + path + " failed");
}

// execution details live here so the reports can stay reproducible
struct RunMeta {
  std::string out_dir;
  std::string command_line;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::vector<std::string> written;

  void add(const std::string& path) { written.push_back(path); }
  void flush() const {
    if (out_dir.empty()) return;
    std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &utc);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    ordered_json meta;
    meta["command"] = command_line;
    meta["finished_utc"] = stamp;
    meta["elapsed_seconds"] = seconds;
    meta["written"] = written;
    write_json_file(join_path(out_dir, "run_meta.json"), meta);
  }
};

void announce(RunMeta& meta, const std::string& path) {
  meta.add(path);
  std::cout << "wrote " << path << "\n";
}

ordered_json step_json(const StepFunction& f) {
  ordered_json j;
  j["initial"] = f.initial_value();
  j["times"] = f.times();
  j["values"] = f.values();
  return j;
}

ordered_json ingest_json(const IngestReport& report) {
  ordered_json j;
  j["event_rows"] = report.event_rows;
  j["subject_rows"] = report.subject_rows;
  ordered_json rejected = ordered_json::array();
  for (const RejectedRow& row : report.rejected)
    rejected.push_back({{"line", row.line}, {"reason", row.reason}});
  j["rejected"] = rejected;
  j["notes"] = report.notes;
  return j;
}

std::string term_label(const DesignTerm& term) {
  std::string base;
  switch (term.basis) {
    case BasisKind::one: base = "1"; break;
    case BasisKind::time: base = "t"; break;
    case BasisKind::time_sq: base = "t^2"; break;
    case BasisKind::covariate: base = term.covariate; break;
  }
  if (!term.interact.empty()) base += "*" + term.interact;
  if (term.filter)
    base = std::to_string(term.filter->first) + "->" + std::to_string(term.filter->second) +
           ":" + base;
  return base;
}

ordered_json coefficient_table(const DesignRecipe& recipe, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& se) {
  ordered_json rows = ordered_json::array();
  for (int k = 0; k < beta.size(); ++k) {
    ordered_json row;
    row["term"] = term_label(recipe.terms[static_cast<std::size_t>(k)]);
    row["estimate"] = beta(k);
    if (se.size() == beta.size()) row["std_error"] = se(k);
    rows.push_back(row);
  }
  return rows;
}

DesignRecipe intercept_only() {
  DesignRecipe recipe;
  recipe.terms.push_back(DesignTerm{std::nullopt, BasisKind::one, "", ""});
  return recipe;
}

LinkKind parse_link(const std::string& name) {
  if (name == "identity") return LinkKind::identity;
  if (name == "log") return LinkKind::log;
  fail("InvalidInput", "unknown link " + name + " (expected identity or log)");
}

WeightConvention parse_convention(const std::string& name) {
  if (name == "event-time") return WeightConvention::transition_time;
  if (name == "horizon") return WeightConvention::horizon_truncated;
  fail("InvalidInput",
       "unknown weight convention " + name + " (expected event-time or horizon)");
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
  std::string events, subjects, states, panels, accrual, profile;
  std::string out = default_out_dir();
  double rate = kUnset;
  double horizon = 0.0;
  std::string strata;
  std::string link;            // empty: take the profile's
  std::string weight = "ipcw";        // bt
  std::string form = "direct";        // strawderman
  std::string records = "transition";  // gee / gls source rows
  std::string convention = "event-time";
  std::string sweep;  // npv: lo:hi:steps
};

struct EstimateContext {
  CohortBundle bundle;
  std::map<std::string, StepFunction> accrual;
  AnalysisProfile profile;
  double rate = 0.0;
  double horizon = 0.0;
};

EstimateContext load_context(const EstimateArgs& args) {
  EstimateContext ctx;
  std::filesystem::create_directories(args.out.empty() ? "." : args.out);
  if (!args.profile.empty()) ctx.profile = read_profile_json(args.profile);
  ctx.horizon = args.horizon > 0.0 ? args.horizon : ctx.profile.horizon;
  require(ctx.horizon > 0.0, "InvalidInput",
          "set --horizon (or a profile with one); it bounds every estimator");
  ctx.rate = std::isnan(args.rate) ? ctx.profile.discount_rate : args.rate;
  require(ctx.rate >= 0.0, "InvalidInput", "discount rate must be nonnegative");
  require(!args.events.empty() && !args.subjects.empty() && !args.states.empty(),
          "InvalidInput", "--events, --subjects and --states are all required");
  ctx.bundle = read_cohort(args.events, args.subjects, args.states, ctx.horizon);
  if (!args.accrual.empty()) ctx.accrual = read_accrual_csv(args.accrual);
  return ctx;
}

ordered_json base_config(const std::string& method, const EstimateArgs& args,
                         const EstimateContext& ctx) {
  ordered_json cfg;
  cfg["method"] = method;
  cfg["events"] = args.events;
  cfg["subjects"] = args.subjects;
  cfg["states"] = args.states;
  if (!args.panels.empty()) cfg["panels"] = args.panels;
  if (!args.accrual.empty()) cfg["accrual"] = args.accrual;
  if (!args.profile.empty()) cfg["profile"] = args.profile;
  cfg["discount_rate"] = ctx.rate;
  cfg["horizon"] = ctx.horizon;
  if (!args.strata.empty()) cfg["strata"] = args.strata;
  return cfg;
}

DesignRecipe recipe_or_intercept(const EstimateContext& ctx) {
  return ctx.profile.cost_design ? *ctx.profile.cost_design : intercept_only();
}

LinkKind resolve_link(const EstimateArgs& args, const EstimateContext& ctx) {
  return args.link.empty() ? ctx.profile.link : parse_link(args.link);
}

InitialDistribution resolve_initial(const EstimateContext& ctx) {
  if (ctx.profile.initial_probs)
    return make_initial_distribution(*ctx.profile.initial_probs);
  if (ctx.profile.initial_state)
    return point_mass(*ctx.profile.initial_state, ctx.bundle.states.n_states());
  return empirical_initial_distribution(ctx.bundle.states, ctx.bundle.histories);
}

std::vector<FollowUp> follow_ups_of(const std::vector<EventHistory>& cohort) {
  std::vector<FollowUp> out;
  out.reserve(cohort.size());
  for (const EventHistory& h : cohort) out.push_back(follow_up(h));
  return out;
}

void run_km(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  const SurvivalFit events = event_time_survival(ctx.bundle.histories);
  const auto censoring = censoring_survival(ctx.bundle.histories, args.strata);

  ordered_json report;
  report["config"] = base_config("km", args, ctx);
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["n_subjects"] = events.n;
  report["event_survival"] = step_json(events.survival);
  ordered_json by_stratum = ordered_json::array();
  for (const auto& [key, fit] : censoring) {
    ordered_json s;
    s["stratum"] = key;
    s["n"] = fit.n;
    s["survival"] = step_json(fit.survival);
    by_stratum.push_back(s);
  }
  report["censoring_survival"] = by_stratum;

  std::vector<std::vector<std::string>> rows;
  auto emit = [&rows](const std::string& curve, const std::string& stratum,
                      const SurvivalFit& fit) {
    rows.push_back({curve, stratum, "0", "1"});
    const auto& f = fit.survival;
    for (std::size_t k = 0; k < f.times().size(); ++k)
      rows.push_back({curve, stratum, fmt(f.times()[k]), fmt(f.values()[k])});
  };
  emit("event", "", events);
  for (const auto& [key, fit] : censoring) emit("censoring", key, fit);
  const std::string table = join_path(args.out, "km_curves.csv");
  write_csv_file(table, {"curve", "stratum", "time", "survival"}, rows);
  announce(meta, table);

  const std::string path = join_path(args.out, "estimate_km.json");
  write_json_file(path, report);
  announce(meta, path);
}

void run_aj(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  CountingProcesses cp(ctx.bundle.histories);
  const CumulativeIntensityMatrix a = nelson_aalen(cp);
  const TransitionPath path = aalen_johansen(a);
  const InitialDistribution pi0 = resolve_initial(ctx);

  const int n_states = ctx.bundle.states.n_states();
  auto mixture_at = [&](double t) {
    const Eigen::MatrixXd m = path.at(t);
    std::vector<double> p(static_cast<std::size_t>(n_states), 0.0);
    for (int h = 0; h < n_states; ++h)
      for (int i = 0; i < n_states; ++i)
        p[static_cast<std::size_t>(h)] += pi0.pi[static_cast<std::size_t>(i)] * m(i, h);
    return p;
  };

  std::vector<double> grid = path.factor_times();
  grid.insert(grid.begin(), 0.0);
  if (grid.back() < ctx.horizon) grid.push_back(ctx.horizon);
  std::vector<std::vector<std::string>> rows;
  for (double t : grid) {
    const std::vector<double> p = mixture_at(t);
    for (int h = 0; h < n_states; ++h)
      rows.push_back({fmt(t), ctx.bundle.states.labels()[static_cast<std::size_t>(h)],
                      fmt(p[static_cast<std::size_t>(h)])});
  }
  const std::string table = join_path(args.out, "aj_occupancy.csv");
  write_csv_file(table, {"time", "state", "probability"}, rows);
  announce(meta, table);

  ordered_json report;
  report["config"] = base_config("aj", args, ctx);
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["initial_distribution"] = pi0.pi;
  report["n_factors"] = path.factor_times().size();
  ordered_json at_horizon;
  const std::vector<double> ph = mixture_at(ctx.horizon);
  for (int h = 0; h < n_states; ++h)
    at_horizon[ctx.bundle.states.labels()[static_cast<std::size_t>(h)]] =
        ph[static_cast<std::size_t>(h)];
  report["occupancy_at_horizon"] = at_horizon;
  const std::string path_out = join_path(args.out, "estimate_aj.json");
  write_json_file(path_out, report);
  announce(meta, path_out);
}

void run_cox(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  require(ctx.profile.cost_design.has_value(), "InvalidInput",
          "cox needs a profile with a design (its terms build the hazard rows)");
  CoxSpec spec;
  spec.recipe = *ctx.profile.cost_design;
  const CoxFit fit = fit_cox(ctx.bundle.histories, spec);

  ordered_json report;
  report["config"] = base_config("cox", args, ctx);
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["coefficients"] = coefficient_table(fit.recipe, fit.beta, fit.standard_errors());
  report["log_likelihood"] = fit.log_likelihood;
  report["n_events"] = fit.n_events;
  report["iterations"] = fit.iterations;

  std::vector<std::vector<std::string>> rows;
  for (const auto& [key, base] : fit.baseline) {
    double level = base.initial_value();
    rows.push_back({std::to_string(key.first), std::to_string(key.second), "0", fmt(level)});
    for (std::size_t k = 0; k < base.times().size(); ++k)
      rows.push_back({std::to_string(key.first), std::to_string(key.second),
                      fmt(base.times()[k]), fmt(base.values()[k])});
  }
  const std::string table = join_path(args.out, "cox_baseline.csv");
  write_csv_file(table, {"from_state", "to_state", "time", "cumulative_intensity"}, rows);
  announce(meta, table);

  const std::string path = join_path(args.out, "estimate_cox.json");
  write_json_file(path, report);
  announce(meta, path);
}

void run_bt(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  const auto triples = cost_triples_from(ctx.bundle.histories, ctx.accrual);
  const double ipcw = bang_tsiatis_npv(triples, ctx.rate, ctx.horizon, WeightForm::ipcw);
  const double sw =
      bang_tsiatis_npv(triples, ctx.rate, ctx.horizon, WeightForm::survival_weighted);
  require(args.weight == "ipcw" || args.weight == "survival", "InvalidInput",
          "unknown weight form " + args.weight + " (expected ipcw or survival)");

  ordered_json report;
  ordered_json cfg = base_config("bt", args, ctx);
  cfg["weight_form"] = args.weight;
  report["config"] = cfg;
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["ipcw"] = ipcw;
  report["survival_weighted"] = sw;
  report["value"] = args.weight == "ipcw" ? ipcw : sw;
  const std::string path = join_path(args.out, "estimate_bt.json");
  write_json_file(path, report);
  announce(meta, path);
}

void run_strawderman(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  const auto processes = cost_processes_from(ctx.bundle.histories, ctx.accrual);
  const auto events = follow_ups_of(ctx.bundle.histories);
  const StrawdermanResult direct =
      strawderman_npv(processes, events, ctx.rate, ctx.horizon, StrawdermanForm::direct);
  const StrawdermanResult dual =
      strawderman_npv(processes, events, ctx.rate, ctx.horizon, StrawdermanForm::dual);
  require(args.form == "direct" || args.form == "dual", "InvalidInput",
          "unknown form " + args.form + " (expected direct or dual)");

  ordered_json report;
  ordered_json cfg = base_config("strawderman", args, ctx);
  cfg["form"] = args.form;
  report["config"] = cfg;
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["direct"] = direct.value;
  report["dual"] = dual.value;
  report["shared_jump_warning"] = direct.shared_jump_warning || dual.shared_jump_warning;
  report["value"] = args.form == "direct" ? direct.value : dual.value;
  const std::string path = join_path(args.out, "estimate_strawderman.json");
  write_json_file(path, report);
  announce(meta, path);
}

void run_lin(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  require(!args.panels.empty(), "InvalidInput",
          "the interval estimator needs --panels with per-interval costs");
  const auto panels = read_panels_csv(args.panels);
  const auto events = follow_ups_of(ctx.bundle.histories);
  const double value = lin_interval_npv(panels, events);

  ordered_json report;
  report["config"] = base_config("lin", args, ctx);
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["grid"] = panels.empty() ? std::vector<double>{} : panels.front().grid;
  report["value"] = value;
  const std::string path = join_path(args.out, "estimate_lin.json");
  write_json_file(path, report);
  announce(meta, path);
}

CostRegressionData build_records(const EstimateArgs& args, const EstimateContext& ctx,
                                 const DesignRecipe& recipe) {
  if (args.records == "transition")
    return transition_cost_records(ctx.bundle.histories, recipe, ctx.horizon, args.strata);
  require(args.records == "lifetime", "InvalidInput",
          "unknown record source " + args.records + " (expected transition or lifetime)");
  const auto costs = subject_costs_from(ctx.bundle.histories, ctx.rate, ctx.accrual);
  return lifetime_cost_records(costs, recipe, ctx.horizon,
                               parse_convention(args.convention), args.strata);
}

void run_gee(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  const DesignRecipe recipe = recipe_or_intercept(ctx);
  const LinkKind link = resolve_link(args, ctx);
  const CostRegressionData data = build_records(args, ctx, recipe);
  const auto g = censoring_survival(ctx.bundle.histories, args.strata);
  const auto weights = ipc_weights(data, g);
  const GeeFit fit = fit_weighted_gee(data, weights, OmegaSpec{1.0, 0.0}, link);
  const Eigen::MatrixXd cov = sandwich_variance(data, weights, fit);
  const Eigen::VectorXd se = cov.diagonal().cwiseSqrt();

  ordered_json report;
  ordered_json cfg = base_config("gee", args, ctx);
  cfg["records"] = args.records;
  if (args.records == "lifetime") cfg["convention"] = args.convention;
  cfg["link"] = link == LinkKind::log ? "log" : "identity";
  report["config"] = cfg;
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["coefficients"] = coefficient_table(recipe, fit.beta, se);
  report["n_subjects_used"] = fit.n_subjects_used;
  report["n_rows_used"] = fit.n_rows_used;
  report["iterations"] = fit.iterations;
  const std::string path = join_path(args.out, "estimate_gee.json");
  write_json_file(path, report);
  announce(meta, path);
}

void run_gls(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  const DesignRecipe recipe = recipe_or_intercept(ctx);
  const LinkKind link = resolve_link(args, ctx);
  const CostRegressionData data = build_records(args, ctx, recipe);
  const auto g = censoring_survival(ctx.bundle.histories, args.strata);
  const ReFit fit = fit_re_cost_model(data, g, link);

  ordered_json report;
  ordered_json cfg = base_config("gls", args, ctx);
  cfg["records"] = args.records;
  if (args.records == "lifetime") cfg["convention"] = args.convention;
  cfg["link"] = link == LinkKind::log ? "log" : "identity";
  report["config"] = cfg;
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["coefficients"] = coefficient_table(recipe, fit.beta, fit.standard_errors());
  report["sigma_u2"] = fit.sigma_u2;
  report["sigma_a2"] = fit.sigma_a2;
  report["insufficient_pairs"] = fit.insufficient_pairs;
  report["n_subjects_used"] = fit.n_subjects_used;
  const std::string path = join_path(args.out, "estimate_gls.json");
  write_json_file(path, report);
  announce(meta, path);
}

ordered_json stream_json(const NpvStream& s) {
  ordered_json j;
  j["transition"] = s.transition;
  j["sojourn"] = s.sojourn;
  j["total"] = s.total();
  return j;
}

void run_npv(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  require(ctx.profile.cost_design.has_value(), "InvalidInput",
          "npv needs a profile with a cost design");
  const LinkKind link = resolve_link(args, ctx);
  CountingProcesses cp(ctx.bundle.histories);
  const CumulativeIntensityMatrix a = nelson_aalen(cp);
  const TransitionPath path = aalen_johansen(a);
  const CostRegressionData data = transition_cost_records(
      ctx.bundle.histories, *ctx.profile.cost_design, ctx.horizon, args.strata);
  const auto g = censoring_survival(ctx.bundle.histories, args.strata);
  const ReFit fit = fit_re_cost_model(data, g, link);

  std::optional<SojournRateModel> sojourn;
  if (ctx.profile.sojourn_grid && ctx.profile.sojourn_rates)
    sojourn = sojourn_rates_from_values(*ctx.profile.sojourn_grid,
                                        *ctx.profile.sojourn_rates);
  const CovariateProfile profile{ctx.profile.covariates};
  const InitialDistribution pi0 = resolve_initial(ctx);
  NpvReport npv = npv_profile(profile, pi0, a, path, &fit,
                              sojourn ? &*sojourn : nullptr, ctx.rate, ctx.horizon);

  double le = 0.0;
  for (int i = 0; i < ctx.bundle.states.n_states(); ++i) {
    const double pi = npv.initial.pi[static_cast<std::size_t>(i)];
    if (pi > 0.0)
      le += pi * discounted_life_expectancy(path.transient_survival(i, ctx.bundle.states),
                                            ctx.rate, ctx.horizon);
  }
  npv.discounted_le = le;
  if (!ctx.profile.quality.empty()) {
    const QualityWeights q = make_quality_weights(ctx.bundle.states, ctx.profile.quality);
    npv.quality_adjusted =
        quality_adjusted_life_years(q, path, pi0, ctx.rate, ctx.horizon);
  }

  ordered_json report;
  ordered_json cfg = base_config("npv", args, ctx);
  cfg["link"] = link == LinkKind::log ? "log" : "identity";
  ordered_json terms = ordered_json::array();
  for (const DesignTerm& t : ctx.profile.cost_design->terms) terms.push_back(term_label(t));
  cfg["cost_design"] = terms;
  report["config"] = cfg;
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["coefficients"] = coefficient_table(fit.recipe, fit.beta, fit.standard_errors());
  ordered_json conditional = ordered_json::array();
  for (std::size_t i = 0; i < npv.conditional.size(); ++i) {
    ordered_json c = stream_json(npv.conditional[i]);
    c["state"] = ctx.bundle.states.labels()[i];
    conditional.push_back(c);
  }
  report["conditional"] = conditional;
  report["initial_distribution"] = npv.initial.pi;
  report["mixed"] = stream_json(npv.mixed);
  report["discounted_life_expectancy"] = *npv.discounted_le;
  if (npv.quality_adjusted) report["quality_adjusted"] = *npv.quality_adjusted;

  if (!args.sweep.empty()) {
    double lo = 0.0, hi = 0.0;
    long steps = 0;
    {
      std::istringstream in(args.sweep);
      char c1 = 0, c2 = 0;
      in >> lo >> c1 >> hi >> c2 >> steps;
      require(in && c1 == ':' && c2 == ':' && steps >= 2 && hi > lo && lo >= 0.0,
              "InvalidInput", "--sweep expects lo:hi:steps with steps >= 2");
    }
    std::vector<std::vector<std::string>> rows;
    for (long k = 0; k < steps; ++k) {
      const double rk =
          lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps - 1);
      const NpvReport swept = npv_profile(profile, pi0, a, path, &fit,
                                          sojourn ? &*sojourn : nullptr, rk, ctx.horizon);
      rows.push_back({fmt(rk), fmt(swept.mixed.transition), fmt(swept.mixed.sojourn),
                      fmt(swept.mixed.total())});
    }
    const std::string table = join_path(args.out, "npv_sweep.csv");
    write_csv_file(table, {"discount_rate", "transition", "sojourn", "total"}, rows);
    announce(meta, table);
  }

  const std::string path_out = join_path(args.out, "estimate_npv.json");
  write_json_file(path_out, report);
  announce(meta, path_out);
}

void run_qaly(const EstimateArgs& args, RunMeta& meta) {
  EstimateContext ctx = load_context(args);
  require(!ctx.profile.quality.empty(), "InvalidInput",
          "qaly needs a profile with per-state quality weights");
  CountingProcesses cp(ctx.bundle.histories);
  const TransitionPath path = aalen_johansen(nelson_aalen(cp));
  const InitialDistribution pi0 = resolve_initial(ctx);
  const QualityWeights q = make_quality_weights(ctx.bundle.states, ctx.profile.quality);
  const double value =
      quality_adjusted_life_years(q, path, pi0, ctx.rate, ctx.horizon);

  ordered_json report;
  report["config"] = base_config("qaly", args, ctx);
  report["ingest"] = ingest_json(ctx.bundle.report);
  report["initial_distribution"] = pi0.pi;
  report["value"] = value;
  const std::string path_out = join_path(args.out, "estimate_qaly.json");
  write_json_file(path_out, report);
  announce(meta, path_out);
}

// ---------------------------------------------------------------- simulate

void run_simulate(const std::string& scenario_path, const std::string& out, RunMeta& meta) {
  const ScenarioSpec spec = read_scenario_json(scenario_path);
  const std::vector<double> grid = validate_scenario(spec);
  const SimulatedCohort cohort = simulate_cohort(spec);
  const auto histories = cohort.histories();

  std::filesystem::create_directories(out);
  const std::string events_path = join_path(out, "events.csv");
  write_events_csv(events_path, histories);
  announce(meta, events_path);
  const std::string subjects_path = join_path(out, "subjects.csv");
  write_subjects_csv(subjects_path, histories);
  announce(meta, subjects_path);
  const std::string states_path = join_path(out, "states.json");
  write_states_json(states_path, spec.states);
  announce(meta, states_path);
  const std::string panels_path = join_path(out, "panels.csv");
  write_panels_csv(panels_path, cohort.panels());
  announce(meta, panels_path);
  std::vector<std::pair<std::string, StepFunction>> accruals;
  for (const SimulatedSubject& s : cohort.subjects) accruals.emplace_back(s.id, s.accrual);
  const std::string accrual_path = join_path(out, "accrual.csv");
  write_accrual_csv(accrual_path, accruals);
  announce(meta, accrual_path);
  const std::string scenario_echo = join_path(out, "scenario.json");
  write_scenario_json(scenario_echo, spec);
  announce(meta, scenario_echo);

  long n_events = 0, censored = 0, absorbed = 0;
  for (const EventHistory& h : histories) {
    n_events += static_cast<long>(h.events().size());
    const FollowUp fu = follow_up(h);
    censored += fu.censored ? 1 : 0;
    absorbed += fu.event ? 1 : 0;
  }
  ordered_json report;
  ordered_json cfg;
  cfg["scenario"] = scenario_path;
  cfg["out"] = out;
  report["config"] = cfg;
  ordered_json resolved;
  resolved["n_subjects"] = spec.n_subjects;
  resolved["seed"] = spec.seed;
  resolved["horizon"] = spec.horizon;
  resolved["grid"] = grid;
  report["resolved"] = resolved;
  ordered_json counts;
  counts["subjects"] = histories.size();
  counts["events"] = n_events;
  counts["censored"] = censored;
  counts["absorbed"] = absorbed;
  report["cohort"] = counts;
  const std::string path = join_path(out, "simulate_report.json");
  write_json_file(path, report);
  announce(meta, path);
}

// ---------------------------------------------------------------- study

std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct StudyArgs {
  std::string scenario;
  std::string profile;
  std::string out = default_out_dir();
  int replicates = 0;
  std::string estimators =
      "ipcw_single_cost,survival_weighted_single_cost,accumulation_direct,"
      "accumulation_dual,interval_sum,transition_npv,lifetime_wls";
  int threads = 1;
  std::string link = "identity";
  std::string convention = "horizon";
  long draws = 200000;
};

void run_study_cmd(const StudyArgs& args, RunMeta& meta) {
  StudyConfig cfg;
  cfg.scenario = read_scenario_json(args.scenario);
  cfg.replicates = args.replicates;
  for (const std::string& name : split_csv_list(args.estimators)) {
    const auto kind = study_estimator_from_name(name);
    require(kind.has_value(), "InvalidInput", "unknown estimator " + name);
    cfg.estimators.push_back(*kind);
  }
  cfg.threads = args.threads;
  cfg.link = parse_link(args.link);
  cfg.convention = parse_convention(args.convention);
  cfg.shortfall_draws = args.draws;
  if (!args.profile.empty()) {
    const AnalysisProfile profile = read_profile_json(args.profile);
    if (profile.cost_design) cfg.cost_recipe = *profile.cost_design;
  }

  const StudyResult result = run_study(cfg);

  std::filesystem::create_directories(args.out);
  const std::string scenario_echo = join_path(args.out, "study_scenario.json");
  write_scenario_json(scenario_echo, cfg.scenario);
  announce(meta, scenario_echo);

  ordered_json report;
  ordered_json jcfg;
  jcfg["scenario"] = args.scenario;
  jcfg["scenario_echo"] = "study_scenario.json";
  if (!args.profile.empty()) jcfg["profile"] = args.profile;
  jcfg["replicates"] = cfg.replicates;
  jcfg["estimators"] = split_csv_list(args.estimators);
  jcfg["link"] = args.link;
  jcfg["convention"] = args.convention;
  jcfg["shortfall_draws"] = cfg.shortfall_draws;
  ordered_json recipe = ordered_json::array();
  for (const DesignTerm& t : cfg.cost_recipe.terms) recipe.push_back(term_label(t));
  jcfg["cost_design"] = recipe;
  report["config"] = jcfg;
  ordered_json oracle;
  oracle["total"] = result.oracle.total;
  oracle["transition_stream"] = result.oracle.transition_stream;
  oracle["sojourn_stream"] = result.oracle.sojourn_stream;
  oracle["rel_error"] = result.oracle.rel_error;
  report["oracle"] = oracle;
  ordered_json summaries = ordered_json::array();
  for (const EstimatorSummary& s : result.summaries) {
    ordered_json j;
    j["name"] = s.name;
    j["target"] = s.target;
    j["target_se"] = s.target_se;
    j["mean"] = s.mean;
    j["sd"] = s.sd;
    j["bias"] = s.bias;
    j["mc_se"] = s.mc_se;
    if (s.coverage) j["coverage"] = *s.coverage;
    j["estimates"] = s.estimates;
    if (!s.std_errors.empty()) j["std_errors"] = s.std_errors;
    summaries.push_back(j);
  }
  report["estimators"] = summaries;
  const std::string path = join_path(args.out, "study_report.json");
  write_json_file(path, report);
  announce(meta, path);

  std::vector<std::vector<std::string>> rows;
  for (const EstimatorSummary& s : result.summaries)
    for (std::size_t rep = 0; rep < s.estimates.size(); ++rep)
      rows.push_back({std::to_string(rep), s.name, fmt(s.estimates[rep]),
                      s.std_errors.empty() ? "" : fmt(s.std_errors[rep])});
  const std::string table = join_path(args.out, "study_replicates.csv");
  write_csv_file(table, {"replicate", "estimator", "estimate", "std_error"}, rows);
  announce(meta, table);
}

// ---------------------------------------------------------------- check

int run_check_cmd(const std::string& scenario_path, const std::string& out, RunMeta& meta) {
  const ScenarioSpec spec = read_scenario_json(scenario_path);
  const CheckResult result = run_check(spec);

  std::filesystem::create_directories(out);
  const std::string scenario_echo = join_path(out, "check_scenario.json");
  write_scenario_json(scenario_echo, spec);
  announce(meta, scenario_echo);

  ordered_json report;
  ordered_json cfg;
  cfg["scenario"] = scenario_path;
  cfg["scenario_echo"] = "check_scenario.json";
  report["config"] = cfg;
  ordered_json rows = ordered_json::array();
  for (const CheckRow& row : result.rows) {
    ordered_json j;
    j["name"] = row.name;
    j["gap"] = row.gap;
    j["tol"] = row.tol;
    j["pass"] = row.pass;
    rows.push_back(j);
    std::cout << (row.pass ? "ok   " : "FAIL ") << row.name << " gap " << fmt(row.gap)
              << " tol " << fmt(row.tol) << "\n";
  }
  report["checks"] = rows;
  report["all_pass"] = result.all_pass();
  const std::string path = join_path(out, "check_report.json");
  write_json_file(path, report);
  announce(meta, path);

  if (!result.all_pass()) {
    ordered_json err;
    err["error"] = "CheckFailed";
    err["message"] = "one or more estimator identities exceeded tolerance";
    std::cout << err.dump() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-state medical cost estimation toolkit"};
  app.require_subcommand(1);

  RunMeta meta;
  {
    std::string line;
    for (int i = 0; i < argc; ++i) {
      if (i > 0) line += " ";
      line += argv[i];
    }
    meta.command_line = line;
  }
  int exit_code = 0;

  // simulate
  std::string sim_scenario;
  std::string sim_out = default_out_dir();
  CLI::App* simulate = app.add_subcommand("simulate", "draw a cohort from a scenario file");
  simulate->add_option("--scenario", sim_scenario, "scenario JSON")->required();
  simulate->add_option("-o,--out", sim_out, "output directory");
  simulate->callback([&] {
    meta.out_dir = sim_out;
    run_simulate(sim_scenario, sim_out, meta);
  });

  // estimate
  EstimateArgs est;
  CLI::App* estimate = app.add_subcommand("estimate", "run one estimator on cohort files");
  estimate->require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--events", est.events, "events CSV")->required();
    sub->add_option("--subjects", est.subjects, "subjects CSV")->required();
    sub->add_option("--states", est.states, "state space JSON")->required();
    sub->add_option("--accrual", est.accrual, "accrual atoms CSV");
    sub->add_option("--profile", est.profile, "analysis profile JSON");
    sub->add_option("-o,--out", est.out, "output directory");
    sub->add_option("-r,--rate", est.rate, "discount rate (default: profile, then 0)");
    sub->add_option("--horizon", est.horizon, "analysis horizon (default: profile)");
    sub->add_option("--strata", est.strata, "baseline covariate for censoring strata");
  };

  CLI::App* km = estimate->add_subcommand("km", "product-limit survival curves");
  common(km);
  km->callback([&] {
    meta.out_dir = est.out;
    run_km(est, meta);
  });

  CLI::App* aj = estimate->add_subcommand("aj", "state occupancy probabilities");
  common(aj);
  aj->callback([&] {
    meta.out_dir = est.out;
    run_aj(est, meta);
  });

  CLI::App* cox = estimate->add_subcommand("cox", "multiplicative-intensity regression");
  common(cox);
  cox->callback([&] {
    meta.out_dir = est.out;
    run_cox(est, meta);
  });

  CLI::App* bt = estimate->add_subcommand("bt", "censoring-weighted single-cost mean");
  common(bt);
  bt->add_option("--weight", est.weight, "ipcw or survival");
  bt->callback([&] {
    meta.out_dir = est.out;
    run_bt(est, meta);
  });

  CLI::App* straw =
      estimate->add_subcommand("strawderman", "discounted accumulation estimator");
  common(straw);
  straw->add_option("--form", est.form, "direct or dual");
  straw->callback([&] {
    meta.out_dir = est.out;
    run_strawderman(est, meta);
  });

  CLI::App* lin = estimate->add_subcommand("lin", "undiscounted interval-sum estimator");
  common(lin);
  lin->add_option("--panels", est.panels, "per-interval cost CSV")->required();
  lin->callback([&] {
    meta.out_dir = est.out;
    run_lin(est, meta);
  });

  auto regression_flags = [&](CLI::App* sub) {
    sub->add_option("--records", est.records, "transition or lifetime rows");
    sub->add_option("--convention", est.convention,
                    "lifetime weighting endpoint: event-time or horizon");
    sub->add_option("--link", est.link, "identity or log (default: profile)");
  };
  CLI::App* gee = estimate->add_subcommand("gee", "weighted estimating-equation fit");
  common(gee);
  regression_flags(gee);
  gee->callback([&] {
    meta.out_dir = est.out;
    run_gee(est, meta);
  });

  CLI::App* gls = estimate->add_subcommand("gls", "two-stage random-effects fit");
  common(gls);
  regression_flags(gls);
  gls->callback([&] {
    meta.out_dir = est.out;
    run_gls(est, meta);
  });

  CLI::App* npv =
      estimate->add_subcommand("npv", "model-based discounted cost for a profile");
  common(npv);
  npv->add_option("--link", est.link, "identity or log (default: profile)");
  npv->add_option("--sweep", est.sweep, "discount-rate sweep lo:hi:steps");
  npv->callback([&] {
    meta.out_dir = est.out;
    run_npv(est, meta);
  });

  CLI::App* qaly = estimate->add_subcommand("qaly", "quality-adjusted life years");
  common(qaly);
  qaly->callback([&] {
    meta.out_dir = est.out;
    run_qaly(est, meta);
  });

  // study
  StudyArgs study;
  CLI::App* study_cmd =
      app.add_subcommand("study", "replicate estimators against the oracle");
  study_cmd->add_option("--scenario", study.scenario, "scenario JSON")->required();
  study_cmd->add_option("--replicates", study.replicates, "number of replicates")
      ->required();
  study_cmd->add_option("--estimators", study.estimators, "comma-separated estimator list");
  study_cmd->add_option("--threads", study.threads, "worker threads");
  study_cmd->add_option("--profile", study.profile,
                        "profile whose design feeds transition_npv");
  study_cmd->add_option("--link", study.link, "cost model link: identity or log");
  study_cmd->add_option("--convention", study.convention,
                        "lifetime weighting endpoint: event-time or horizon");
  study_cmd->add_option("--draws", study.draws, "draws behind the interval-sum target");
  study_cmd->add_option("-o,--out", study.out, "output directory");
  study_cmd->callback([&] {
    meta.out_dir = study.out;
    run_study_cmd(study, meta);
  });

  // check
  std::string check_scenario;
  std::string check_out = default_out_dir();
  CLI::App* check = app.add_subcommand("check", "verify estimator identities");
  check->add_option("--scenario", check_scenario, "scenario JSON")->required();
  check->add_option("-o,--out", check_out, "output directory");
  check->callback([&] {
    meta.out_dir = check_out;
    exit_code = run_check_cmd(check_scenario, check_out, meta);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    ordered_json err;
    err["error"] = "UsageError";
    err["message"] = e.what();
    std::cout << err.dump() << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  } catch (const msmcost::Error& e) {
    ordered_json err;
    err["error"] = e.code();
    std::string message = e.what();
    if (message.rfind(e.code() + ": ", 0) == 0)
      message = message.substr(e.code().size() + 2);
    err["message"] = message;
    std::cout << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    ordered_json err;
    err["error"] = "Internal";
    err["message"] = e.what();
    std::cout << err.dump() << "\n";
    return 1;
  }

  meta.flush();
  return exit_code;
}
