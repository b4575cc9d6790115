#include "msmcost/cox.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "msmcost/errors.hpp"

namespace msmcost {

namespace {

struct EventRecord {
  double time;
  TransitionKey type;
  std::size_t subject;
};

struct Problem {
  const std::vector<EventHistory>* cohort;
  const CoxSpec* spec;
  std::vector<EventRecord> events;
  std::vector<TransitionKey> types;  // observed transition types, sorted
  bool time_fixed;                   // no time bases, no time-varying covariates

  // fast path cache: per type, per subject, the design row
  std::vector<Eigen::MatrixXd> rows_by_type;  // [type](subject, :)
};

Problem build_problem(const std::vector<EventHistory>& cohort, const CoxSpec& spec) {
  Problem pb;
  pb.cohort = &cohort;
  pb.spec = &spec;
  std::set<TransitionKey> seen;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    for (const auto& e : cohort[i].events()) {
      pb.events.push_back({e.time, {e.from_state, e.to_state}, i});
      seen.insert({e.from_state, e.to_state});
    }
  require(!pb.events.empty(), "NoEvents", "no observed transitions to fit on");
  std::stable_sort(pb.events.begin(), pb.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.time < b.time; });
  pb.types.assign(seen.begin(), seen.end());

  pb.time_fixed = !spec.recipe.has_time_basis();
  for (const auto& name : spec.recipe.covariate_names())
    for (const auto& h : cohort) {
      require(h.has_covariate(name), "UnknownCovariate",
              "subject " + h.subject_id() + " has no covariate '" + name + "'");
      if (h.covariates().at(name).n_jumps() > 0) pb.time_fixed = false;
    }

  if (pb.time_fixed) {
    const int p = spec.recipe.dim();
    pb.rows_by_type.reserve(pb.types.size());
    for (const auto& type : pb.types) {
      Eigen::MatrixXd rows(cohort.size(), p);
      for (std::size_t i = 0; i < cohort.size(); ++i)
        rows.row(static_cast<Eigen::Index>(i)) =
            spec.recipe.row(type, 0.0, covariates_of(cohort[i]));
      pb.rows_by_type.push_back(std::move(rows));
    }
  }
  return pb;
}

int type_index(const Problem& pb, TransitionKey type) {
  auto it = std::lower_bound(pb.types.begin(), pb.types.end(), type);
  return static_cast<int>(it - pb.types.begin());
}

struct Evaluation {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // of the log likelihood (negative semidefinite)
  // filled only when requested: per type, Breslow denominator at each of the
  // type's event times (aligned with event order)
  std::map<TransitionKey, std::vector<std::pair<double, double>>> breslow_jumps;
};

// Reference path: per event, scan all subjects for risk-set membership.
Evaluation evaluate_scan(const Problem& pb, const Eigen::VectorXd& beta, bool baselines) {
  const auto& cohort = *pb.cohort;
  const int p = pb.spec->recipe.dim();
  Evaluation ev;
  ev.grad = Eigen::VectorXd::Zero(p);
  ev.hess = Eigen::MatrixXd::Zero(p, p);

  std::size_t k = 0;
  while (k < pb.events.size()) {
    const double t = pb.events[k].time;
    std::size_t k2 = k;
    while (k2 < pb.events.size() && pb.events[k2].time == t) ++k2;

    // tied events each see the full risk set at t
    for (std::size_t e = k; e < k2; ++e) {
      const auto& rec = pb.events[e];
      const int h = rec.type.first;
      double s0 = 0.0;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
      Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        if (cohort[i].censor_time() < t) continue;
        if (cohort[i].state_before(t) != h) continue;
        const Eigen::VectorXd z = pb.spec->recipe.row(rec.type, t, covariates_of(cohort[i]));
        const double w = std::exp(beta.dot(z));
        s0 += w;
        s1 += w * z;
        s2 += w * z * z.transpose();
      }
      require(s0 > 0.0, "JumpWithEmptyRiskSet", "event with empty risk set");
      const Eigen::VectorXd ze =
          pb.spec->recipe.row(rec.type, t, covariates_of(cohort[rec.subject]));
      ev.loglik += beta.dot(ze) - std::log(s0);
      const Eigen::VectorXd zbar = s1 / s0;
      ev.grad += ze - zbar;
      ev.hess -= s2 / s0 - zbar * zbar.transpose();
      if (baselines) ev.breslow_jumps[rec.type].emplace_back(t, 1.0 / s0);
    }
    k = k2;
  }
  return ev;
}

// Fast path for fully time-fixed designs: sweep state occupancy in time order
// and keep running risk-set aggregates per transition type.
Evaluation evaluate_sweep(const Problem& pb, const Eigen::VectorXd& beta, bool baselines) {
  const auto& cohort = *pb.cohort;
  const int p = pb.spec->recipe.dim();
  const int ntypes = static_cast<int>(pb.types.size());

  // per (type, subject): exp(beta'z) and weighted rows
  std::vector<Eigen::VectorXd> w(static_cast<std::size_t>(ntypes));
  for (int ty = 0; ty < ntypes; ++ty)
    w[static_cast<std::size_t>(ty)] =
        (pb.rows_by_type[static_cast<std::size_t>(ty)] * beta).array().exp();

  struct Action {
    double time;
    std::size_t subject;
    int state;
    int sign;  // +1 enter, -1 leave
  };
  std::vector<Action> actions;
  actions.reserve(cohort.size() * 3);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& h = cohort[i];
    int state = h.initial_state();
    double entered = 0.0;
    for (const auto& e : h.events()) {
      actions.push_back({entered, i, state, +1});
      actions.push_back({e.time, i, state, -1});
      state = e.to_state;
      entered = e.time;
    }
    const double end = std::min(h.censor_time(), h.horizon());
    actions.push_back({entered, i, state, +1});
    actions.push_back({end, i, state, -1});
  }
  std::stable_sort(actions.begin(), actions.end(),
                   [](const Action& a, const Action& b) { return a.time < b.time; });

  // aggregates per type over the current risk set of its source state
  std::vector<double> s0(static_cast<std::size_t>(ntypes), 0.0);
  std::vector<Eigen::VectorXd> s1(static_cast<std::size_t>(ntypes),
                                  Eigen::VectorXd::Zero(p));
  std::vector<Eigen::MatrixXd> s2(static_cast<std::size_t>(ntypes),
                                  Eigen::MatrixXd::Zero(p, p));
  // types grouped by source state
  std::vector<std::vector<int>> types_from(
      static_cast<std::size_t>(cohort.front().states().n_states()));
  for (int ty = 0; ty < ntypes; ++ty)
    types_from[static_cast<std::size_t>(pb.types[static_cast<std::size_t>(ty)].first)]
        .push_back(ty);

  Evaluation ev;
  ev.grad = Eigen::VectorXd::Zero(p);
  ev.hess = Eigen::MatrixXd::Zero(p, p);

  std::size_t ai = 0;
  for (const auto& rec : pb.events) {
    // membership at t: entered strictly before t, not yet left (leaves at >= t
    // stay in: an action at time u takes effect for event times > u)
    while (ai < actions.size() && actions[ai].time < rec.time) {
      const Action& act = actions[ai++];
      for (int ty : types_from[static_cast<std::size_t>(act.state)]) {
        const auto tyi = static_cast<std::size_t>(ty);
        const double wv = w[tyi][static_cast<Eigen::Index>(act.subject)];
        const Eigen::VectorXd z =
            pb.rows_by_type[tyi].row(static_cast<Eigen::Index>(act.subject));
        s0[tyi] += act.sign * wv;
        s1[tyi] += act.sign * wv * z;
        s2[tyi] += act.sign * wv * z * z.transpose();
      }
    }
    const auto tyi = static_cast<std::size_t>(type_index(pb, rec.type));
    require(s0[tyi] > 0.0, "JumpWithEmptyRiskSet", "event with empty risk set");
    const Eigen::VectorXd ze =
        pb.rows_by_type[tyi].row(static_cast<Eigen::Index>(rec.subject));
    ev.loglik += beta.dot(ze) - std::log(s0[tyi]);
    const Eigen::VectorXd zbar = s1[tyi] / s0[tyi];
    ev.grad += ze - zbar;
    ev.hess -= s2[tyi] / s0[tyi] - zbar * zbar.transpose();
    if (baselines) ev.breslow_jumps[rec.type].emplace_back(rec.time, 1.0 / s0[tyi]);
  }
  return ev;
}

Evaluation evaluate(const Problem& pb, const Eigen::VectorXd& beta, bool baselines) {
  return pb.time_fixed ? evaluate_sweep(pb, beta, baselines)
                       : evaluate_scan(pb, beta, baselines);
}

}  // namespace

Eigen::VectorXd CoxFit::standard_errors() const {
  Eigen::MatrixXd cov = information.ldlt().solve(
      Eigen::MatrixXd::Identity(information.rows(), information.cols()));
  return cov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

double cox_log_likelihood(const std::vector<EventHistory>& cohort, const CoxSpec& spec,
                          const Eigen::VectorXd& beta) {
  Problem pb = build_problem(cohort, spec);
  return evaluate(pb, beta, false).loglik;
}

Eigen::VectorXd cox_score(const std::vector<EventHistory>& cohort, const CoxSpec& spec,
                          const Eigen::VectorXd& beta) {
  Problem pb = build_problem(cohort, spec);
  return evaluate(pb, beta, false).grad;
}

CoxFit fit_cox(const std::vector<EventHistory>& cohort, const CoxSpec& spec) {
  require(spec.recipe.dim() > 0, "InvalidDesign", "empty design");
  Problem pb = build_problem(cohort, spec);
  const int p = spec.recipe.dim();
  const double score_scale = std::max(1.0, static_cast<double>(pb.events.size()));

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Evaluation ev = evaluate(pb, beta, false);
  int iter = 0;
  while (ev.grad.cwiseAbs().maxCoeff() > spec.tol * score_scale) {
    require(iter < spec.max_iter, "NoConvergence", "partial likelihood did not converge");
    ++iter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-ev.hess);
    require(ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all(),
            "SingularInformation", "information matrix is singular");
    Eigen::VectorXd step = ldlt.solve(ev.grad);
    // near the optimum the true ascent of a Newton step falls below the
    // rounding noise of the log likelihood; an ulp-scale slack keeps such
    // steps acceptable instead of stalling in the halving loop
    const double slack = 1e-12 * (1.0 + std::fabs(ev.loglik));
    double scale = 1.0;
    for (int half = 0;; ++half) {
      Eigen::VectorXd cand = beta + scale * step;
      Evaluation cand_ev = evaluate(pb, cand, false);
      if (cand_ev.loglik > ev.loglik - slack || half >= 30) {
        beta = cand;
        ev = std::move(cand_ev);
        break;
      }
      scale *= 0.5;
    }
    require(beta.cwiseAbs().maxCoeff() <= spec.beta_bound, "MonotoneLikelihood",
            "coefficients diverged; the partial likelihood has no interior maximum");
  }

  CoxFit fit;
  fit.recipe = spec.recipe;
  fit.beta = beta;
  fit.information = -ev.hess;
  fit.log_likelihood = ev.loglik;
  fit.n_events = static_cast<int>(pb.events.size());
  fit.iterations = iter;

  Evaluation with_base = evaluate(pb, beta, true);
  for (auto& [type, jumps] : with_base.breslow_jumps)
    fit.baseline.emplace(type, StepFunction::from_increments(0.0, std::move(jumps)));
  return fit;
}

CumulativeIntensityMatrix predict_cumulative_intensities(
    const CoxFit& fit, int n_states, const std::map<std::string, double>& profile) {
  CumulativeIntensityMatrix out;
  out.n_states = n_states;
  const CovariateFn z = fixed_covariates(profile);
  for (const auto& [type, base] : fit.baseline) {
    std::vector<std::pair<double, double>> jumps;
    jumps.reserve(base.n_jumps());
    for (double t : base.times()) {
      const Eigen::VectorXd x = fit.recipe.row(type, t, z);
      jumps.emplace_back(t, base.increment_at(t) * std::exp(fit.beta.dot(x)));
    }
    out.a.emplace(type, StepFunction::from_increments(0.0, std::move(jumps)));
  }
  return out;
}

}  // namespace msmcost
