#include "msmcost/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msmcost/errors.hpp"

namespace msmcost {

namespace {

// One subject's positive-weight rows, whitened by the working covariance and
// scaled by root weights.
struct SubjectBlock {
  Eigen::MatrixXd x;       // raw rows
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  Eigen::MatrixXd chol_l;  // lower Cholesky factor of the working covariance
};

Eigen::MatrixXd omega_matrix(const OmegaSpec& omega, Eigen::Index m) {
  require(omega.sigma_u2 > 0.0, "InvalidOmega", "record variance must be positive");
  require(omega.sigma_a2 >= 0.0, "InvalidOmega", "shared variance must be nonnegative");
  Eigen::MatrixXd o = Eigen::MatrixXd::Constant(m, m, omega.sigma_a2);
  o.diagonal().array() += omega.sigma_u2;
  return o;
}

std::vector<SubjectBlock> collect_blocks(const CostRegressionData& data,
                                         const std::vector<Eigen::VectorXd>& weights,
                                         const OmegaSpec& omega) {
  require(weights.size() == data.subjects.size(), "InvalidInput",
          "weights do not align with subjects");
  const int p = data.p();
  require(p > 0, "InvalidDesign", "empty design");

  std::vector<SubjectBlock> blocks(data.subjects.size());
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const SubjectRecords& s = data.subjects[i];
    require(weights[i].size() == s.y.size(), "InvalidInput",
            "weights do not align with records");
    require(s.x.rows() == s.y.size() && s.x.cols() == p, "InvalidInput",
            "subject " + s.subject_id + ": design block shape mismatch");

    std::vector<Eigen::Index> keep;
    for (Eigen::Index g = 0; g < s.y.size(); ++g)
      if (weights[i](g) > 0.0) keep.push_back(g);
    if (keep.empty()) continue;

    const Eigen::Index m = static_cast<Eigen::Index>(keep.size());
    SubjectBlock b;
    b.x.resize(m, p);
    b.y.resize(m);
    b.w.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      b.x.row(k) = s.x.row(keep[k]);
      b.y(k) = s.y(keep[k]);
      b.w(k) = weights[i](keep[k]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(omega_matrix(omega, m));
    require(llt.info() == Eigen::Success, "InvalidOmega",
            "working covariance is not positive definite");
    b.chol_l = llt.matrixL();
    blocks[i] = std::move(b);
  }
  return blocks;
}

// M v = L^-T W L^-1 v for the block's working covariance and weights.
Eigen::VectorXd apply_m(const SubjectBlock& b, const Eigen::VectorXd& v) {
  Eigen::VectorXd t = b.chol_l.triangularView<Eigen::Lower>().solve(v);
  t.array() *= b.w.array();
  return b.chol_l.transpose().triangularView<Eigen::Upper>().solve(t);
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs,
                          const char* code) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const double dmax = ldlt.vectorD().maxCoeff();
  require(ldlt.info() == Eigen::Success && dmax > 0.0 &&
              ldlt.vectorD().minCoeff() > dmax * 1e-12,
          code, "normal equations are numerically singular");
  return ldlt.solve(rhs);
}

Eigen::MatrixXd solve_spd_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& rhs,
                                 const char* code) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const double dmax = ldlt.vectorD().maxCoeff();
  require(ldlt.info() == Eigen::Success && dmax > 0.0 &&
              ldlt.vectorD().minCoeff() > dmax * 1e-12,
          code, "matrix is numerically singular");
  return ldlt.solve(rhs);
}

Eigen::VectorXd mean_of(LinkKind link, const Eigen::MatrixXd& x,
                        const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = x * beta;
  if (link == LinkKind::identity) return eta;
  return eta.array().exp();
}

// Score sum_i D' M (y - mu) and its expected derivative sum_i D' M D.
struct ScoreParts {
  Eigen::VectorXd score;
  Eigen::MatrixXd scale;
  bool finite = true;
};

ScoreParts score_parts(const std::vector<SubjectBlock>& blocks, LinkKind link,
                       const Eigen::VectorXd& beta) {
  const Eigen::Index p = beta.size();
  ScoreParts parts{Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p), true};
  for (const SubjectBlock& b : blocks) {
    if (b.y.size() == 0) continue;
    Eigen::VectorXd mu = mean_of(link, b.x, beta);
    if (!mu.allFinite()) {
      parts.finite = false;
      return parts;
    }
    Eigen::MatrixXd d = b.x;
    if (link == LinkKind::log) d.array().colwise() *= mu.array();
    Eigen::VectorXd r = apply_m(b, b.y - mu);
    parts.score += d.transpose() * r;
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      parts.scale.col(j) += d.transpose() * apply_m(b, d.col(j));
  }
  return parts;
}

// (y - mu)' M (y - mu) summed over subjects. The working matrix does not
// depend on beta, so the score above is exactly its half-gradient and
// scoring steps are Gauss-Newton steps for this objective; step control
// monitors it rather than the score norm, which is not monotone along the
// scoring direction.
double whitened_quadratic(const std::vector<SubjectBlock>& blocks, LinkKind link,
                          const Eigen::VectorXd& beta) {
  double q = 0.0;
  for (const SubjectBlock& b : blocks) {
    if (b.y.size() == 0) continue;
    Eigen::VectorXd mu = mean_of(link, b.x, beta);
    if (!mu.allFinite()) return std::numeric_limits<double>::infinity();
    Eigen::VectorXd t = b.chol_l.triangularView<Eigen::Lower>().solve(b.y - mu);
    q += (b.w.array() * t.array().square()).sum();
  }
  return q;
}

}  // namespace

std::vector<Eigen::VectorXd> ipc_weights(const CostRegressionData& data,
                                         const std::map<std::string, SurvivalFit>& g) {
  std::vector<Eigen::VectorXd> weights;
  weights.reserve(data.subjects.size());
  for (const SubjectRecords& s : data.subjects) {
    auto it = g.find(s.censor_stratum);
    require(it != g.end(), "UnknownStratum",
            "subject " + s.subject_id + ": no censoring fit for stratum '" +
                s.censor_stratum + "'");
    require(static_cast<std::size_t>(s.y.size()) == s.anchor_time.size() &&
                s.anchor_time.size() == s.observed.size(),
            "InvalidInput", "subject " + s.subject_id + ": ragged record metadata");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(s.y.size());
    for (Eigen::Index k = 0; k < s.y.size(); ++k) {
      if (!s.observed[k]) continue;
      const double gv = it->second.left(s.anchor_time[k]);
      require(gv > 0.0, "ZeroCensoringSurvival",
              "subject " + s.subject_id +
                  ": observed record beyond the support of the censoring fit");
      w(k) = 1.0 / gv;
    }
    weights.push_back(std::move(w));
  }
  return weights;
}

GeeFit fit_weighted_gee(const CostRegressionData& data,
                        const std::vector<Eigen::VectorXd>& weights,
                        const OmegaSpec& omega, LinkKind link, double rel_tol,
                        int max_iter) {
  std::vector<SubjectBlock> blocks = collect_blocks(data, weights, omega);

  GeeFit fit;
  fit.link = link;
  fit.omega = omega;
  for (const SubjectBlock& b : blocks)
    if (b.y.size() > 0) {
      ++fit.n_subjects_used;
      fit.n_rows_used += b.y.size();
    }
  require(fit.n_rows_used > 0, "EmptySample", "no records with positive weight");

  const int p = data.p();
  if (link == LinkKind::identity) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (const SubjectBlock& b : blocks) {
      if (b.y.size() == 0) continue;
      for (Eigen::Index j = 0; j < p; ++j)
        gram.col(j) += b.x.transpose() * apply_m(b, b.x.col(j));
      rhs += b.x.transpose() * apply_m(b, b.y);
    }
    fit.beta = solve_spd(gram, rhs, "SingularDesign");
    return fit;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double q = whitened_quadratic(blocks, link, beta);
  require(std::isfinite(q), "InvalidInput", "nonfinite mean at the starting point");
  for (int it = 1; it <= max_iter; ++it) {
    ScoreParts parts = score_parts(blocks, link, beta);
    Eigen::VectorXd step = solve_spd(parts.scale, parts.score, "SingularWorkingMatrix");
    fit.iterations = it;

    // The undamped step shrinks quadratically near the solution, so its size
    // is a sound convergence measure; a damped step is not.
    if (step.cwiseAbs().maxCoeff() <= rel_tol * std::max(1.0, beta.cwiseAbs().maxCoeff())) {
      double q_full = whitened_quadratic(blocks, link, beta + step);
      if (q_full <= q) beta += step;
      fit.beta = beta;
      return fit;
    }

    double lambda = 1.0;
    bool moved = false;
    for (int half = 0; half <= 30; ++half) {
      Eigen::VectorXd cand = beta + lambda * step;
      const double qc = whitened_quadratic(blocks, link, cand);
      if (qc <= q) {
        beta = cand;
        q = qc;
        moved = true;
        break;
      }
      lambda *= 0.5;
    }
    require(moved, "NoConvergence", "step search could not reduce the objective");
  }
  fail("NoConvergence", "estimating equations did not settle");
}

GeeFit fit_weighted_gls(const CostRegressionData& data,
                        const std::vector<Eigen::VectorXd>& weights,
                        const OmegaSpec& omega) {
  return fit_weighted_gee(data, weights, omega, LinkKind::identity);
}

double gee_mean(const GeeFit& fit, const Eigen::VectorXd& row) {
  require(row.size() == fit.beta.size(), "DimensionMismatch",
          "design row does not match the fitted coefficients");
  const double eta = row.dot(fit.beta);
  return fit.link == LinkKind::identity ? eta : std::exp(eta);
}

VarianceComponents estimate_variance_components(
    const CostRegressionData& data, const std::vector<Eigen::VectorXd>& weights,
    const GeeFit& stage_one) {
  require(weights.size() == data.subjects.size(), "InvalidInput",
          "weights do not align with subjects");

  double sq_num = 0.0, sq_den = 0.0, pair_num = 0.0, pair_den = 0.0;
  VarianceComponents vc;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const SubjectRecords& s = data.subjects[i];
    std::vector<Eigen::Index> keep;
    for (Eigen::Index g = 0; g < s.y.size(); ++g)
      if (weights[i](g) > 0.0) keep.push_back(g);
    if (keep.empty()) continue;

    std::vector<double> resid(keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const Eigen::Index g = keep[k];
      resid[k] = s.y(g) - gee_mean(stage_one, s.x.row(g).transpose());
      sq_num += weights[i](g) * resid[k] * resid[k];
      sq_den += weights[i](g);
    }
    for (std::size_t a = 0; a < keep.size(); ++a)
      for (std::size_t b = a + 1; b < keep.size(); ++b) {
        // the later record's weight is the pair's joint inverse probability
        const bool b_later = s.anchor_time[keep[b]] >= s.anchor_time[keep[a]];
        const double wp = weights[i](keep[b_later ? b : a]);
        pair_num += wp * resid[a] * resid[b];
        pair_den += wp;
        ++vc.n_pairs;
      }
  }
  require(sq_den > 0.0, "EmptySample", "no records with positive weight");

  const double total = sq_num / sq_den;
  if (pair_den == 0.0) {
    vc.insufficient_pairs = true;
    vc.sigma_a2 = 0.0;
  } else {
    vc.sigma_a2 = std::max(0.0, pair_num / pair_den);
  }
  vc.sigma_u2 = std::max(total - vc.sigma_a2, 1e-8 * std::max(total, 1.0));
  return vc;
}

Eigen::MatrixXd sandwich_variance(const CostRegressionData& data,
                                  const std::vector<Eigen::VectorXd>& weights,
                                  const GeeFit& fit) {
  std::vector<SubjectBlock> blocks = collect_blocks(data, weights, fit.omega);
  const Eigen::Index p = fit.beta.size();
  require(p == data.p(), "DimensionMismatch", "fit does not match the design");

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(p, p);
  double n = 0.0;
  for (const SubjectBlock& blk : blocks) {
    if (blk.y.size() == 0) continue;
    n += 1.0;
    Eigen::VectorXd mu = mean_of(fit.link, blk.x, fit.beta);
    Eigen::MatrixXd d = blk.x;
    if (fit.link == LinkKind::log) d.array().colwise() *= mu.array();
    Eigen::VectorXd r = apply_m(blk, blk.y - mu);

    Eigen::VectorXd u = d.transpose() * r;
    b += u * u.transpose();
    for (Eigen::Index j = 0; j < p; ++j) a.col(j) += d.transpose() * apply_m(blk, d.col(j));
    if (fit.link == LinkKind::log) {
      // curvature of the mean: minus d score / d beta picks up mu r terms
      Eigen::VectorXd mr = mu.array() * r.array();
      a -= blk.x.transpose() * mr.asDiagonal() * blk.x;
    }
  }
  require(n > 0.0, "EmptySample", "no subjects with positive weight");

  a /= n;
  b /= n;
  Eigen::MatrixXd ainv_b = solve_spd_matrix(a, b, "SingularDesign");
  return solve_spd_matrix(a, ainv_b.transpose(), "SingularDesign").transpose() / n;
}

Eigen::VectorXd ReFit::standard_errors() const {
  return sandwich.diagonal().cwiseMax(0.0).cwiseSqrt();
}

ReFit fit_re_cost_model(const CostRegressionData& data,
                        const std::map<std::string, SurvivalFit>& g, LinkKind link) {
  const std::vector<Eigen::VectorXd> w = ipc_weights(data, g);

  GeeFit stage_one = fit_weighted_gee(data, w, OmegaSpec{1.0, 0.0}, link);
  VarianceComponents vc = estimate_variance_components(data, w, stage_one);
  GeeFit stage_two = fit_weighted_gee(data, w, OmegaSpec{vc.sigma_u2, vc.sigma_a2}, link);

  ReFit fit;
  fit.beta = stage_two.beta;
  fit.sandwich = sandwich_variance(data, w, stage_two);
  fit.recipe = data.recipe;
  fit.link = link;
  fit.sigma_u2 = vc.sigma_u2;
  fit.sigma_a2 = vc.sigma_a2;
  fit.insufficient_pairs = vc.insufficient_pairs;
  fit.n_subjects_used = stage_two.n_subjects_used;
  return fit;
}

CostRegressionData transition_cost_records(const std::vector<EventHistory>& cohort,
                                           const DesignRecipe& recipe, double tau,
                                           const std::string& strata_covariate) {
  require(tau > 0.0, "InvalidHorizon", "horizon must be positive");
  CostRegressionData data;
  data.recipe = recipe;
  const int p = recipe.dim();
  for (const EventHistory& h : cohort) {
    SubjectRecords s;
    s.subject_id = h.subject_id();
    if (!strata_covariate.empty())
      s.censor_stratum = stratum_key(h.covariate(strata_covariate, 0.0));
    std::vector<double> ys;
    std::vector<Eigen::VectorXd> rows;
    const CovariateFn z = covariates_of(h);
    for (const TransitionEvent& e : h.events()) {
      if (e.time > tau) continue;
      ys.push_back(e.cost);
      rows.push_back(recipe.row({e.from_state, e.to_state}, e.time, z));
      s.anchor_time.push_back(e.time);
      s.observed.push_back(1);
    }
    s.y.resize(static_cast<Eigen::Index>(ys.size()));
    s.x.resize(static_cast<Eigen::Index>(ys.size()), p);
    for (std::size_t k = 0; k < ys.size(); ++k) {
      s.y(static_cast<Eigen::Index>(k)) = ys[k];
      s.x.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

CostRegressionData lifetime_cost_records(const std::vector<SubjectCost>& subjects,
                                         const DesignRecipe& recipe, double tau,
                                         WeightConvention convention,
                                         const std::string& strata_covariate) {
  require(tau > 0.0 && std::isfinite(tau), "InvalidHorizon", "horizon must be positive");
  CostRegressionData data;
  data.recipe = recipe;
  for (const SubjectCost& sc : subjects) {
    require(sc.event_time > 0.0, "InvalidInput",
            "subject " + sc.subject_id + ": event time must be positive");
    require(sc.censor_time >= 0.0, "InvalidInput",
            "subject " + sc.subject_id + ": negative censor time");

    SubjectRecords s;
    s.subject_id = sc.subject_id;
    if (!strata_covariate.empty()) {
      auto it = sc.covariates.find(strata_covariate);
      require(it != sc.covariates.end(), "UnknownCovariate",
              "subject " + sc.subject_id + ": no covariate '" + strata_covariate + "'");
      s.censor_stratum = stratum_key(it->second);
    }

    bool observed;
    double anchor;
    if (convention == WeightConvention::transition_time) {
      observed = sc.event_time <= std::min(sc.censor_time, tau);
      anchor = observed ? sc.event_time : std::min({sc.event_time, sc.censor_time, tau});
    } else {
      const double endpoint = std::min(sc.event_time, tau);
      observed = sc.censor_time >= endpoint;
      anchor = endpoint;
    }

    s.y = Eigen::VectorXd::Constant(1, sc.discounted_cost);
    s.x.resize(1, recipe.dim());
    s.x.row(0) = recipe.row_plain(0.0, fixed_covariates(sc.covariates)).transpose();
    s.anchor_time.push_back(anchor);
    s.observed.push_back(observed ? 1 : 0);
    data.subjects.push_back(std::move(s));
  }
  return data;
}

}  // namespace msmcost
