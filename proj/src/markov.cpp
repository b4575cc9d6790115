#include "msmcost/markov.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "msmcost/errors.hpp"

namespace msmcost {

namespace {

// Ordered accumulation keeps the two-state path bitwise equal to the
// product-limit curve (the absorbing column contributes exact zeros).
Eigen::MatrixXd multiply_ordered(const Eigen::MatrixXd& p, const Eigen::MatrixXd& f) {
  const Eigen::Index m = p.rows();
  Eigen::MatrixXd out(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < m; ++k) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) sum += p(i, j) * f(j, k);
      out(i, k) = sum;
    }
  return out;
}

}  // namespace

std::vector<double> CumulativeIntensityMatrix::jump_times() const {
  std::set<double> all;
  for (const auto& [key, fn] : a) all.insert(fn.times().begin(), fn.times().end());
  return {all.begin(), all.end()};
}

CumulativeIntensityMatrix nelson_aalen(const CountingProcesses& cp) {
  CumulativeIntensityMatrix out;
  out.n_states = cp.states().n_states();
  for (const auto& [key, n_hj] : cp.counts()) {
    std::vector<std::pair<double, double>> jumps;
    jumps.reserve(n_hj.times().size());
    for (double t : n_hj.times()) {
      const double y = cp.at_risk(key.first, t);
      require(y > 0.0, "JumpWithEmptyRiskSet",
              "transition " + cp.states().label(key.first) + " -> " +
                  cp.states().label(key.second) + " at t with empty risk set");
      jumps.emplace_back(t, n_hj.increment_at(t) / y);
    }
    out.a.emplace(key, StepFunction::from_increments(0.0, std::move(jumps)));
  }
  return out;
}

TransitionPath::TransitionPath(int n_states, std::vector<double> factor_times,
                               std::vector<Eigen::MatrixXd> prefix_products)
    : n_states_(n_states), times_(std::move(factor_times)), prefix_(std::move(prefix_products)) {
  require(times_.size() == prefix_.size(), "InvalidPath",
          "factor times and matrices differ in length");
}

Eigen::MatrixXd TransitionPath::at(double t) const {
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return Eigen::MatrixXd::Identity(n_states_, n_states_);
  return prefix_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

Eigen::MatrixXd TransitionPath::at_left(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return Eigen::MatrixXd::Identity(n_states_, n_states_);
  return prefix_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double TransitionPath::prob(int i, int h, double t) const { return at(t)(i, h); }

double TransitionPath::prob_left(int i, int h, double t) const { return at_left(t)(i, h); }

StepFunction TransitionPath::occupancy(int i, int h) const {
  std::vector<double> values;
  values.reserve(prefix_.size());
  for (const auto& p : prefix_) values.push_back(p(i, h));
  return StepFunction(i == h ? 1.0 : 0.0, times_, std::move(values));
}

StepFunction TransitionPath::transient_survival(int i, const StateSpace& states) const {
  std::vector<double> values;
  values.reserve(prefix_.size());
  for (const auto& p : prefix_) {
    double absorbed = 0.0;
    for (int h = 0; h < n_states_; ++h)
      if (states.is_absorbing(h)) absorbed += p(i, h);
    values.push_back(1.0 - absorbed);
  }
  double init = states.is_absorbing(i) ? 0.0 : 1.0;
  return StepFunction(init, times_, std::move(values));
}

TransitionPath aalen_johansen(const CumulativeIntensityMatrix& A) {
  const int m = A.n_states;
  require(m > 0, "InvalidInput", "empty intensity matrix");
  const std::vector<double> times = A.jump_times();

  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(m, m);
  std::vector<Eigen::MatrixXd> prefix;
  prefix.reserve(times.size());
  for (double t : times) {
    Eigen::MatrixXd factor = Eigen::MatrixXd::Identity(m, m);
    for (const auto& [key, fn] : A.a) {
      const double delta = fn.increment_at(t);
      if (delta == 0.0) continue;
      require(delta > 0.0, "InvalidFactor", "negative intensity increment");
      factor(key.first, key.second) += delta;
      factor(key.first, key.first) -= delta;
    }
    for (int h = 0; h < m; ++h)
      require(factor(h, h) >= 0.0, "InvalidFactor",
              "transition increments out of a state exceed 1 at a jump time");
    p = multiply_ordered(p, factor);
    prefix.push_back(p);
  }
  return TransitionPath(m, times, std::move(prefix));
}

ParametricPathResult product_integral_parametric(
    const std::map<TransitionKey, StepFunction>& rates, int n_states, double tau,
    std::vector<double> eval_times, double tol, int max_doublings) {
  require(n_states > 0, "InvalidInput", "empty state space");
  require(tau > 0.0 && std::isfinite(tau), "InvalidHorizon", "horizon must be positive");
  for (const auto& [key, fn] : rates) {
    require(key.first >= 0 && key.first < n_states && key.second >= 0 &&
                key.second < n_states && key.first != key.second,
            "InvalidIntensity", "rate for an invalid transition");
    require(fn.initial_value() >= 0.0, "InvalidIntensity", "negative rate");
    for (double v : fn.values())
      require(v >= 0.0, "InvalidIntensity", "negative rate");
  }

  std::sort(eval_times.begin(), eval_times.end());
  eval_times.erase(std::unique(eval_times.begin(), eval_times.end()), eval_times.end());
  for (double t : eval_times)
    require(t >= 0.0 && t <= tau, "InvalidInput", "evaluation time outside [0, horizon]");

  // segment boundaries: rate breakpoints and evaluation times within (0, tau)
  std::set<double> bset{0.0, tau};
  for (const auto& [key, fn] : rates)
    for (double t : fn.times())
      if (t > 0.0 && t < tau) bset.insert(t);
  for (double t : eval_times)
    if (t > 0.0 && t < tau) bset.insert(t);
  const std::vector<double> bounds(bset.begin(), bset.end());

  const auto run = [&](int k) {
    // 2^k uniform steps per segment; the segment product (I + Q dt)^(2^k) is
    // evaluated by k squarings, which is the same fine-grid product evaluated
    // in a different association order.
    std::vector<Eigen::MatrixXd> at_bounds;
    at_bounds.reserve(bounds.size());
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n_states, n_states);
    at_bounds.push_back(p);
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
      const double lo = bounds[s], hi = bounds[s + 1];
      const double mid = 0.5 * (lo + hi);
      Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n_states, n_states);
      for (const auto& [key, fn] : rates) {
        const double rate = fn(mid);
        q(key.first, key.second) += rate;
        q(key.first, key.first) -= rate;
      }
      const double dt = (hi - lo) / std::ldexp(1.0, k);
      // second-order one-step factor: the first-order I + Q dt needs ~2^25
      // steps for 1e-8 and runs into the 2^k eps rounding floor first
      Eigen::MatrixXd f = Eigen::MatrixXd::Identity(n_states, n_states) + dt * q +
                          (0.5 * dt * dt) * (q * q).eval();
      for (int sq = 0; sq < k; ++sq) f = (f * f).eval();
      p = (p * f).eval();
      at_bounds.push_back(p);
    }
    return at_bounds;
  };

  const int k0 = 8;
  std::vector<Eigen::MatrixXd> prev = run(k0);
  ParametricPathResult result;
  for (int k = k0 + 1; k <= max_doublings; ++k) {
    std::vector<Eigen::MatrixXd> cur = run(k);
    double diff = 0.0;
    for (std::size_t s = 0; s < cur.size(); ++s)
      diff = std::max(diff, (cur[s] - prev[s]).cwiseAbs().maxCoeff());
    if (diff < tol) {
      result.attained_tolerance = diff;
      result.steps_used = static_cast<long>(bounds.size() - 1) * (1L << std::min(k, 40));
      result.times = eval_times;
      result.matrices.reserve(eval_times.size());
      for (double t : eval_times) {
        auto it = std::lower_bound(bounds.begin(), bounds.end(), t);
        result.matrices.push_back(cur[static_cast<std::size_t>(it - bounds.begin())]);
      }
      return result;
    }
    prev = std::move(cur);
  }
  fail("NoConvergence", "product integral did not settle below tolerance");
}

}  // namespace msmcost
