#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "msmcost/event_history.hpp"
#include "msmcost/stepfn.hpp"

namespace msmcost {

// Cumulative transition intensities: one nondecreasing step function per
// ordered transition type, starting at 0.
struct CumulativeIntensityMatrix {
  int n_states = 0;
  std::map<TransitionKey, StepFunction> a;

  std::vector<double> jump_times() const;  // sorted union over types
};

// Increment estimator: each jump of the h->j counting process contributes
// (number of h->j events at t) / (subjects in h at risk at t).
// JumpWithEmptyRiskSet if a jump occurs with an empty risk set.
CumulativeIntensityMatrix nelson_aalen(const CountingProcesses& cp);

// Path of transition probability matrices P(0, t), built as the ordered
// product of (I + dA(u)) factors over jump times u <= t. Constant between
// jumps; at_left(t) excludes the factor at t.
class TransitionPath {
 public:
  TransitionPath(int n_states, std::vector<double> factor_times,
                 std::vector<Eigen::MatrixXd> prefix_products);

  int n_states() const { return n_states_; }
  const std::vector<double>& factor_times() const { return times_; }

  Eigen::MatrixXd at(double t) const;
  Eigen::MatrixXd at_left(double t) const;
  double prob(int i, int h, double t) const;       // P_ih(0, t)
  double prob_left(int i, int h, double t) const;  // P_ih(0, t-)

  // P_ih(0, .) as a right-continuous step function; its left limits give
  // P_ih(0, t-).
  StepFunction occupancy(int i, int h) const;
  // 1 - sum of absorbing-state occupancies, i.e. P(still transient | start i).
  StepFunction transient_survival(int i, const StateSpace& states) const;

 private:
  int n_states_ = 0;
  std::vector<double> times_;
  std::vector<Eigen::MatrixXd> prefix_;
};

// Product-integral of the empirical increments. Each factor row must stay a
// probability row: InvalidFactor when 1 - sum of off-diagonal increments from
// a state goes negative.
TransitionPath aalen_johansen(const CumulativeIntensityMatrix& A);

// Product-integral for known piecewise-constant intensity rates (one rate
// step function per transition type), used by the simulation oracle. Solves
// the forward system with fine-grid second-order factors, halving the step
// until successive refinements agree below tol in max norm at the requested
// times. NoConvergence if the cap on refinements is hit.
struct ParametricPathResult {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> matrices;  // P(0, times[k])
  double attained_tolerance = 0.0;
  long steps_used = 0;
};
ParametricPathResult product_integral_parametric(
    const std::map<TransitionKey, StepFunction>& rates, int n_states, double tau,
    std::vector<double> eval_times, double tol = 1e-8, int max_doublings = 24);

}  // namespace msmcost
