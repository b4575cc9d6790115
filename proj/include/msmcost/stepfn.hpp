#pragma once

#include <functional>
#include <vector>

namespace msmcost {

// Right-continuous piecewise-constant function on [0, inf) with finitely many
// jumps: f(t) = value attached to the last jump time <= t, or the initial
// value when t precedes every jump. Jump times are strictly increasing.
//
// At-risk processes are left-continuous; they are stored here as the
// right-continuous carrier whose left limit gives the at-risk count, so every
// consumer evaluates them through left_limit().
class StepFunction {
 public:
  StepFunction() = default;
  explicit StepFunction(double initial) : initial_(initial) {}
  StepFunction(double initial, std::vector<double> times, std::vector<double> values);

  static StepFunction constant(double value) { return StepFunction(value); }
  // Builds the cumulative function initial + sum of increments at the given
  // times. Times may repeat or arrive unsorted; equal times are merged.
  static StepFunction from_increments(double initial,
                                      std::vector<std::pair<double, double>> increments);

  double operator()(double t) const;   // f(t), right-continuous
  double left_limit(double t) const;   // f(t-)
  // f(t) - f(t-), 0 off the jump set. For functions built via from_increments
  // this returns the accumulated raw increment, not a difference of partial
  // sums, so counting-measure masses are recovered without rounding.
  double increment_at(double t) const;

  double initial_value() const { return initial_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t n_jumps() const { return times_.size(); }

  bool is_nondecreasing() const;

 private:
  double initial_ = 0.0;
  std::vector<double> times_;
  std::vector<double> values_;
  std::vector<double> deltas_;  // exact jump sizes, parallel to times_
};

// Sum over jump times u of f in the window (a, b] of g(u) * (f(u) - f(u-)).
double stieltjes_integral(const std::function<double(double)>& g, const StepFunction& f,
                          double a, double b);

// Exact integral of exp(-r t) f(t) dt over (a, b], summing the closed-form
// exponential primitive over the constancy intervals of f. r = 0 falls back
// to plain interval lengths; no quadrature error either way.
double discounted_lebesgue_integral(const StepFunction& f, double r, double a, double b);

// Pointwise product; jump set is the union of the operands' jump sets.
StepFunction pointwise_product(const StepFunction& f, const StepFunction& g);

}  // namespace msmcost
