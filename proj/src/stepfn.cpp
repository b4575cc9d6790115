#include "msmcost/stepfn.hpp"

#include <algorithm>
#include <cmath>

#include "msmcost/errors.hpp"

namespace msmcost {

StepFunction::StepFunction(double initial, std::vector<double> times,
                           std::vector<double> values)
    : initial_(initial), times_(std::move(times)), values_(std::move(values)) {
  require(times_.size() == values_.size(), "InvalidStepFunction",
          "jump times and values differ in length");
  for (std::size_t k = 0; k + 1 < times_.size(); ++k)
    require(times_[k] < times_[k + 1], "InvalidStepFunction",
            "jump times must be strictly increasing");
  for (double t : times_)
    require(std::isfinite(t), "InvalidStepFunction", "non-finite jump time");
  deltas_.resize(times_.size());
  for (std::size_t k = 0; k < times_.size(); ++k)
    deltas_[k] = values_[k] - (k == 0 ? initial_ : values_[k - 1]);
}

StepFunction StepFunction::from_increments(
    double initial, std::vector<std::pair<double, double>> increments) {
  std::sort(increments.begin(), increments.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> times, values, deltas;
  times.reserve(increments.size());
  values.reserve(increments.size());
  double level = initial;
  for (std::size_t k = 0; k < increments.size();) {
    const double t = increments[k].first;
    double delta = 0.0;
    while (k < increments.size() && increments[k].first == t) delta += increments[k++].second;
    if (delta == 0.0) continue;
    level += delta;
    times.push_back(t);
    values.push_back(level);
    deltas.push_back(delta);
  }
  StepFunction f(initial, std::move(times), std::move(values));
  f.deltas_ = std::move(deltas);
  return f;
}

double StepFunction::operator()(double t) const {
  // index of the last jump time <= t
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return initial_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::left_limit(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return initial_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::increment_at(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.end() || *it != t) return 0.0;
  return deltas_[static_cast<std::size_t>(it - times_.begin())];
}

bool StepFunction::is_nondecreasing() const {
  double prev = initial_;
  for (double v : values_) {
    if (v < prev) return false;
    prev = v;
  }
  return true;
}

double stieltjes_integral(const std::function<double(double)>& g, const StepFunction& f,
                          double a, double b) {
  require(a <= b, "InvalidWindow", "integration window has a > b");
  const auto& times = f.times();
  auto it = std::upper_bound(times.begin(), times.end(), a);
  double sum = 0.0;
  for (; it != times.end() && *it <= b; ++it) sum += g(*it) * f.increment_at(*it);
  return sum;
}

namespace {

// integral of exp(-r t) over (lo, hi]
double discount_mass(double r, double lo, double hi) {
  if (hi <= lo) return 0.0;
  if (r == 0.0) return hi - lo;
  return (std::exp(-r * lo) - std::exp(-r * hi)) / r;
}

}  // namespace

double discounted_lebesgue_integral(const StepFunction& f, double r, double a, double b) {
  require(a <= b, "InvalidWindow", "integration window has a > b");
  if (a == b) return 0.0;
  const auto& times = f.times();
  double sum = 0.0;
  double lo = a;
  auto it = std::upper_bound(times.begin(), times.end(), a);
  for (; it != times.end() && *it < b; ++it) {
    sum += f(lo) * discount_mass(r, lo, *it);
    lo = *it;
  }
  sum += f(lo) * discount_mass(r, lo, b);
  return sum;
}

StepFunction pointwise_product(const StepFunction& f, const StepFunction& g) {
  std::vector<double> merged;
  merged.reserve(f.times().size() + g.times().size());
  std::merge(f.times().begin(), f.times().end(), g.times().begin(), g.times().end(),
             std::back_inserter(merged));
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  std::vector<double> values;
  values.reserve(merged.size());
  for (double t : merged) values.push_back(f(t) * g(t));
  return StepFunction(f.initial_value() * g.initial_value(), std::move(merged),
                      std::move(values));
}

}  // namespace msmcost
