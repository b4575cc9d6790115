#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msmcost/event_history.hpp"

namespace msmcost {

// Looks up a covariate value at time t. Subject-backed sources evaluate step
// covariates at left limits; profile-backed sources return fixed values.
using CovariateFn = std::function<double(const std::string& name, double t)>;

CovariateFn covariates_of(const EventHistory& h);
CovariateFn fixed_covariates(const std::map<std::string, double>& values);

enum class BasisKind { one, time, time_sq, covariate };

// One column of a design row: a basis (constant, t, t^2, or a covariate),
// optionally multiplied by another covariate, optionally restricted to a
// single transition type (yielding 0 for all others).
struct DesignTerm {
  std::optional<TransitionKey> filter;
  BasisKind basis = BasisKind::one;
  std::string covariate;  // used when basis == covariate
  std::string interact;   // optional multiplier covariate, "" for none
};

struct DesignRecipe {
  std::vector<DesignTerm> terms;

  int dim() const { return static_cast<int>(terms.size()); }
  bool has_time_basis() const;
  // Covariate names referenced by any term.
  std::vector<std::string> covariate_names() const;
  Eigen::VectorXd row(TransitionKey hj, double t, const CovariateFn& z) const;
  // Row for designs that are not transition-specific (no filters allowed).
  Eigen::VectorXd row_plain(double t, const CovariateFn& z) const;
};

}  // namespace msmcost
