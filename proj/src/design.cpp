#include "msmcost/design.hpp"

#include <algorithm>

#include "msmcost/errors.hpp"

namespace msmcost {

CovariateFn covariates_of(const EventHistory& h) {
  return [&h](const std::string& name, double t) { return h.covariate(name, t); };
}

CovariateFn fixed_covariates(const std::map<std::string, double>& values) {
  return [values](const std::string& name, double) {
    auto it = values.find(name);
    require(it != values.end(), "UnknownCovariate", "profile has no covariate '" + name + "'");
    return it->second;
  };
}

bool DesignRecipe::has_time_basis() const {
  return std::any_of(terms.begin(), terms.end(), [](const DesignTerm& t) {
    return t.basis == BasisKind::time || t.basis == BasisKind::time_sq;
  });
}

std::vector<std::string> DesignRecipe::covariate_names() const {
  std::vector<std::string> names;
  for (const auto& t : terms) {
    if (t.basis == BasisKind::covariate) names.push_back(t.covariate);
    if (!t.interact.empty()) names.push_back(t.interact);
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

Eigen::VectorXd DesignRecipe::row(TransitionKey hj, double t, const CovariateFn& z) const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
  for (int k = 0; k < dim(); ++k) {
    const DesignTerm& term = terms[static_cast<std::size_t>(k)];
    if (term.filter && *term.filter != hj) continue;
    double v = 0.0;
    switch (term.basis) {
      case BasisKind::one: v = 1.0; break;
      case BasisKind::time: v = t; break;
      case BasisKind::time_sq: v = t * t; break;
      case BasisKind::covariate: v = z(term.covariate, t); break;
    }
    if (!term.interact.empty()) v *= z(term.interact, t);
    x[k] = v;
  }
  return x;
}

Eigen::VectorXd DesignRecipe::row_plain(double t, const CovariateFn& z) const {
  for (const auto& term : terms)
    require(!term.filter, "InvalidDesign",
            "transition-filtered term in a transition-free design");
  return row({0, 0}, t, z);
}

}  // namespace msmcost
