#include "msmcost/design.hpp"

#include "doctest.h"
#include "msmcost/errors.hpp"
#include "test_cohorts.hpp"

using msmcost::BasisKind;
using msmcost::DesignRecipe;
using msmcost::DesignTerm;

TEST_CASE("design rows assemble bases, interactions and filters") {
  DesignRecipe recipe;
  recipe.terms.push_back({std::nullopt, BasisKind::one, "", ""});
  recipe.terms.push_back({std::nullopt, BasisKind::time, "", ""});
  recipe.terms.push_back({std::nullopt, BasisKind::covariate, "z", ""});
  recipe.terms.push_back({std::nullopt, BasisKind::time, "", "z"});
  recipe.terms.push_back({msmcost::TransitionKey{0, 2}, BasisKind::one, "", ""});

  CHECK(recipe.dim() == 5);
  CHECK(recipe.has_time_basis());
  CHECK(recipe.covariate_names() == std::vector<std::string>{"z"});

  auto z = msmcost::fixed_covariates({{"z", 2.0}});
  Eigen::VectorXd row = recipe.row({0, 1}, 3.0, z);
  CHECK(row(0) == 1.0);
  CHECK(row(1) == 3.0);
  CHECK(row(2) == 2.0);
  CHECK(row(3) == 6.0);
  CHECK(row(4) == 0.0);  // filtered to 0 -> 2

  Eigen::VectorXd row02 = recipe.row({0, 2}, 3.0, z);
  CHECK(row02(4) == 1.0);
}

TEST_CASE("plain rows refuse transition-filtered terms") {
  DesignRecipe recipe;
  recipe.terms.push_back({msmcost::TransitionKey{0, 1}, BasisKind::one, "", ""});
  auto z = msmcost::fixed_covariates({});
  CHECK_THROWS_AS(recipe.row_plain(1.0, z), msmcost::Error);

  DesignRecipe plain;
  plain.terms.push_back({std::nullopt, BasisKind::time_sq, "", ""});
  CHECK(plain.row_plain(3.0, z)(0) == 9.0);
}

TEST_CASE("fixed covariate lookups reject unknown names") {
  auto z = msmcost::fixed_covariates({{"z", 1.0}});
  CHECK(z("z", 5.0) == 1.0);
  CHECK_THROWS_AS(z("w", 5.0), msmcost::Error);
}
