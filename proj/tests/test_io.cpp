#include "msmcost/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "msmcost/errors.hpp"
#include "test_cohorts.hpp"

using msmcost::CensoringLaw;
using msmcost::CovariateLaw;
using msmcost::ScenarioSpec;
using msmcost::StepFunction;
using testing::kInf;

namespace {

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const msmcost::Error& e) {
    return e.code();
  }
  return "";
}

// per-process scratch directory for file fixtures
std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::path("io_fixtures");
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string put(const std::string& name, const std::string& content) {
  const std::string path = scratch(name);
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

std::string put_states(const std::string& name) {
  return put(name,
             R"({"states": [{"label": "well", "absorbing": false},
                            {"label": "ill", "absorbing": false},
                            {"label": "dead", "absorbing": true}]})");
}

ScenarioSpec demo_scenario() {
  ScenarioSpec spec;
  spec.states = testing::illness_death();
  spec.covariates.push_back({"age", CovariateLaw::Kind::normal, 60.0, 8.0});
  spec.covariates.push_back({"trt", CovariateLaw::Kind::bernoulli, 0.5, 0.0});
  spec.intensities.push_back({{0, 1}, StepFunction(0.3, {1.0}, {0.5}), {{"trt", -0.4}}});
  spec.intensities.push_back({{0, 2}, StepFunction::constant(0.1), {}});
  spec.intensities.push_back({{1, 2}, StepFunction::constant(0.6), {{"age", 0.01}}});
  spec.transition_costs.push_back({{0, 2}, 200.0, 1.5, {{"trt", -20.0}}, 0.3});
  spec.transition_costs.push_back({{1, 2}, 250.0, 0.0, {}, 0.0});
  spec.sojourn_rates.push_back({0, StepFunction::constant(4.0)});
  spec.sojourn_rates.push_back({1, StepFunction(7.0, {2.0}, {9.0})});
  spec.sojourn_effect_sd = 0.5;
  spec.censoring = {CensoringLaw::Kind::uniform, 0.5, 6.0, 0.0, {}, {}};
  spec.discount_rate = 0.03;
  spec.horizon = 4.0;
  spec.grid = {0.0, 1.0, 2.0, 4.0};
  spec.n_subjects = 25;
  spec.seed = 2024;
  return spec;
}

}  // namespace

TEST_CASE("delimited reader handles quoting and reports ragged rows") {
  const std::string path =
      put("quoting.csv", "id,note,x\r\n\"a,1\",\"say \"\"hi\"\"\",3\nplain,\"two\nlines\",4\n");
  auto table = msmcost::read_csv_file(path);
  CHECK(table.header == std::vector<std::string>{"id", "note", "x"});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0][0] == "a,1");
  CHECK(table.rows[0][1] == "say \"hi\"");
  CHECK(table.rows[1][1] == "two\nlines");
  CHECK(table.line == std::vector<long>{2, 3});

  const std::string ragged = put("ragged.csv", "a,b\n1,2\n3\n");
  CHECK(code_of([&] { msmcost::read_csv_file(ragged); }) == "SchemaError");
  CHECK(code_of([&] { msmcost::read_csv_file(scratch("absent.csv")); }) == "IoError");
  CHECK(code_of([&] { msmcost::read_csv_file(put("empty.csv", "")); }) == "SchemaError");
  CHECK(code_of([&] { msmcost::read_csv_file(put("open.csv", "a,b\n\"x,1\n")); }) ==
        "SchemaError");
}

TEST_CASE("csv writer round-trips awkward fields") {
  const std::string path = scratch("written.csv");
  msmcost::write_csv_file(path, {"k", "text"},
                          {{"1", "with,comma"}, {"2", "with \"quote\""}, {"3", "with\nbreak"}});
  auto table = msmcost::read_csv_file(path);
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0][1] == "with,comma");
  CHECK(table.rows[1][1] == "with \"quote\"");
  CHECK(table.rows[2][1] == "with\nbreak");
}

TEST_CASE("state space json round trip") {
  const std::string path = scratch("states.json");
  msmcost::write_states_json(path, testing::illness_death());
  CHECK(msmcost::read_states_json(path) == testing::illness_death());

  CHECK(code_of([&] {
          msmcost::read_states_json(put("bad_states.json", R"({"status": []})"));
        }) == "SchemaError");
  CHECK(code_of([&] {
          msmcost::read_states_json(put("junk.json", "{not json"));
        }) == "SchemaError");
}

TEST_CASE("cohort ingest validates and reports") {
  const std::string states = put_states("ingest_states.json");
  const std::string subjects = put("ingest_subjects.csv",
                                   "subject_id,initial_state,censor_time,age\n"
                                   "p1,0,,61\n"
                                   "p2,0,2.5,58\n"
                                   "p3,1,,70\n");
  const std::string events = put("ingest_events.csv",
                                 "subject_id,time,from_state,to_state,cost\n"
                                 "p1,1.25,0,1,40\n"
                                 "p1,3,1,2,220\n"
                                 "p3,0.75,1,2,310\n"
                                 "p2,9.5,0,2,100\n");

  auto bundle = msmcost::read_cohort(events, subjects, states, 8.0);
  REQUIRE(bundle.histories.size() == 3);
  CHECK(bundle.report.subject_rows == 3);
  CHECK(bundle.report.event_rows == 4);
  CHECK(bundle.report.notes.empty());
  REQUIRE(bundle.report.rejected.size() == 1);
  CHECK(bundle.report.rejected[0].line == 5);
  CHECK(bundle.report.rejected[0].reason == "event beyond the horizon");

  const auto& p1 = bundle.histories[0];
  CHECK(p1.subject_id() == "p1");
  CHECK(p1.events().size() == 2);
  CHECK(p1.censor_time() == kInf);
  CHECK(p1.covariate("age", 2.0) == 61.0);
  CHECK(bundle.histories[1].censor_time() == 2.5);
  CHECK(bundle.histories[2].initial_state() == 1);

  SUBCASE("negative cost names the offending line") {
    const std::string bad = put("neg_cost.csv",
                                "subject_id,time,from_state,to_state,cost\n"
                                "p1,1,0,1,-5\n");
    try {
      msmcost::read_cohort(bad, subjects, states, 8.0);
      FAIL("expected SchemaError");
    } catch (const msmcost::Error& e) {
      CHECK(e.code() == "SchemaError");
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("events for unknown subjects are schema errors") {
    const std::string bad = put("ghost.csv",
                                "subject_id,time,from_state,to_state,cost\n"
                                "nobody,1,0,1,5\n");
    CHECK(code_of([&] { msmcost::read_cohort(bad, subjects, states, 8.0); }) == "SchemaError");
  }

  SUBCASE("chain breaks surface as history invariants") {
    const std::string bad = put("chain.csv",
                                "subject_id,time,from_state,to_state,cost\n"
                                "p1,1,0,1,5\n"
                                "p1,2,0,2,5\n");
    CHECK(code_of([&] { msmcost::read_cohort(bad, subjects, states, 8.0); }) == "BrokenChain");
  }

  SUBCASE("missing censor column defaults to uncensored with a note") {
    const std::string no_censor = put("no_censor.csv",
                                      "subject_id,initial_state\n"
                                      "q1,0\n");
    const std::string no_events = put("no_events.csv",
                                      "subject_id,time,from_state,to_state,cost\n");
    auto b = msmcost::read_cohort(no_events, no_censor, states, 8.0);
    REQUIRE(b.report.notes.size() == 1);
    CHECK(b.report.notes[0].find("censor_time") != std::string::npos);
    CHECK(b.histories[0].censor_time() == kInf);
  }
}

TEST_CASE("simulated cohorts survive the csv round trip") {
  ScenarioSpec spec = demo_scenario();
  auto cohort = msmcost::simulate_cohort(spec);
  auto histories = cohort.histories();

  const std::string events = scratch("sim_events.csv");
  const std::string subjects = scratch("sim_subjects.csv");
  const std::string states = scratch("sim_states.json");
  msmcost::write_events_csv(events, histories);
  msmcost::write_subjects_csv(subjects, histories);
  msmcost::write_states_json(states, spec.states);

  auto bundle = msmcost::read_cohort(events, subjects, states, spec.horizon);
  REQUIRE(bundle.histories.size() == histories.size());
  CHECK(bundle.report.rejected.empty());
  for (std::size_t k = 0; k < histories.size(); ++k) {
    const auto& a = histories[k];
    const auto& b = bundle.histories[k];
    CHECK(a.subject_id() == b.subject_id());
    CHECK(a.initial_state() == b.initial_state());
    CHECK(a.censor_time() == b.censor_time());
    REQUIRE(a.events().size() == b.events().size());
    for (std::size_t e = 0; e < a.events().size(); ++e) {
      CHECK(a.events()[e].time == b.events()[e].time);
      CHECK(a.events()[e].from_state == b.events()[e].from_state);
      CHECK(a.events()[e].to_state == b.events()[e].to_state);
      CHECK(a.events()[e].cost == b.events()[e].cost);
    }
    CHECK(a.covariate("age", 1.0) == b.covariate("age", 1.0));
    CHECK(a.covariate("trt", 1.0) == b.covariate("trt", 1.0));
  }
}

TEST_CASE("panel round trip preserves grids and flags") {
  ScenarioSpec spec = demo_scenario();
  auto panels = msmcost::simulate_cohort(spec).panels();
  const std::string path = scratch("panels.csv");
  msmcost::write_panels_csv(path, panels);
  auto back = msmcost::read_panels_csv(path);
  REQUIRE(back.size() == panels.size());
  for (std::size_t k = 0; k < panels.size(); ++k) {
    CHECK(back[k].subject_id == panels[k].subject_id);
    CHECK(back[k].grid == panels[k].grid);
    CHECK(back[k].vtilde == panels[k].vtilde);
    CHECK(back[k].flags == panels[k].flags);
  }

  const std::string broken = put("panel_gap.csv",
                                 "subject_id,interval_start,interval_end,cost,observed\n"
                                 "p1,0,1,5,1\n"
                                 "p1,1.5,2,5,1\n");
  CHECK(code_of([&] { msmcost::read_panels_csv(broken); }) == "SchemaError");
  const std::string flag = put("panel_flag.csv",
                               "subject_id,interval_start,interval_end,cost,observed\n"
                               "p1,0,1,5,maybe\n");
  CHECK(code_of([&] { msmcost::read_panels_csv(flag); }) == "SchemaError");
}

TEST_CASE("accrual atoms round trip and merge into cost processes") {
  ScenarioSpec spec = demo_scenario();
  auto cohort = msmcost::simulate_cohort(spec);

  std::vector<std::pair<std::string, StepFunction>> accruals;
  for (const auto& s : cohort.subjects) accruals.emplace_back(s.id, s.accrual);
  const std::string path = scratch("accrual.csv");
  msmcost::write_accrual_csv(path, accruals);
  auto back = msmcost::read_accrual_csv(path);

  auto rebuilt = msmcost::cost_processes_from(cohort.histories(), back);
  auto billed = cohort.processes();
  REQUIRE(rebuilt.size() == billed.size());
  for (std::size_t k = 0; k < billed.size(); ++k) {
    CHECK(rebuilt[k].subject_id == billed[k].subject_id);
    CHECK(rebuilt[k].initial_cost == billed[k].initial_cost);
    REQUIRE(rebuilt[k].v.times() == billed[k].v.times());
    for (double t : billed[k].v.times())
      CHECK(rebuilt[k].v.increment_at(t) ==
            doctest::Approx(billed[k].v.increment_at(t)).epsilon(1e-12));
  }

  CHECK(code_of([&] {
          msmcost::cost_processes_from(cohort.histories(),
                                       {{"stranger", StepFunction::constant(1.0)}});
        }) == "SchemaError");
}

TEST_CASE("single-cost reductions match the simulator's views") {
  ScenarioSpec spec = demo_scenario();
  spec.sojourn_rates.clear();  // lump costs only, so both discounting views agree
  spec.sojourn_effect_sd = 0.0;
  auto cohort = msmcost::simulate_cohort(spec);
  auto histories = cohort.histories();

  // the simulator keeps the true absorption time even when censoring hides
  // it; the file view reports +inf instead. Both classify every subject the
  // same way and feed the estimator identically.
  auto triples = msmcost::cost_triples_from(histories);
  auto expected = cohort.triples();
  REQUIRE(triples.size() == expected.size());
  for (std::size_t k = 0; k < triples.size(); ++k) {
    CHECK(triples[k].censor_time == expected[k].censor_time);
    CHECK(triples[k].cost == doctest::Approx(expected[k].cost).epsilon(1e-12));
    const bool observed = expected[k].event_time <= std::min(expected[k].censor_time, 4.0);
    if (observed)
      CHECK(triples[k].event_time == expected[k].event_time);
    else
      CHECK(triples[k].event_time == kInf);
  }
  for (auto form : {msmcost::WeightForm::ipcw, msmcost::WeightForm::survival_weighted})
    CHECK(msmcost::bang_tsiatis_npv(triples, spec.discount_rate, spec.horizon, form) ==
          msmcost::bang_tsiatis_npv(expected, spec.discount_rate, spec.horizon, form));

  auto costs = msmcost::subject_costs_from(histories, spec.discount_rate);
  for (std::size_t k = 0; k < costs.size(); ++k) {
    CHECK(costs[k].discounted_cost ==
          doctest::Approx(cohort.subjects[k].discounted_observed).epsilon(1e-12));
    CHECK(costs[k].covariates.at("age") == cohort.subjects[k].z.at("age"));
  }
}

TEST_CASE("longitudinal record files become regression data") {
  const std::string path = put("records.csv",
                               "subject_id,seq,t_end,cost,observed,intercept,t\n"
                               "a,1,0.5,10,1,1,0.5\n"
                               "a,2,1.5,12,1,1,1.5\n"
                               "b,1,0.5,9,1,1,0.5\n"
                               "b,2,1.5,0,0,1,1.5\n");
  auto data = msmcost::read_cost_records_csv(path);
  CHECK(data.p() == 2);
  CHECK(data.recipe.covariate_names() == std::vector<std::string>{"intercept", "t"});
  REQUIRE(data.subjects.size() == 2);
  CHECK(data.subjects[0].subject_id == "a");
  CHECK(data.subjects[0].y(1) == 12.0);
  CHECK(data.subjects[0].x(1, 1) == 1.5);
  CHECK(data.subjects[0].anchor_time == std::vector<double>{0.5, 1.5});
  CHECK(data.subjects[1].observed == std::vector<int>{1, 0});

  const std::string reorder = put("records_seq.csv",
                                  "subject_id,seq,t_end,cost,observed,x\n"
                                  "a,2,1,5,1,1\n"
                                  "a,1,2,5,1,1\n");
  CHECK(code_of([&] { msmcost::read_cost_records_csv(reorder); }) == "SchemaError");
  const std::string no_design = put("records_bare.csv",
                                    "subject_id,seq,t_end,cost,observed\n"
                                    "a,1,1,5,1\n");
  CHECK(code_of([&] { msmcost::read_cost_records_csv(no_design); }) == "SchemaError");
}

TEST_CASE("scenario json round trip reproduces the cohort exactly") {
  ScenarioSpec spec = demo_scenario();
  const std::string path = scratch("scenario.json");
  msmcost::write_scenario_json(path, spec);
  ScenarioSpec back = msmcost::read_scenario_json(path);

  CHECK(back.states == spec.states);
  CHECK(back.grid == spec.grid);
  CHECK(back.initial_probs == spec.initial_probs);
  CHECK(back.n_subjects == spec.n_subjects);
  CHECK(back.seed == spec.seed);
  CHECK(back.sojourn_effect_sd == spec.sojourn_effect_sd);
  CHECK(back.censoring.kind == spec.censoring.kind);
  CHECK(back.censoring.lo == spec.censoring.lo);
  CHECK(back.censoring.hi == spec.censoring.hi);
  REQUIRE(back.intensities.size() == spec.intensities.size());
  CHECK(back.intensities[0].base.times() == spec.intensities[0].base.times());
  CHECK(back.intensities[0].loglinear == spec.intensities[0].loglinear);
  REQUIRE(back.transition_costs.size() == spec.transition_costs.size());
  CHECK(back.transition_costs[0].coef == spec.transition_costs[0].coef);

  auto a = msmcost::simulate_cohort(spec);
  auto b = msmcost::simulate_cohort(back);
  REQUIRE(a.subjects.size() == b.subjects.size());
  for (std::size_t k = 0; k < a.subjects.size(); ++k) {
    CHECK(a.subjects[k].discounted_total == b.subjects[k].discounted_total);
    CHECK(a.subjects[k].censor_time == b.subjects[k].censor_time);
  }

  CHECK(code_of([&] {
          msmcost::read_scenario_json(put("scn_key.json", R"({"horizon": 1, "statez": []})"));
        }) == "SchemaError");
  CHECK(code_of([&] {
          msmcost::read_scenario_json(put("scn_cens.json", R"({
            "states": [{"label": "a", "absorbing": false}],
            "horizon": 1,
            "censoring": {"kind": "weibull"}
          })"));
        }) == "SchemaError");
}

TEST_CASE("valuation profiles parse with strict keys") {
  const std::string path = put("profile.json", R"({
    "covariates": {"age": 60, "trt": 1},
    "discount_rate": 0.03,
    "horizon": 4.0,
    "cost_design": {
      "link": "log",
      "terms": [
        {"basis": "one"},
        {"basis": "time", "filter": [0, 2]},
        {"basis": "covariate", "covariate": "age", "interact": "trt"}
      ]
    },
    "sojourn": {"grid": [0, 1, 4], "rates": [[2.0, 1.0], [0.5, 0.25]]},
    "quality": {"0": {"initial": 1.0, "times": [], "values": []},
                "1": {"initial": 0.7, "times": [2.0], "values": [0.5]}},
    "initial": {"state": 0}
  })");
  auto profile = msmcost::read_profile_json(path);
  CHECK(profile.covariates.at("age") == 60.0);
  CHECK(profile.discount_rate == 0.03);
  CHECK(profile.horizon == 4.0);
  CHECK(profile.link == msmcost::LinkKind::log);
  REQUIRE(profile.cost_design.has_value());
  REQUIRE(profile.cost_design->terms.size() == 3);
  CHECK(profile.cost_design->terms[1].filter == msmcost::TransitionKey{0, 2});
  CHECK(profile.cost_design->terms[2].covariate == "age");
  CHECK(profile.cost_design->terms[2].interact == "trt");
  REQUIRE(profile.sojourn_grid.has_value());
  CHECK(*profile.sojourn_grid == std::vector<double>{0.0, 1.0, 4.0});
  REQUIRE(profile.sojourn_rates.has_value());
  CHECK((*profile.sojourn_rates)[1] == std::vector<double>{0.5, 0.25});
  CHECK(profile.quality.at(1)(3.0) == 0.5);
  CHECK(profile.initial_state == 0);
  CHECK_FALSE(profile.initial_probs.has_value());

  CHECK(code_of([&] {
          msmcost::read_profile_json(put("prof_both.json", R"({
            "horizon": 1, "initial": {"state": 0, "probs": [1.0]}
          })"));
        }) == "SchemaError");
  CHECK(code_of([&] {
          msmcost::read_profile_json(put("prof_basis.json", R"({
            "horizon": 1, "cost_design": {"terms": [{"basis": "cubic"}]}
          })"));
        }) == "SchemaError");
  CHECK(code_of([&] {
          msmcost::read_profile_json(put("prof_key.json", R"({"horizon": 1, "tau": 2})"));
        }) == "SchemaError");
}
