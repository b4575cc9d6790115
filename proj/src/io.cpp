#include "msmcost/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msmcost/errors.hpp"

namespace msmcost {

namespace {

using ojson = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "IoError", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  require(!in.bad(), "IoError", "cannot read " + path);
  return buf.str();
}

void spill(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IoError", "cannot open " + path + " for writing");
  out << content;
  out.flush();
  require(out.good(), "IoError", "cannot write " + path);
}

std::string at_line(const std::string& path, long line) {
  return path + " line " + std::to_string(line);
}

// shortest decimal digits that parse back to the same double
std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double want_double(const std::string& field, const std::string& where,
                   const std::string& column) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  require(res.ec == std::errc{} && res.ptr == field.data() + field.size(), "SchemaError",
          where + ": column " + column + " is not a number (got \"" + field + "\")");
  require(std::isfinite(v), "SchemaError", where + ": column " + column + " must be finite");
  return v;
}

long want_long(const std::string& field, const std::string& where,
               const std::string& column) {
  long v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  require(res.ec == std::errc{} && res.ptr == field.data() + field.size(), "SchemaError",
          where + ": column " + column + " is not an integer (got \"" + field + "\")");
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

}  // namespace

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return k;
  return std::nullopt;
}

std::size_t CsvTable::need(const std::string& name) const {
  auto k = column(name);
  require(k.has_value(), "SchemaError", "missing required column " + name);
  return *k;
}

CsvTable read_csv_file(const std::string& path) {
  const std::string text = slurp(path);

  CsvTable table;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_open = false;  // some content seen since the last row break
  long line = 1;
  long row_line = 1;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    if (!row_open) return;
    end_field();
    if (table.header.empty()) {
      table.header = std::move(row);
    } else {
      require(row.size() == table.header.size(), "SchemaError",
              at_line(path, row_line) + ": expected " + std::to_string(table.header.size()) +
                  " fields, found " + std::to_string(row.size()));
      table.rows.push_back(std::move(row));
      table.line.push_back(row_line);
    }
    row.clear();
    row_open = false;
  };

  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      require(field.empty(), "SchemaError",
              at_line(path, line) + ": quote in the middle of a field");
      quoted = true;
      row_open = true;
    } else if (c == ',') {
      end_field();
      row_open = true;
    } else if (c == '\n') {
      end_row();
      ++line;
      row_line = line;
    } else if (c == '\r') {
      // swallowed; the following \n breaks the row
    } else {
      field += c;
      row_open = true;
    }
  }
  require(!quoted, "SchemaError", path + ": unterminated quoted field");
  end_row();
  require(!table.header.empty(), "SchemaError", path + ": empty file, header row required");
  return table;
}

void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) out += ',';
      out += csv_field(fields[k]);
    }
    out += '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  spill(path, out);
}

namespace {

ojson parse_json_file(const std::string& path) {
  const std::string text = slurp(path);
  try {
    return ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail("SchemaError", path + ": " + e.what());
  }
}

void check_keys(const ojson& j, const std::set<std::string>& allowed,
                const std::string& where) {
  require(j.is_object(), "SchemaError", where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    require(allowed.count(key) == 1, "SchemaError", where + ": unknown key \"" + key + "\"");
}

double num_at(const ojson& j, const std::string& key, const std::string& where) {
  require(j.contains(key), "SchemaError", where + ": missing \"" + key + "\"");
  require(j.at(key).is_number(), "SchemaError", where + ": \"" + key + "\" must be a number");
  return j.at(key).get<double>();
}

double num_or(const ojson& j, const std::string& key, double fallback,
              const std::string& where) {
  if (!j.contains(key)) return fallback;
  require(j.at(key).is_number(), "SchemaError", where + ": \"" + key + "\" must be a number");
  return j.at(key).get<double>();
}

int int_at(const ojson& j, const std::string& key, const std::string& where) {
  require(j.contains(key) && j.at(key).is_number_integer(), "SchemaError",
          where + ": \"" + key + "\" must be an integer");
  return j.at(key).get<int>();
}

std::vector<double> num_array(const ojson& j, const std::string& where) {
  require(j.is_array(), "SchemaError", where + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    require(v.is_number(), "SchemaError", where + " must hold numbers only");
    out.push_back(v.get<double>());
  }
  return out;
}

ojson step_to_json(const StepFunction& f) {
  ojson j;
  j["initial"] = f.initial_value();
  j["times"] = f.times();
  j["values"] = f.values();
  return j;
}

StepFunction step_from_json(const ojson& j, const std::string& where) {
  check_keys(j, {"initial", "times", "values"}, where);
  const double initial = num_at(j, "initial", where);
  std::vector<double> times, values;
  if (j.contains("times")) times = num_array(j.at("times"), where + ".times");
  if (j.contains("values")) values = num_array(j.at("values"), where + ".values");
  require(times.size() == values.size(), "SchemaError",
          where + ": times and values must have equal length");
  return StepFunction(initial, std::move(times), std::move(values));
}

std::map<std::string, double> coef_map(const ojson& j, const std::string& where) {
  require(j.is_object(), "SchemaError", where + " must be an object");
  std::map<std::string, double> out;
  for (const auto& [key, value] : j.items()) {
    require(value.is_number(), "SchemaError", where + "." + key + " must be a number");
    out[key] = value.get<double>();
  }
  return out;
}

StateSpace states_from_json(const ojson& arr, const std::string& where) {
  require(arr.is_array() && !arr.empty(), "SchemaError",
          where + " must be a nonempty array");
  std::vector<std::string> labels;
  std::vector<bool> absorbing;
  for (const auto& s : arr) {
    check_keys(s, {"label", "absorbing"}, where + " entry");
    require(s.contains("label") && s.at("label").is_string(), "SchemaError",
            where + ": each state needs a string \"label\"");
    require(s.contains("absorbing") && s.at("absorbing").is_boolean(), "SchemaError",
            where + ": each state needs a boolean \"absorbing\"");
    labels.push_back(s.at("label").get<std::string>());
    absorbing.push_back(s.at("absorbing").get<bool>());
  }
  return StateSpace(std::move(labels), std::move(absorbing));
}

ojson states_to_json(const StateSpace& states) {
  ojson arr = ojson::array();
  for (int h = 0; h < states.n_states(); ++h) {
    ojson s;
    s["label"] = states.label(h);
    s["absorbing"] = states.is_absorbing(h);
    arr.push_back(std::move(s));
  }
  return arr;
}

}  // namespace

StateSpace read_states_json(const std::string& path) {
  ojson j = parse_json_file(path);
  check_keys(j, {"states"}, path);
  require(j.contains("states"), "SchemaError", path + ": missing \"states\"");
  return states_from_json(j.at("states"), path + ".states");
}

void write_states_json(const std::string& path, const StateSpace& states) {
  ojson j;
  j["states"] = states_to_json(states);
  spill(path, j.dump(2) + "\n");
}

CohortBundle read_cohort(const std::string& events_path, const std::string& subjects_path,
                         const std::string& states_path, double horizon) {
  require(std::isfinite(horizon) && horizon > 0.0, "InvalidInput",
          "horizon must be positive and finite");
  CohortBundle bundle;
  bundle.states = read_states_json(states_path);
  const int n_states = bundle.states.n_states();

  const CsvTable subjects = read_csv_file(subjects_path);
  const std::size_t id_col = subjects.need("subject_id");
  const std::size_t init_col = subjects.need("initial_state");
  const auto censor_col = subjects.column("censor_time");
  if (!censor_col.has_value())
    bundle.report.notes.push_back(
        "subjects file has no censor_time column; every subject read as uncensored");

  std::vector<std::string> covariate_cols;
  for (const auto& name : subjects.header)
    if (name != "subject_id" && name != "initial_state" && name != "censor_time")
      covariate_cols.push_back(name);

  struct SubjectRow {
    int initial_state = 0;
    double censor_time = kInf;
    std::map<std::string, StepFunction> covariates;
    std::vector<TransitionEvent> events;
  };
  std::vector<std::string> order;
  std::map<std::string, SubjectRow> raw;

  for (std::size_t k = 0; k < subjects.rows.size(); ++k) {
    const auto& row = subjects.rows[k];
    const std::string where = at_line(subjects_path, subjects.line[k]);
    const std::string& id = row[id_col];
    require(!id.empty(), "SchemaError", where + ": empty subject_id");
    require(raw.count(id) == 0, "SchemaError", where + ": duplicate subject " + id);

    SubjectRow s;
    const long init = want_long(row[init_col], where, "initial_state");
    require(init >= 0 && init < n_states, "SchemaError",
            where + ": initial_state " + std::to_string(init) + " out of range");
    s.initial_state = static_cast<int>(init);
    if (censor_col.has_value() && !row[*censor_col].empty()) {
      s.censor_time = want_double(row[*censor_col], where, "censor_time");
      require(s.censor_time >= 0.0, "SchemaError", where + ": negative censor_time");
    }
    for (const auto& name : covariate_cols)
      s.covariates.emplace(
          name, StepFunction::constant(want_double(row[*subjects.column(name)], where, name)));
    order.push_back(id);
    raw.emplace(id, std::move(s));
  }
  bundle.report.subject_rows = static_cast<long>(subjects.rows.size());

  const CsvTable events = read_csv_file(events_path);
  const std::size_t e_id = events.need("subject_id");
  const std::size_t e_time = events.need("time");
  const std::size_t e_from = events.need("from_state");
  const std::size_t e_to = events.need("to_state");
  const std::size_t e_cost = events.need("cost");
  bundle.report.event_rows = static_cast<long>(events.rows.size());

  for (std::size_t k = 0; k < events.rows.size(); ++k) {
    const auto& row = events.rows[k];
    const std::string where = at_line(events_path, events.line[k]);
    auto it = raw.find(row[e_id]);
    require(it != raw.end(), "SchemaError",
            where + ": subject " + row[e_id] + " not declared in " + subjects_path);

    TransitionEvent e;
    e.time = want_double(row[e_time], where, "time");
    const long from = want_long(row[e_from], where, "from_state");
    const long to = want_long(row[e_to], where, "to_state");
    require(from >= 0 && from < n_states && to >= 0 && to < n_states, "SchemaError",
            where + ": state index out of range");
    e.from_state = static_cast<int>(from);
    e.to_state = static_cast<int>(to);
    e.cost = want_double(row[e_cost], where, "cost");
    require(e.cost >= 0.0, "SchemaError", where + ": negative cost");

    if (e.time > horizon) {
      bundle.report.rejected.push_back({events.line[k], "event beyond the horizon"});
      continue;
    }
    it->second.events.push_back(e);
  }

  bundle.histories.reserve(order.size());
  for (const auto& id : order) {
    SubjectRow& s = raw.at(id);
    bundle.histories.push_back(build_event_history(id, bundle.states, s.initial_state,
                                                   std::move(s.events), s.censor_time,
                                                   horizon, std::move(s.covariates)));
  }
  return bundle;
}

void write_events_csv(const std::string& path, const std::vector<EventHistory>& cohort) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& h : cohort)
    for (const auto& e : h.events())
      rows.push_back({h.subject_id(), fmt(e.time), std::to_string(e.from_state),
                      std::to_string(e.to_state), fmt(e.cost)});
  write_csv_file(path, {"subject_id", "time", "from_state", "to_state", "cost"}, rows);
}

void write_subjects_csv(const std::string& path, const std::vector<EventHistory>& cohort) {
  std::set<std::string> names;
  for (const auto& h : cohort)
    for (const auto& [name, fn] : h.covariates()) names.insert(name);

  std::vector<std::string> header{"subject_id", "initial_state", "censor_time"};
  header.insert(header.end(), names.begin(), names.end());

  std::vector<std::vector<std::string>> rows;
  for (const auto& h : cohort) {
    std::vector<std::string> row{h.subject_id(), std::to_string(h.initial_state()),
                                 std::isfinite(h.censor_time()) ? fmt(h.censor_time()) : ""};
    for (const auto& name : names) {
      require(h.has_covariate(name), "SchemaError",
              "subject " + h.subject_id() + " misses covariate " + name);
      row.push_back(fmt(h.covariate(name, 0.0)));
    }
    rows.push_back(std::move(row));
  }
  write_csv_file(path, header, rows);
}

std::vector<CostPanel> read_panels_csv(const std::string& path) {
  const CsvTable table = read_csv_file(path);
  const std::size_t id_col = table.need("subject_id");
  const std::size_t a_col = table.need("interval_start");
  const std::size_t b_col = table.need("interval_end");
  const std::size_t cost_col = table.need("cost");
  const std::size_t obs_col = table.need("observed");

  std::vector<CostPanel> panels;
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    const std::string where = at_line(path, table.line[k]);
    const std::string& id = row[id_col];
    require(!id.empty(), "SchemaError", where + ": empty subject_id");

    auto [it, fresh] = index.try_emplace(id, panels.size());
    if (fresh) panels.push_back(CostPanel{id, {0.0}, {}, {}});
    CostPanel& p = panels[it->second];

    const double a = want_double(row[a_col], where, "interval_start");
    const double b = want_double(row[b_col], where, "interval_end");
    require(a == p.grid.back(), "SchemaError",
            where + ": interval_start " + fmt(a) + " does not chain from " +
                fmt(p.grid.back()));
    require(b > a, "SchemaError", where + ": interval_end must exceed interval_start");
    const double cost = want_double(row[cost_col], where, "cost");
    require(cost >= 0.0, "SchemaError", where + ": negative cost");

    PanelFlag flag = PanelFlag::partial;
    if (row[obs_col] == "1")
      flag = PanelFlag::full;
    else if (row[obs_col] == "0")
      flag = PanelFlag::unobserved;
    else
      require(row[obs_col] == "partial", "SchemaError",
              where + ": observed must be 0, 1, or partial");

    p.grid.push_back(b);
    p.vtilde.push_back(cost);
    p.flags.push_back(flag);
  }
  return panels;
}

void write_panels_csv(const std::string& path, const std::vector<CostPanel>& panels) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : panels)
    for (std::size_t g = 0; g + 1 < p.grid.size(); ++g) {
      const char* obs = p.flags[g] == PanelFlag::full
                            ? "1"
                            : (p.flags[g] == PanelFlag::unobserved ? "0" : "partial");
      rows.push_back({p.subject_id, fmt(p.grid[g]), fmt(p.grid[g + 1]), fmt(p.vtilde[g]),
                      obs});
    }
  write_csv_file(path, {"subject_id", "interval_start", "interval_end", "cost", "observed"},
                 rows);
}

std::map<std::string, StepFunction> read_accrual_csv(const std::string& path) {
  const CsvTable table = read_csv_file(path);
  const std::size_t id_col = table.need("subject_id");
  const std::size_t t_col = table.need("time");
  const std::size_t inc_col = table.need("increment");

  std::map<std::string, double> initial;
  std::map<std::string, std::vector<std::pair<double, double>>> atoms;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    const std::string where = at_line(path, table.line[k]);
    const double t = want_double(row[t_col], where, "time");
    require(t >= 0.0, "SchemaError", where + ": negative time");
    const double inc = want_double(row[inc_col], where, "increment");
    require(inc >= 0.0, "SchemaError", where + ": negative increment");
    if (t == 0.0)
      initial[row[id_col]] += inc;
    else
      atoms[row[id_col]].emplace_back(t, inc);
  }

  std::map<std::string, StepFunction> out;
  for (auto& [id, pairs] : atoms)
    out.emplace(id, StepFunction::from_increments(initial[id], std::move(pairs)));
  for (const auto& [id, v] : initial)
    if (out.count(id) == 0) out.emplace(id, StepFunction::constant(v));
  return out;
}

void write_accrual_csv(const std::string& path,
                       const std::vector<std::pair<std::string, StepFunction>>& accruals) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [id, fn] : accruals) {
    if (fn.initial_value() != 0.0) rows.push_back({id, "0", fmt(fn.initial_value())});
    for (double t : fn.times()) rows.push_back({id, fmt(t), fmt(fn.increment_at(t))});
  }
  write_csv_file(path, {"subject_id", "time", "increment"}, rows);
}

std::vector<CostProcess> cost_processes_from(
    const std::vector<EventHistory>& cohort,
    const std::map<std::string, StepFunction>& accrual) {
  std::set<std::string> seen;
  std::vector<CostProcess> out;
  out.reserve(cohort.size());
  for (const auto& h : cohort) {
    seen.insert(h.subject_id());
    CostProcess p;
    p.subject_id = h.subject_id();
    std::vector<std::pair<double, double>> inc;
    for (const auto& e : h.events())
      if (e.cost != 0.0) inc.emplace_back(e.time, e.cost);
    if (auto it = accrual.find(h.subject_id()); it != accrual.end()) {
      p.initial_cost = it->second.initial_value();
      for (double t : it->second.times()) inc.emplace_back(t, it->second.increment_at(t));
    }
    p.v = StepFunction::from_increments(0.0, std::move(inc));
    out.push_back(std::move(p));
  }
  for (const auto& [id, fn] : accrual)
    require(seen.count(id) == 1, "SchemaError",
            "accrual rows for unknown subject " + id);
  return out;
}

std::vector<CostTriple> cost_triples_from(const std::vector<EventHistory>& cohort,
                                          const std::map<std::string, StepFunction>& accrual) {
  std::vector<CostTriple> out;
  out.reserve(cohort.size());
  for (const auto& h : cohort) {
    const FollowUp fu = follow_up(h);
    CostTriple t;
    t.event_time = fu.event ? fu.time : kInf;
    t.censor_time = h.censor_time();
    for (const auto& e : h.events()) t.cost += e.cost;
    if (auto it = accrual.find(h.subject_id()); it != accrual.end()) {
      t.cost += it->second.initial_value();
      for (double u : it->second.times()) t.cost += it->second.increment_at(u);
    }
    out.push_back(t);
  }
  return out;
}

std::vector<SubjectCost> subject_costs_from(const std::vector<EventHistory>& cohort,
                                            double discount_rate,
                                            const std::map<std::string, StepFunction>& accrual) {
  std::vector<SubjectCost> out;
  out.reserve(cohort.size());
  for (const auto& h : cohort) {
    const FollowUp fu = follow_up(h);
    SubjectCost s;
    s.subject_id = h.subject_id();
    s.event_time = fu.event ? fu.time : kInf;
    s.censor_time = h.censor_time();
    for (const auto& e : h.events()) s.discounted_cost += std::exp(-discount_rate * e.time) * e.cost;
    if (auto it = accrual.find(h.subject_id()); it != accrual.end()) {
      s.discounted_cost += it->second.initial_value();
      for (double u : it->second.times())
        s.discounted_cost += std::exp(-discount_rate * u) * it->second.increment_at(u);
    }
    for (const auto& [name, fn] : h.covariates()) s.covariates[name] = fn.left_limit(0.0);
    out.push_back(std::move(s));
  }
  return out;
}

CostRegressionData read_cost_records_csv(const std::string& path) {
  const CsvTable table = read_csv_file(path);
  const std::size_t id_col = table.need("subject_id");
  const std::size_t seq_col = table.need("seq");
  const std::size_t t_col = table.need("t_end");
  const std::size_t cost_col = table.need("cost");
  const std::size_t obs_col = table.need("observed");

  std::vector<std::pair<std::string, std::size_t>> design_cols;
  for (std::size_t k = 0; k < table.header.size(); ++k) {
    const std::string& name = table.header[k];
    if (name != "subject_id" && name != "seq" && name != "t_end" && name != "cost" &&
        name != "observed")
      design_cols.emplace_back(name, k);
  }
  require(!design_cols.empty(), "SchemaError", path + ": no design columns");

  struct Raw {
    std::vector<long> seq;
    std::vector<double> y, t;
    std::vector<int> observed;
    std::vector<std::vector<double>> x;
  };
  std::vector<std::string> order;
  std::map<std::string, Raw> raw;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    const std::string where = at_line(path, table.line[k]);
    const std::string& id = row[id_col];
    require(!id.empty(), "SchemaError", where + ": empty subject_id");
    auto [it, fresh] = raw.try_emplace(id);
    if (fresh) order.push_back(id);
    Raw& r = it->second;

    const long seq = want_long(row[seq_col], where, "seq");
    require(r.seq.empty() || seq > r.seq.back(), "SchemaError",
            where + ": seq must increase within a subject");
    r.seq.push_back(seq);
    r.t.push_back(want_double(row[t_col], where, "t_end"));
    r.y.push_back(want_double(row[cost_col], where, "cost"));
    const long obs = want_long(row[obs_col], where, "observed");
    require(obs == 0 || obs == 1, "SchemaError", where + ": observed must be 0 or 1");
    r.observed.push_back(static_cast<int>(obs));
    std::vector<double> x_row;
    x_row.reserve(design_cols.size());
    for (const auto& [name, col] : design_cols)
      x_row.push_back(want_double(row[col], where, name));
    r.x.push_back(std::move(x_row));
  }

  CostRegressionData data;
  for (const auto& [name, col] : design_cols)
    data.recipe.terms.push_back(DesignTerm{std::nullopt, BasisKind::covariate, name, ""});
  for (const auto& id : order) {
    Raw& r = raw.at(id);
    SubjectRecords rec;
    rec.subject_id = id;
    const auto m = static_cast<Eigen::Index>(r.y.size());
    rec.y = Eigen::Map<Eigen::VectorXd>(r.y.data(), m);
    rec.x.resize(m, static_cast<Eigen::Index>(design_cols.size()));
    for (Eigen::Index i = 0; i < m; ++i)
      for (std::size_t j = 0; j < design_cols.size(); ++j)
        rec.x(i, static_cast<Eigen::Index>(j)) = r.x[static_cast<std::size_t>(i)][j];
    rec.anchor_time = std::move(r.t);
    rec.observed = std::move(r.observed);
    data.subjects.push_back(std::move(rec));
  }
  return data;
}

namespace {

TransitionKey key_from_json(const ojson& j, const std::string& where) {
  return {int_at(j, "from", where), int_at(j, "to", where)};
}

CensoringLaw censoring_from_json(const ojson& j, const std::string& where) {
  require(j.contains("kind") && j.at("kind").is_string(), "SchemaError",
          where + ": censoring needs a string \"kind\"");
  const std::string kind = j.at("kind").get<std::string>();
  CensoringLaw law;
  if (kind == "none") {
    check_keys(j, {"kind"}, where);
  } else if (kind == "uniform") {
    check_keys(j, {"kind", "lo", "hi"}, where);
    law.kind = CensoringLaw::Kind::uniform;
    law.lo = num_at(j, "lo", where);
    law.hi = num_at(j, "hi", where);
  } else if (kind == "exponential") {
    check_keys(j, {"kind", "rate"}, where);
    law.kind = CensoringLaw::Kind::exponential;
    law.rate = num_at(j, "rate", where);
  } else if (kind == "atoms") {
    check_keys(j, {"kind", "times", "probs"}, where);
    law.kind = CensoringLaw::Kind::atoms;
    require(j.contains("times") && j.contains("probs"), "SchemaError",
            where + ": atom censoring needs times and probs");
    law.atom_times = num_array(j.at("times"), where + ".times");
    law.atom_probs = num_array(j.at("probs"), where + ".probs");
  } else {
    fail("SchemaError", where + ": unknown censoring kind \"" + kind + "\"");
  }
  return law;
}

ojson censoring_to_json(const CensoringLaw& law) {
  ojson j;
  switch (law.kind) {
    case CensoringLaw::Kind::none:
      j["kind"] = "none";
      break;
    case CensoringLaw::Kind::uniform:
      j["kind"] = "uniform";
      j["lo"] = law.lo;
      j["hi"] = law.hi;
      break;
    case CensoringLaw::Kind::exponential:
      j["kind"] = "exponential";
      j["rate"] = law.rate;
      break;
    case CensoringLaw::Kind::atoms:
      j["kind"] = "atoms";
      j["times"] = law.atom_times;
      j["probs"] = law.atom_probs;
      break;
  }
  return j;
}

}  // namespace

ScenarioSpec read_scenario_json(const std::string& path) {
  ojson j = parse_json_file(path);
  check_keys(j,
             {"states", "covariates", "intensities", "transition_costs", "sojourn_rates",
              "sojourn_effect_sd", "censoring", "discount_rate", "horizon", "grid",
              "initial_probs", "n_subjects", "seed", "bill_tail_at_end"},
             path);

  ScenarioSpec spec;
  require(j.contains("states"), "SchemaError", path + ": missing \"states\"");
  spec.states = states_from_json(j.at("states"), path + ".states");

  if (j.contains("covariates")) {
    require(j.at("covariates").is_array(), "SchemaError", path + ".covariates must be an array");
    for (const auto& c : j.at("covariates")) {
      const std::string where = path + ".covariates entry";
      require(c.contains("name") && c.at("name").is_string(), "SchemaError",
              where + ": needs a string \"name\"");
      require(c.contains("kind") && c.at("kind").is_string(), "SchemaError",
              where + ": needs a string \"kind\"");
      CovariateLaw law;
      law.name = c.at("name").get<std::string>();
      const std::string kind = c.at("kind").get<std::string>();
      if (kind == "constant") {
        check_keys(c, {"name", "kind", "value"}, where);
        law.kind = CovariateLaw::Kind::constant;
        law.a = num_at(c, "value", where);
      } else if (kind == "bernoulli") {
        check_keys(c, {"name", "kind", "p"}, where);
        law.kind = CovariateLaw::Kind::bernoulli;
        law.a = num_at(c, "p", where);
      } else if (kind == "normal") {
        check_keys(c, {"name", "kind", "mean", "sd"}, where);
        law.kind = CovariateLaw::Kind::normal;
        law.a = num_at(c, "mean", where);
        law.b = num_at(c, "sd", where);
      } else {
        fail("SchemaError", where + ": unknown covariate kind \"" + kind + "\"");
      }
      spec.covariates.push_back(std::move(law));
    }
  }

  if (j.contains("intensities")) {
    require(j.at("intensities").is_array(), "SchemaError",
            path + ".intensities must be an array");
    for (const auto& e : j.at("intensities")) {
      const std::string where = path + ".intensities entry";
      check_keys(e, {"from", "to", "base", "loglinear"}, where);
      IntensityLaw law;
      law.key = key_from_json(e, where);
      require(e.contains("base"), "SchemaError", where + ": missing \"base\"");
      law.base = step_from_json(e.at("base"), where + ".base");
      if (e.contains("loglinear")) law.loglinear = coef_map(e.at("loglinear"), where + ".loglinear");
      spec.intensities.push_back(std::move(law));
    }
  }

  if (j.contains("transition_costs")) {
    require(j.at("transition_costs").is_array(), "SchemaError",
            path + ".transition_costs must be an array");
    for (const auto& e : j.at("transition_costs")) {
      const std::string where = path + ".transition_costs entry";
      check_keys(e, {"from", "to", "intercept", "slope_time", "coef", "log_sd"}, where);
      TransitionCostLaw law;
      law.key = key_from_json(e, where);
      law.intercept = num_at(e, "intercept", where);
      law.slope_time = num_or(e, "slope_time", 0.0, where);
      if (e.contains("coef")) law.coef = coef_map(e.at("coef"), where + ".coef");
      law.log_sd = num_or(e, "log_sd", 0.0, where);
      spec.transition_costs.push_back(std::move(law));
    }
  }

  if (j.contains("sojourn_rates")) {
    require(j.at("sojourn_rates").is_array(), "SchemaError",
            path + ".sojourn_rates must be an array");
    for (const auto& e : j.at("sojourn_rates")) {
      const std::string where = path + ".sojourn_rates entry";
      check_keys(e, {"state", "rate"}, where);
      SojournLaw law;
      law.state = int_at(e, "state", where);
      require(e.contains("rate"), "SchemaError", where + ": missing \"rate\"");
      law.rate = step_from_json(e.at("rate"), where + ".rate");
      spec.sojourn_rates.push_back(std::move(law));
    }
  }

  spec.sojourn_effect_sd = num_or(j, "sojourn_effect_sd", 0.0, path);
  if (j.contains("censoring"))
    spec.censoring = censoring_from_json(j.at("censoring"), path + ".censoring");
  spec.discount_rate = num_or(j, "discount_rate", 0.0, path);
  spec.horizon = num_at(j, "horizon", path);
  if (j.contains("grid")) spec.grid = num_array(j.at("grid"), path + ".grid");
  if (j.contains("initial_probs"))
    spec.initial_probs = num_array(j.at("initial_probs"), path + ".initial_probs");
  if (j.contains("n_subjects")) {
    require(j.at("n_subjects").is_number_unsigned(), "SchemaError",
            path + ": \"n_subjects\" must be a nonnegative integer");
    spec.n_subjects = j.at("n_subjects").get<std::size_t>();
  }
  if (j.contains("seed")) {
    require(j.at("seed").is_number_unsigned(), "SchemaError",
            path + ": \"seed\" must be a nonnegative integer");
    spec.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("bill_tail_at_end")) {
    require(j.at("bill_tail_at_end").is_boolean(), "SchemaError",
            path + ": \"bill_tail_at_end\" must be a boolean");
    spec.bill_tail_at_end = j.at("bill_tail_at_end").get<bool>();
  }
  return spec;
}

void write_scenario_json(const std::string& path, const ScenarioSpec& spec) {
  ojson j;
  j["states"] = states_to_json(spec.states);

  ojson covs = ojson::array();
  for (const auto& law : spec.covariates) {
    ojson c;
    c["name"] = law.name;
    switch (law.kind) {
      case CovariateLaw::Kind::constant:
        c["kind"] = "constant";
        c["value"] = law.a;
        break;
      case CovariateLaw::Kind::bernoulli:
        c["kind"] = "bernoulli";
        c["p"] = law.a;
        break;
      case CovariateLaw::Kind::normal:
        c["kind"] = "normal";
        c["mean"] = law.a;
        c["sd"] = law.b;
        break;
    }
    covs.push_back(std::move(c));
  }
  j["covariates"] = std::move(covs);

  ojson intens = ojson::array();
  for (const auto& law : spec.intensities) {
    ojson e;
    e["from"] = law.key.first;
    e["to"] = law.key.second;
    e["base"] = step_to_json(law.base);
    e["loglinear"] = law.loglinear;
    intens.push_back(std::move(e));
  }
  j["intensities"] = std::move(intens);

  ojson costs = ojson::array();
  for (const auto& law : spec.transition_costs) {
    ojson e;
    e["from"] = law.key.first;
    e["to"] = law.key.second;
    e["intercept"] = law.intercept;
    e["slope_time"] = law.slope_time;
    e["coef"] = law.coef;
    e["log_sd"] = law.log_sd;
    costs.push_back(std::move(e));
  }
  j["transition_costs"] = std::move(costs);

  ojson sojourns = ojson::array();
  for (const auto& law : spec.sojourn_rates) {
    ojson e;
    e["state"] = law.state;
    e["rate"] = step_to_json(law.rate);
    sojourns.push_back(std::move(e));
  }
  j["sojourn_rates"] = std::move(sojourns);

  j["sojourn_effect_sd"] = spec.sojourn_effect_sd;
  j["censoring"] = censoring_to_json(spec.censoring);
  j["discount_rate"] = spec.discount_rate;
  j["horizon"] = spec.horizon;
  j["grid"] = spec.grid;
  j["initial_probs"] = spec.initial_probs;
  j["n_subjects"] = spec.n_subjects;
  j["seed"] = spec.seed;
  j["bill_tail_at_end"] = spec.bill_tail_at_end;
  spill(path, j.dump(2) + "\n");
}

namespace {

DesignTerm term_from_json(const ojson& j, const std::string& where) {
  check_keys(j, {"basis", "covariate", "interact", "filter"}, where);
  require(j.contains("basis") && j.at("basis").is_string(), "SchemaError",
          where + ": needs a string \"basis\"");
  const std::string basis = j.at("basis").get<std::string>();

  DesignTerm term;
  if (basis == "one")
    term.basis = BasisKind::one;
  else if (basis == "time")
    term.basis = BasisKind::time;
  else if (basis == "time_sq")
    term.basis = BasisKind::time_sq;
  else if (basis == "covariate")
    term.basis = BasisKind::covariate;
  else
    fail("SchemaError", where + ": unknown basis \"" + basis + "\"");

  if (term.basis == BasisKind::covariate) {
    require(j.contains("covariate") && j.at("covariate").is_string(), "SchemaError",
            where + ": covariate basis needs a \"covariate\" name");
    term.covariate = j.at("covariate").get<std::string>();
  } else {
    require(!j.contains("covariate"), "SchemaError",
            where + ": \"covariate\" only applies to the covariate basis");
  }
  if (j.contains("interact")) {
    require(j.at("interact").is_string(), "SchemaError",
            where + ": \"interact\" must be a string");
    term.interact = j.at("interact").get<std::string>();
  }
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    require(f.is_array() && f.size() == 2 && f[0].is_number_integer() &&
                f[1].is_number_integer(),
            "SchemaError", where + ": \"filter\" must be [from, to]");
    term.filter = TransitionKey{f[0].get<int>(), f[1].get<int>()};
  }
  return term;
}

}  // namespace

AnalysisProfile read_profile_json(const std::string& path) {
  ojson j = parse_json_file(path);
  check_keys(j,
             {"covariates", "discount_rate", "horizon", "cost_design", "sojourn", "quality",
              "initial"},
             path);

  AnalysisProfile profile;
  if (j.contains("covariates"))
    profile.covariates = coef_map(j.at("covariates"), path + ".covariates");
  profile.discount_rate = num_or(j, "discount_rate", 0.0, path);
  profile.horizon = num_at(j, "horizon", path);

  if (j.contains("cost_design")) {
    const auto& d = j.at("cost_design");
    const std::string where = path + ".cost_design";
    check_keys(d, {"link", "terms"}, where);
    if (d.contains("link")) {
      const std::string link = d.at("link").is_string() ? d.at("link").get<std::string>() : "";
      if (link == "identity")
        profile.link = LinkKind::identity;
      else if (link == "log")
        profile.link = LinkKind::log;
      else
        fail("SchemaError", where + ": link must be identity or log");
    }
    require(d.contains("terms") && d.at("terms").is_array() && !d.at("terms").empty(),
            "SchemaError", where + ": needs a nonempty \"terms\" array");
    DesignRecipe recipe;
    for (const auto& t : d.at("terms")) recipe.terms.push_back(term_from_json(t, where));
    profile.cost_design = std::move(recipe);
  }

  if (j.contains("sojourn")) {
    const auto& s = j.at("sojourn");
    const std::string where = path + ".sojourn";
    check_keys(s, {"grid", "rates"}, where);
    require(s.contains("grid") && s.contains("rates"), "SchemaError",
            where + ": needs \"grid\" and \"rates\"");
    profile.sojourn_grid = num_array(s.at("grid"), where + ".grid");
    require(s.at("rates").is_array(), "SchemaError", where + ".rates must be an array");
    std::vector<std::vector<double>> rates;
    for (const auto& row : s.at("rates"))
      rates.push_back(num_array(row, where + ".rates entry"));
    profile.sojourn_rates = std::move(rates);
  }

  if (j.contains("quality")) {
    require(j.at("quality").is_object(), "SchemaError", path + ".quality must be an object");
    for (const auto& [key, value] : j.at("quality").items()) {
      int state = 0;
      auto res = std::from_chars(key.data(), key.data() + key.size(), state);
      require(res.ec == std::errc{} && res.ptr == key.data() + key.size() && state >= 0,
              "SchemaError", path + ".quality: keys must be state indices, got \"" + key + "\"");
      profile.quality.emplace(state, step_from_json(value, path + ".quality." + key));
    }
  }

  if (j.contains("initial")) {
    const auto& init = j.at("initial");
    const std::string where = path + ".initial";
    check_keys(init, {"probs", "state"}, where);
    require(init.contains("probs") != init.contains("state"), "SchemaError",
            where + ": give exactly one of \"probs\" or \"state\"");
    if (init.contains("probs"))
      profile.initial_probs = num_array(init.at("probs"), where + ".probs");
    else
      profile.initial_state = int_at(init, "state", where);
  }
  return profile;
}

}  // namespace msmcost
