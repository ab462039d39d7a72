#include "tigload/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tigload/cli_io.hpp"
#include "tigload/errors.hpp"
#include "tigload/extraneous_load.hpp"
#include "tigload/fit_stats.hpp"
#include "tigload/intrinsic_load.hpp"
#include "tigload/oracle_sim.hpp"
#include "tigload/parallel.hpp"
#include "tigload/router.hpp"
#include "tigload/task_io.hpp"
#include "tigload/taskgen.hpp"
#include "tigload/total_load.hpp"

namespace tigload {

namespace {

using nlohmann::json;

struct Context {
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;
};

// ---- formatting --------------------------------------------------------

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

std::string jsonl_doc(const json& prov, const std::vector<json>& records) {
  std::string s = json{{"provenance", prov}}.dump() + "\n";
  for (const auto& r : records) s += r.dump() + "\n";
  return s;
}

std::string json_doc(json body, const json& prov) {
  body["provenance"] = prov;
  return body.dump(2) + "\n";
}

std::string csv_doc(const json& prov, const std::string& header,
                    const std::vector<std::string>& rows) {
  std::string s = "# provenance: " + prov.dump() + "\n" + header + "\n";
  for (const auto& r : rows) s += r + "\n";
  return s;
}

void print(std::ostream& err, const std::vector<Diagnostic>& diags) {
  for (const auto& d : diags) err << to_string(d) << "\n";
}

// ---- inputs ------------------------------------------------------------

InputFile input(const std::string& path) { return {path, read_file(path)}; }

json parse_json_file(const InputFile& in) {
  try {
    return json::parse(in.content);
  } catch (const json::parse_error& e) {
    throw ParseError(in.path + ": not valid JSON: " + e.what());
  }
}

std::map<std::string, std::vector<TrialRecord>> by_agent(const std::vector<TrialRecord>& trials) {
  std::map<std::string, std::vector<TrialRecord>> out;
  for (const auto& t : trials) out[t.agent_id].push_back(t);
  return out;
}

std::map<std::string, LoadRecord> index_loads(const std::vector<LoadRecord>& loads) {
  std::map<std::string, LoadRecord> out;
  for (const auto& r : loads) out.emplace(r.task_id, r);
  return out;
}

void require_matched(const std::vector<TrialRecord>& trials,
                     const std::map<std::string, LoadRecord>& loads) {
  std::set<std::string> orphans;
  for (const auto& t : trials)
    if (!loads.count(t.task_id)) orphans.insert(t.task_id);
  if (orphans.empty()) return;
  std::string list;
  std::size_t shown = 0;
  for (const auto& id : orphans) {
    if (shown == 10) {
      list += ", ... (" + std::to_string(orphans.size()) + " in total)";
      break;
    }
    list += (shown++ ? ", " : "") + id;
  }
  throw UnmatchedTrial("trials reference tasks without loads: " + list);
}

std::vector<TaskInstance> parse_tasks(const InputFile& in, std::vector<Diagnostic>& diags,
                                      std::vector<std::size_t>& line_numbers) {
  std::vector<TaskInstance> tasks;
  std::set<std::string> seen;
  for (const auto& line : jsonl_records(in.content)) {
    try {
      auto t = parse_task(line.text);
      if (!seen.insert(t.id).second) throw ParseError("duplicate task id '" + t.id + "'");
      tasks.push_back(std::move(t));
      line_numbers.push_back(line.number);
    } catch (const ParseError& e) {
      diags.push_back({in.path, line.number, e.what()});
    }
  }
  return tasks;
}

// omega_e per agent: calibrated value, else the pooled one, else the fallback.
struct OmegaTable {
  std::map<std::string, double> per_agent;
  std::optional<double> pooled;
  double fallback = 1.0;

  double get(const std::string& agent) const {
    if (auto it = per_agent.find(agent); it != per_agent.end()) return it->second;
    return pooled.value_or(fallback);
  }
};

constexpr const char* kPooledAgent = "*";

OmegaTable read_omega_file(const InputFile& in, double fallback) {
  OmegaTable table;
  table.fallback = fallback;
  const auto j = parse_json_file(in);
  try {
    for (const auto& c : j.at("calibrations")) {
      const auto agent = c.at("agent_id").get<std::string>();
      const double w = c.at("omega_e").get<double>();
      if (agent == kPooledAgent)
        table.pooled = w;
      else
        table.per_agent[agent] = w;
    }
  } catch (const json::exception& e) {
    throw ParseError(in.path + ": expected {calibrations: [{agent_id, omega_e}]}: " + e.what());
  }
  return table;
}

struct ProfileEntry {
  CognitiveProfile profile;
  double omega_e = 1.0;
  std::optional<std::size_t> n_trials;
  std::optional<double> accuracy;
};

std::map<std::string, ProfileEntry> read_profiles(const InputFile& in, double default_omega) {
  std::map<std::string, ProfileEntry> out;
  const auto j = parse_json_file(in);
  try {
    for (const auto& p : j.at("profiles")) {
      ProfileEntry e;
      e.profile.agent_id = p.at("agent_id").get<std::string>();
      e.profile.k = p.at("k").get<double>();
      e.profile.b = p.at("b").get<double>();
      e.omega_e = p.value("omega_e", default_omega);
      if (p.contains("n_trials")) e.n_trials = p.at("n_trials").get<std::size_t>();
      if (p.contains("overall_accuracy") && p.at("overall_accuracy").is_number())
        e.accuracy = p.at("overall_accuracy").get<double>();
      e.profile.residual_sse = p.value("residual_sse", 0.0);
      out[e.profile.agent_id] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw ParseError(in.path + ": expected {profiles: [{agent_id, k, b}]}: " + e.what());
  }
  return out;
}

LoadMap totals(const std::map<std::string, LoadRecord>& loads, double omega) {
  LoadMap out;
  for (const auto& [id, r] : loads) out[id] = r.total(omega);
  return out;
}

// ---- analyze / score ---------------------------------------------------

json per_query_json(const ExtraneousReport& r) {
  json arr = json::array();
  for (const auto& q : r.per_query)
    arr.push_back({{"query_index", q.query_index},
                   {"ambiguity", q.ambiguity},
                   {"distraction", q.distraction},
                   {"total", q.total}});
  return arr;
}

struct TaskArgs {
  std::string tasks;
  std::string out;
};

int cmd_analyze(Context& c, const TaskArgs& a, bool intrinsic) {
  const auto in = input(a.tasks);
  std::vector<Diagnostic> diags;
  std::vector<std::size_t> lines;
  auto tasks = parse_tasks(in, diags, lines);

  const IntrinsicParams params{c.cfg.lambda};
  std::vector<std::optional<IntrinsicReport>> cli(tasks.size());
  std::vector<std::string> failures(tasks.size());
  if (intrinsic)
    parallel_for(tasks.size(), c.cfg.jobs, [&](std::size_t i) {
      try {
        cli[i] = intrinsic_load(tasks[i], params);
      } catch (const InvalidTask& e) {
        failures[i] = e.what();
      }
    });
  else
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto report = validate_task(tasks[i]);
      if (!report.ok()) failures[i] = "invalid task: " + report.violations.front().message;
    }

  std::vector<TaskInstance> valid;
  std::vector<std::size_t> slot;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!failures[i].empty()) {
      diags.push_back({in.path, lines[i], failures[i]});
      continue;
    }
    valid.push_back(tasks[i]);
    slot.push_back(i);
  }
  std::sort(diags.begin(), diags.end(),
            [](const Diagnostic& x, const Diagnostic& y) { return x.line < y.line; });

  auto scorer = make_scorer(c.cfg.scorer);
  const auto cle = extraneous_load_batch(valid, *scorer, c.cfg.jobs);

  std::vector<json> records;
  for (std::size_t v = 0; v < valid.size(); ++v) {
    const auto& t = valid[v];
    json r{{"task_id", t.id}, {"cl_e", cle[v].total}, {"per_query", per_query_json(cle[v])},
           {"scorer_id", cle[v].scorer_id}};
    if (intrinsic) {
      const auto& report = *cli[slot[v]];
      json edges = json::array();
      for (std::size_t e = 0; e < report.per_edge.size(); ++e) {
        const auto& el = report.per_edge[e];
        json ej{{"src", el.src},
                {"dst", el.dst},
                {"kind", std::string(to_string(el.kind))},
                {"delta", el.delta},
                {"interference", el.interference},
                {"weight", el.weight}};
        if (const auto& x = t.graph.edges[e].entity) ej["entity"] = entity_to_json(*x);
        edges.push_back(std::move(ej));
      }
      r["cl_i"] = report.total;
      r["per_edge"] = std::move(edges);
      r["per_node"] = report.per_node;
    }
    records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(), [](const json& x, const json& y) {
    return x["task_id"].get<std::string>() < y["task_id"].get<std::string>();
  });

  const auto prov = provenance(intrinsic ? "analyze" : "score", c.cfg, {in});
  write_files_atomically({{a.out, jsonl_doc(prov, records)}});
  print(c.err, diags);
  c.out << records.size() << " records written to " << a.out << "\n";
  return diags.empty() ? kExitOk : kExitData;
}

// ---- calibrate-omega ---------------------------------------------------

struct CalibrateArgs {
  std::string loads;
  std::string trials;
  std::string out;
  bool pooled = false;
};

int cmd_calibrate(Context& c, const CalibrateArgs& a) {
  const auto loads_in = input(a.loads);
  const auto trials_in = input(a.trials);
  std::vector<Diagnostic> diags;
  const auto loads = index_loads(parse_loads(loads_in, diags));
  const auto trials = parse_trials(trials_in, diags);
  if (!diags.empty()) {
    print(c.err, diags);
    return kExitData;
  }
  require_matched(trials, loads);
  for (const auto& [id, r] : loads)
    if (!r.cl_i || !r.cl_e)
      throw ParseError(loads_in.path + ": task '" + id + "' needs both cl_i and cl_e");

  const bool pooled = a.pooled || c.cfg.omega_mode == "pooled";
  std::map<std::string, std::vector<TrialRecord>> groups;
  if (pooled)
    groups[kPooledAgent] = trials;
  else
    groups = by_agent(trials);

  json cals = json::array();
  for (const auto& [agent, group] : groups) {
    std::set<std::string> used;
    for (const auto& t : group) used.insert(t.task_id);
    std::vector<TaskLoad> cli, cle;
    for (const auto& id : used) {
      cli.push_back({id, *loads.at(id).cl_i});
      cle.push_back({id, *loads.at(id).cl_e});
    }
    OmegaCalibration cal;
    try {
      cal = calibrate_omega(group, cli, cle, agent);
    } catch (const Error& e) {
      throw DegenerateCalibration("agent '" + agent + "': " + e.what() +
                                  "; supply omega_e with --omega-value instead");
    }
    cals.push_back({{"agent_id", cal.agent_id},
                    {"omega_e", cal.omega_e},
                    {"drop_cli", cal.drop_cli},
                    {"drop_cle", cal.drop_cle},
                    {"clamped", cal.clamped},
                    {"bucket_boundaries",
                     {{"cl_i", cal.cli_boundaries}, {"cl_e", cal.cle_boundaries}}}});
    c.out << agent << ": omega_e = " << num(cal.omega_e) << "\n";
  }
  const auto prov = provenance("calibrate-omega", c.cfg, {loads_in, trials_in});
  json body{{"omega_mode", pooled ? "pooled" : "per_agent"}, {"calibrations", cals}};
  write_files_atomically({{a.out, json_doc(body, prov)}});
  return kExitOk;
}

// ---- fit / validate ----------------------------------------------------

struct FitArgs {
  std::string loads;
  std::string trials;
  std::string out_dir;
  std::string omega_file;
  std::optional<double> omega_value;
};

json hl_json(const std::string& agent, const HLResult& hl) {
  json groups = json::array();
  for (const auto& g : hl.groups)
    groups.push_back({{"n", g.n},
                      {"observed", g.observed},
                      {"expected", g.expected},
                      {"mean_prediction", g.mean_prediction}});
  return {{"agent_id", agent},
          {"chi2", hl.chi2},
          {"dof", hl.dof},
          {"p_value", hl.p_value},
          {"groups", groups}};
}

PredictionMap predictions(const CognitiveProfile& p, const LoadMap& loads,
                          const std::vector<TrialRecord>& trials) {
  PredictionMap out;
  for (const auto& t : trials)
    if (!out.count(t.task_id)) out[t.task_id] = predict_accuracy(p.k, p.b, loads.at(t.task_id));
  return out;
}

double overall_accuracy(const std::vector<TrialRecord>& trials) {
  std::size_t ok = 0;
  for (const auto& t : trials) ok += t.success ? 1 : 0;
  return trials.empty() ? 0.0 : double(ok) / double(trials.size());
}

int cmd_fit(Context& c, const FitArgs& a) {
  const auto loads_in = input(a.loads);
  const auto trials_in = input(a.trials);
  std::vector<InputFile> inputs{loads_in, trials_in};
  std::vector<Diagnostic> diags;
  const auto loads = index_loads(parse_loads(loads_in, diags));
  const auto trials = parse_trials(trials_in, diags);
  if (!diags.empty()) {
    print(c.err, diags);
    return kExitData;
  }
  require_matched(trials, loads);
  if (trials.empty()) throw InsufficientData(trials_in.path + ": no trials");

  OmegaTable omegas;
  omegas.fallback = a.omega_value.value_or(c.cfg.default_omega);
  if (!a.omega_file.empty()) {
    inputs.push_back(input(a.omega_file));
    omegas = read_omega_file(inputs.back(), omegas.fallback);
  }

  json profiles = json::array(), hls = json::array(), terciles = json::array();
  std::vector<std::string> calibration_rows, curve_rows;
  for (const auto& [agent, group] : by_agent(trials)) {
    const double omega = omegas.get(agent);
    const auto load_map = totals(loads, omega);
    const auto profile = fit_profile(group, load_map, c.cfg.fit, agent);
    const double acc = overall_accuracy(group);

    json bins = json::array();
    for (const auto& b : profile.fit_bins) {
      bins.push_back({{"lo", b.lo},
                      {"hi", b.hi},
                      {"load_mid", b.load_mid},
                      {"empirical_acc", b.empirical_acc},
                      {"n", b.n},
                      {"successes", b.successes}});
      curve_rows.push_back(csv_field(agent) + "," + num(b.load_mid) + "," +
                           num(b.empirical_acc) + "," +
                           num(predict_accuracy(profile.k, profile.b, b.load_mid)) + "," +
                           std::to_string(b.n));
    }
    profiles.push_back({{"agent_id", agent},
                        {"k", profile.k},
                        {"b", profile.b},
                        {"omega_e", omega},
                        {"residual_sse", profile.residual_sse},
                        {"n_trials", group.size()},
                        {"overall_accuracy", acc},
                        {"bins", bins}});

    const auto preds = predictions(profile, load_map, group);
    hls.push_back(hl_json(agent, hosmer_lemeshow(group, preds, c.cfg.hl_groups)));
    for (const auto& cb : calibration_bins(group, preds, c.cfg.calibration_bins))
      calibration_rows.push_back(csv_field(agent) + "," + num(cb.predicted_mean) + "," +
                                 num(cb.observed_acc) + "," + std::to_string(cb.n));

    std::vector<TaskLoad> agent_loads;
    for (const auto& [id, p] : preds) agent_loads.push_back({id, load_map.at(id)});
    const auto buckets = tercile_buckets(agent_loads, LoadDimension::CLTotal);
    const auto ba = bucket_accuracy(group, buckets);
    json rows = json::array();
    for (int k = 0; k < 3; ++k)
      rows.push_back({{"bucket", std::string(to_string(Bucket(k)))},
                      {"accuracy", ba.accuracy[std::size_t(k)]},
                      {"trials", ba.trials[std::size_t(k)]},
                      {"tasks", buckets.sizes()[std::size_t(k)]}});
    terciles.push_back({{"agent_id", agent},
                        {"boundaries", buckets.boundaries},
                        {"overall_accuracy", acc},
                        {"buckets", rows}});

    c.out << agent << ": k = " << num(profile.k) << ", b = " << num(profile.b) << "\n";
  }

  const auto prov = provenance("fit", c.cfg, inputs);
  const std::string dir = a.out_dir.empty() ? "." : a.out_dir;
  write_files_atomically({
      {dir + "/profiles.json", json_doc({{"profiles", profiles}}, prov)},
      {dir + "/hl.json", json_doc({{"groups_requested", c.cfg.hl_groups}, {"results", hls}}, prov)},
      {dir + "/terciles.json", json_doc({{"dimension", "cl_total"}, {"agents", terciles}}, prov)},
      {dir + "/calibration.csv",
       csv_doc(prov, "agent_id,predicted_mean,observed_acc,n", calibration_rows)},
      {dir + "/decay_curve.csv",
       csv_doc(prov, "agent_id,load_mid,empirical_acc,fitted_acc,n", curve_rows)},
  });
  return kExitOk;
}

struct ValidateArgs {
  std::string loads;
  std::string trials;
  std::string profiles;
  std::string out;
};

int cmd_validate(Context& c, const ValidateArgs& a) {
  const auto loads_in = input(a.loads);
  const auto trials_in = input(a.trials);
  const auto profiles_in = input(a.profiles);
  std::vector<Diagnostic> diags;
  const auto loads = index_loads(parse_loads(loads_in, diags));
  const auto trials = parse_trials(trials_in, diags);
  if (!diags.empty()) {
    print(c.err, diags);
    return kExitData;
  }
  require_matched(trials, loads);
  const auto profiles = read_profiles(profiles_in, c.cfg.default_omega);

  json results = json::array();
  for (const auto& [agent, group] : by_agent(trials)) {
    const auto it = profiles.find(agent);
    if (it == profiles.end())
      throw NoProfiles(profiles_in.path + ": no profile for agent '" + agent + "'");
    const auto load_map = totals(loads, it->second.omega_e);
    const auto hl = hosmer_lemeshow(group, predictions(it->second.profile, load_map, group),
                                    c.cfg.hl_groups);
    results.push_back(hl_json(agent, hl));
    c.out << agent << ": chi2 = " << fixed(hl.chi2, 2) << ", dof = " << hl.dof
          << ", p = " << fixed(hl.p_value, 2) << "\n";
  }
  const auto prov = provenance("validate", c.cfg, {loads_in, trials_in, profiles_in});
  json body{{"groups_requested", c.cfg.hl_groups}, {"results", results}};
  write_files_atomically({{a.out, json_doc(body, prov)}});
  return kExitOk;
}

// ---- simulate ----------------------------------------------------------

struct SimulateArgs {
  std::string loads;
  std::vector<std::string> agents;  // id:k:b
  std::size_t trials_per_task = 1;
  std::optional<double> omega_value;
  std::string tasks;
  double k = 0.1;
  double b_node = 0.0;
  std::size_t replications = 10000;
  std::string out;
};

struct AgentSpec {
  std::string id;
  double k = 0.0;
  double b = 0.0;
};

AgentSpec parse_agent(const std::string& s) {
  const auto p2 = s.rfind(':');
  const auto p1 = p2 == std::string::npos || p2 == 0 ? std::string::npos : s.rfind(':', p2 - 1);
  if (p1 == std::string::npos || p1 == 0)
    throw ConfigError("--agent expects id:k:b, got '" + s + "'");
  AgentSpec a;
  a.id = s.substr(0, p1);
  try {
    std::size_t used = 0;
    const auto ks = s.substr(p1 + 1, p2 - p1 - 1), bs = s.substr(p2 + 1);
    a.k = std::stod(ks, &used);
    if (used != ks.size()) throw std::invalid_argument(ks);
    a.b = std::stod(bs, &used);
    if (used != bs.size()) throw std::invalid_argument(bs);
  } catch (const std::exception&) {
    throw ConfigError("--agent expects id:k:b with numeric k and b, got '" + s + "'");
  }
  if (!(a.k > 0.0) || !(a.b >= 0.0))
    throw ConfigError("--agent '" + s + "' needs k > 0 and b >= 0");
  return a;
}

int cmd_simulate(Context& c, const SimulateArgs& a) {
  if (a.loads.empty() == a.tasks.empty())
    throw ConfigError("simulate needs exactly one of --loads or --tasks");

  if (!a.tasks.empty()) {
    const auto in = input(a.tasks);
    std::vector<Diagnostic> diags;
    std::vector<std::size_t> lines;
    auto tasks = parse_tasks(in, diags, lines);
    if (!diags.empty()) {
      print(c.err, diags);
      return kExitData;
    }
    std::sort(tasks.begin(), tasks.end(),
              [](const TaskInstance& x, const TaskInstance& y) { return x.id < y.id; });
    const SimAgent agent{a.k, a.b_node, c.cfg.seed};
    const auto report =
        verify_additivity(agent, tasks, a.replications, {c.cfg.lambda}, c.cfg.jobs);
    json rows = json::array();
    for (const auto& r : report.rows)
      rows.push_back({{"task_id", r.task_id},
                      {"function_nodes", r.function_nodes},
                      {"cl_i", r.cl_i},
                      {"expected", r.expected},
                      {"empirical", r.empirical},
                      {"abs_deviation", r.abs_deviation},
                      {"sigma", r.sigma},
                      {"within_3sigma", r.within_3sigma}});
    json body{{"k", a.k},
              {"b_node", a.b_node},
              {"replications", a.replications},
              {"rows", rows},
              {"max_abs_deviation", report.max_abs_deviation},
              {"fraction_within_3sigma", report.fraction_within_3sigma}};
    write_files_atomically({{a.out, json_doc(body, provenance("simulate", c.cfg, {in}))}});
    c.out << report.rows.size() << " tasks, " << fixed(100.0 * report.fraction_within_3sigma, 1)
          << "% within 3 sigma\n";
    return kExitOk;
  }

  if (a.agents.empty()) throw ConfigError("simulate --loads needs at least one --agent id:k:b");
  if (a.trials_per_task < 1) throw ConfigError("--trials-per-task must be >= 1");
  std::vector<AgentSpec> agents;
  for (const auto& spec : a.agents) agents.push_back(parse_agent(spec));
  const auto in = input(a.loads);
  std::vector<Diagnostic> diags;
  const auto loads = index_loads(parse_loads(in, diags));
  if (!diags.empty()) {
    print(c.err, diags);
    return kExitData;
  }
  const double omega = a.omega_value.value_or(c.cfg.default_omega);
  std::vector<TaskLoad> task_loads;
  for (const auto& [id, r] : loads) task_loads.push_back({id, r.total(omega)});

  std::vector<TrialRecord> trials;
  for (const auto& agent : agents) {
    const auto seed = CounterRng::derive(c.cfg.seed, CounterRng::hash(agent.id));
    const auto part =
        sample_task_level_trials(task_loads, agent.k, agent.b, agent.id, seed, a.trials_per_task);
    trials.insert(trials.end(), part.begin(), part.end());
  }
  std::stable_sort(trials.begin(), trials.end(), [](const TrialRecord& x, const TrialRecord& y) {
    return std::tie(x.task_id, x.agent_id) < std::tie(y.task_id, y.agent_id);
  });
  std::vector<json> records;
  for (const auto& t : trials) records.push_back(trial_to_json(t));
  write_files_atomically({{a.out, jsonl_doc(provenance("simulate", c.cfg, {in}), records)}});
  c.out << records.size() << " trials written to " << a.out << "\n";
  return kExitOk;
}

// ---- gen ---------------------------------------------------------------

struct GenArgs {
  std::string grid;
  std::vector<double> targets;
  std::size_t count = 10;
  double tolerance = 1.0;
  std::size_t queries = 2;
  double mean_calls = 4.9;
  std::size_t distractors = 1;
  double interference_density = 0.3;
  std::string out;
  std::string manifest;
};

SweepConfig read_grid(const InputFile& in, const GenArgs& defaults) {
  const auto j = parse_json_file(in);
  auto keys = [&](const json& o, std::initializer_list<const char*> allowed,
                  const std::string& where) {
    if (!o.is_object()) throw ConfigError(in.path + ": " + where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : o.items())
      if (!ok.count(k)) throw ConfigError(in.path + ": unknown key '" + where + k + "'");
  };
  keys(j, {"strata", "distractors", "interference_density"}, "");
  SweepConfig cfg;
  try {
    cfg.base.distractor_count = j.value("distractors", defaults.distractors);
    cfg.base.interference_density =
        j.value("interference_density", defaults.interference_density);
    for (const auto& s : j.at("strata")) {
      keys(s, {"target", "count", "tolerance", "n_queries", "mean_calls"}, "strata.");
      cfg.strata.push_back({s.at("target").get<double>(), s.value("count", defaults.count),
                            s.value("tolerance", defaults.tolerance),
                            s.value("n_queries", defaults.queries),
                            s.value("mean_calls", defaults.mean_calls)});
    }
  } catch (const json::exception& e) {
    throw ConfigError(in.path + ": bad grid: " + e.what());
  }
  return cfg;
}

int cmd_gen(Context& c, const GenArgs& a) {
  std::vector<InputFile> inputs;
  SweepConfig cfg;
  if (!a.grid.empty()) {
    if (!a.targets.empty()) throw ConfigError("use either --grid or --targets, not both");
    inputs.push_back(input(a.grid));
    cfg = read_grid(inputs.back(), a);
  } else {
    if (a.targets.empty()) throw ConfigError("gen needs --grid or --targets");
    cfg.base.distractor_count = a.distractors;
    cfg.base.interference_density = a.interference_density;
    for (double t : a.targets)
      cfg.strata.push_back({t, a.count, a.tolerance, a.queries, a.mean_calls});
  }
  cfg.base.seed = c.cfg.seed;

  auto result = sweep(cfg, {c.cfg.lambda}, c.cfg.jobs);
  std::sort(result.tasks.begin(), result.tasks.end(),
            [](const TaskInstance& x, const TaskInstance& y) { return x.id < y.id; });

  auto prov = provenance("gen", c.cfg, inputs);
  json strata = json::array();
  std::size_t errors = 0;
  for (const auto& m : result.manifest) {
    const auto& s = cfg.strata[m.stratum];
    strata.push_back({{"stratum", m.stratum},
                      {"target", m.target},
                      {"tolerance", s.tolerance},
                      {"requested", s.count},
                      {"n", m.n},
                      {"achieved_mean", m.achieved_mean},
                      {"mean_calls", m.mean_calls},
                      {"errors", m.errors}});
    for (const auto& e : m.errors) c.err << "stratum " << m.stratum << ": " << e << "\n";
    errors += m.errors.size();
  }
  prov["grid"] = {{"distractors", cfg.base.distractor_count},
                  {"interference_density", cfg.base.interference_density}};

  std::string tasks_doc = json{{"provenance", prov}}.dump() + "\n";
  for (const auto& t : result.tasks) tasks_doc += dump_task(t) + "\n";
  std::map<std::string, std::string> files{{a.out, tasks_doc}};
  if (!a.manifest.empty()) files[a.manifest] = json_doc({{"strata", strata}}, prov);
  write_files_atomically(files);
  c.out << result.tasks.size() << " tasks written to " << a.out << "\n";
  return errors ? kExitData : kExitOk;
}

// ---- route -------------------------------------------------------------

struct RouteArgs {
  std::string loads;
  std::string profiles;
  std::string policy;
  std::string out;
};

RoutingPolicy read_policy(const InputFile& in, const std::map<std::string, ProfileEntry>& profiles) {
  const auto j = parse_json_file(in);
  if (!j.is_object()) throw ConfigError(in.path + ": policy must be an object");
  for (const auto& [k, v] : j.items())
    if (k != "kind" && k != "threshold" && k != "costs")
      throw ConfigError(in.path + ": unknown policy key '" + k + "'");
  RoutingPolicy p;
  try {
    const auto kind = j.value("kind", std::string("max_accuracy"));
    if (kind == "max_accuracy")
      p.kind = RoutingPolicy::Kind::MaxAccuracy;
    else if (kind == "cheapest_above_threshold")
      p.kind = RoutingPolicy::Kind::CheapestAboveThreshold;
    else
      throw ConfigError(in.path + ": policy kind must be max_accuracy or "
                        "cheapest_above_threshold");
    p.threshold = j.value("threshold", p.threshold);
    if (j.contains("costs"))
      p.costs = j.at("costs").get<std::map<std::string, double>>();
    else
      for (const auto& [id, e] : profiles) p.costs[id] = 1.0;
  } catch (const json::exception& e) {
    throw ConfigError(in.path + ": bad policy: " + e.what());
  }
  return p;
}

int cmd_route(Context& c, const RouteArgs& a) {
  const auto loads_in = input(a.loads);
  const auto profiles_in = input(a.profiles);
  std::vector<InputFile> inputs{loads_in, profiles_in};
  std::vector<Diagnostic> diags;
  const auto loads = index_loads(parse_loads(loads_in, diags));
  if (!diags.empty()) {
    print(c.err, diags);
    return kExitData;
  }
  const auto entries = read_profiles(profiles_in, c.cfg.default_omega);
  RoutingPolicy policy;
  if (!a.policy.empty()) {
    inputs.push_back(input(a.policy));
    policy = read_policy(inputs.back(), entries);
  } else {
    for (const auto& [id, e] : entries) policy.costs[id] = 1.0;
  }
  std::map<std::string, CognitiveProfile> profiles;
  for (const auto& [id, e] : entries) profiles[id] = e.profile;

  std::vector<json> records;
  for (const auto& [task_id, r] : loads) {
    std::map<std::string, double> task_loads;
    for (const auto& [id, e] : entries) task_loads[id] = r.total(e.omega_e);
    const auto d = route(task_id, task_loads, profiles, policy);
    records.push_back({{"task_id", d.task_id},
                       {"agent_id", d.agent_id},
                       {"predicted_accuracy", d.predicted_accuracy},
                       {"rationale", d.rationale}});
  }
  write_files_atomically({{a.out, jsonl_doc(provenance("route", c.cfg, inputs), records)}});
  c.out << records.size() << " routing decisions written to " << a.out << "\n";
  return kExitOk;
}

// ---- report ------------------------------------------------------------

struct ReportArgs {
  std::string profiles;
  std::string hl;
  std::string terciles;
  std::string out;
};

std::string cell(const json& j, const char* key, int digits) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) return "-";
  return fixed(it->get<double>(), digits);
}

int cmd_report(Context& c, const ReportArgs& a) {
  std::vector<InputFile> inputs{input(a.profiles)};
  const auto profiles = read_profiles(inputs[0], c.cfg.default_omega);
  std::ostringstream md;

  md << "# Cognitive load report\n\n## Overall accuracy\n\n"
     << "| Agent | Trials | Accuracy |\n|---|---:|---:|\n";
  for (const auto& [id, e] : profiles)
    md << "| " << id << " | " << (e.n_trials ? std::to_string(*e.n_trials) : "-") << " | "
       << (e.accuracy ? fixed(*e.accuracy, 3) : "-") << " |\n";

  md << "\n## Cognitive profiles\n\n"
     << "| Agent | k (load sensitivity) | b (baseline load) | omega_E |\n|---|---:|---:|---:|\n";
  for (const auto& [id, e] : profiles)
    md << "| " << id << " | " << fixed(e.profile.k, 3) << " | " << fixed(e.profile.b, 2) << " | "
       << fixed(e.omega_e, 2) << " |\n";

  if (!a.hl.empty()) {
    inputs.push_back(input(a.hl));
    const auto j = parse_json_file(inputs.back());
    md << "\n## Hosmer-Lemeshow goodness of fit\n\n"
       << "| Agent | chi2 | dof | p-value |\n|---|---:|---:|---:|\n";
    try {
      for (const auto& r : j.at("results")) {
        const double chi2 = r.at("chi2").get<double>();
        const int dof = r.value("dof", int(c.cfg.hl_groups) - 2);
        const double p = r.contains("p_value") && r.at("p_value").is_number()
                             ? r.at("p_value").get<double>()
                             : chi2_survival(chi2, dof);
        md << "| " << r.at("agent_id").get<std::string>() << " | " << fixed(chi2, 2) << " | "
           << dof << " | " << fixed(p, 2) << " |\n";
      }
    } catch (const json::exception& e) {
      throw ParseError(inputs.back().path + ": expected {results: [{agent_id, chi2}]}: " +
                       e.what());
    }
  }

  if (!a.terciles.empty()) {
    inputs.push_back(input(a.terciles));
    const auto j = parse_json_file(inputs.back());
    md << "\n## Accuracy by load tercile\n\n"
       << "| Agent | Low | Medium | High |\n|---|---:|---:|---:|\n";
    try {
      for (const auto& r : j.at("agents")) {
        md << "| " << r.at("agent_id").get<std::string>();
        for (const auto& b : r.at("buckets")) md << " | " << cell(b, "accuracy", 3);
        md << " |\n";
      }
    } catch (const json::exception& e) {
      throw ParseError(inputs.back().path + ": expected {agents: [{agent_id, buckets}]}: " +
                       e.what());
    }
  }

  const std::string doc =
      "<!-- provenance: " + provenance("report", c.cfg, inputs).dump() + " -->\n" + md.str();
  if (a.out.empty())
    c.out << doc;
  else
    write_files_atomically({{a.out, doc}});
  return kExitOk;
}

// ---- dispatch ----------------------------------------------------------

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e))
    return kExitConfig;
  if (dynamic_cast<const ScorerUnavailable*>(&e) || dynamic_cast<const MalformedScore*>(&e))
    return kExitRemote;
  return kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cognitive load analysis for multi-turn tool-use tasks", "tigload"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  double lambda = 0.5;
  std::size_t jobs = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for simulation and generation");
  auto* lambda_opt = app.add_option("--lambda", lambda, "Interference weight in edge weights");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads");
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);

  std::function<int(Context&)> action;

  TaskArgs analyze_args;
  auto* analyze = app.add_subcommand("analyze", "Compute CL_I and CL_E for a tasks JSONL file");
  analyze->add_option("--tasks", analyze_args.tasks, "tigload/1 tasks, one per line")->required();
  analyze->add_option("--out", analyze_args.out, "Output loads JSONL")->required();
  analyze->callback([&] { action = [&](Context& c) { return cmd_analyze(c, analyze_args, true); }; });

  TaskArgs score_args;
  auto* score = app.add_subcommand("score", "Compute CL_E only");
  score->add_option("--tasks", score_args.tasks)->required();
  score->add_option("--out", score_args.out)->required();
  score->callback([&] { action = [&](Context& c) { return cmd_analyze(c, score_args, false); }; });

  CalibrateArgs cal_args;
  auto* cal = app.add_subcommand("calibrate-omega", "Calibrate omega_E from tercile accuracy drops");
  cal->add_option("--loads", cal_args.loads, "Loads JSONL with cl_i and cl_e")->required();
  cal->add_option("--trials", cal_args.trials, "Trials JSONL")->required();
  cal->add_option("--out", cal_args.out, "Output JSON")->required();
  cal->add_flag("--pooled", cal_args.pooled, "One omega_E from every agent's trials");
  cal->callback([&] { action = [&](Context& c) { return cmd_calibrate(c, cal_args); }; });

  FitArgs fit_args;
  double fit_omega = 1.0;
  auto* fit = app.add_subcommand("fit", "Fit cognitive profiles and calibration statistics");
  fit->add_option("--loads", fit_args.loads)->required();
  fit->add_option("--trials", fit_args.trials)->required();
  fit->add_option("--out-dir", fit_args.out_dir, "Directory for the fit artifacts")->required();
  auto* fit_omega_file = fit->add_option("--omega", fit_args.omega_file, "calibrate-omega output");
  auto* fit_omega_opt = fit->add_option("--omega-value", fit_omega, "omega_E for every agent");
  fit_omega_file->excludes(fit_omega_opt);
  fit->callback([&] {
    if (fit_omega_opt->count()) fit_args.omega_value = fit_omega;
    action = [&](Context& c) { return cmd_fit(c, fit_args); };
  });

  ValidateArgs val_args;
  auto* val = app.add_subcommand("validate", "Hosmer-Lemeshow test of given profiles");
  val->add_option("--loads", val_args.loads)->required();
  val->add_option("--trials", val_args.trials)->required();
  val->add_option("--profiles", val_args.profiles)->required();
  val->add_option("--out", val_args.out)->required();
  val->callback([&] { action = [&](Context& c) { return cmd_validate(c, val_args); }; });

  SimulateArgs sim_args;
  double sim_omega = 1.0;
  auto* sim = app.add_subcommand("simulate", "Sample synthetic trials or check additivity");
  sim->add_option("--loads", sim_args.loads, "Task-level mode: loads JSONL");
  sim->add_option("--agent", sim_args.agents, "Task-level agent as id:k:b (repeatable)");
  sim->add_option("--trials-per-task", sim_args.trials_per_task);
  auto* sim_omega_opt = sim->add_option("--omega-value", sim_omega, "omega_E for cl_i + cl_e");
  sim->add_option("--tasks", sim_args.tasks, "Node-level mode: tasks JSONL");
  sim->add_option("--k", sim_args.k, "Node-level load sensitivity");
  sim->add_option("--b-node", sim_args.b_node, "Node-level per-operation baseline");
  sim->add_option("--replications", sim_args.replications);
  sim->add_option("--out", sim_args.out)->required();
  sim->callback([&] {
    if (sim_omega_opt->count()) sim_args.omega_value = sim_omega;
    action = [&](Context& c) { return cmd_simulate(c, sim_args); };
  });

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Generate tasks at target intrinsic loads");
  gen->add_option("--grid", gen_args.grid, "JSON grid {strata: [...]}");
  gen->add_option("--targets", gen_args.targets, "Comma-separated CL_I targets")->delimiter(',');
  gen->add_option("--count", gen_args.count, "Tasks per target");
  gen->add_option("--tolerance", gen_args.tolerance);
  gen->add_option("--queries", gen_args.queries, "Queries per task");
  gen->add_option("--mean-calls", gen_args.mean_calls, "Mean function calls per task");
  gen->add_option("--distractors", gen_args.distractors, "Distractor tools per task");
  gen->add_option("--interference-density", gen_args.interference_density);
  gen->add_option("--out", gen_args.out, "Output tasks JSONL")->required();
  gen->add_option("--manifest", gen_args.manifest, "Output manifest JSON");
  gen->callback([&] { action = [&](Context& c) { return cmd_gen(c, gen_args); }; });

  RouteArgs route_args;
  auto* rt = app.add_subcommand("route", "Pick an agent per task from cognitive profiles");
  rt->add_option("--loads", route_args.loads)->required();
  rt->add_option("--profiles", route_args.profiles)->required();
  rt->add_option("--policy", route_args.policy, "JSON {kind, threshold, costs}");
  rt->add_option("--out", route_args.out)->required();
  rt->callback([&] { action = [&](Context& c) { return cmd_route(c, route_args); }; });

  ReportArgs report_args;
  auto* rep = app.add_subcommand("report", "Markdown summary of fit artifacts");
  rep->add_option("--profiles", report_args.profiles)->required();
  rep->add_option("--hl", report_args.hl);
  rep->add_option("--terciles", report_args.terciles);
  rep->add_option("--out", report_args.out, "Output file (stdout when absent)");
  rep->callback([&] { action = [&](Context& c) { return cmd_report(c, report_args); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (lambda_opt->count()) {
      if (!(lambda >= 0.0)) throw ConfigError("--lambda must be >= 0");
      cfg.lambda = lambda;
    }
    if (jobs_opt->count()) {
      if (jobs < 1) throw ConfigError("--jobs must be >= 1");
      cfg.jobs = jobs;
    }
    Context ctx{cfg, out, err};
    return action(ctx);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  }
}

}  // namespace tigload
