#include "tigload/cli_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "tigload/errors.hpp"
#include "tigload/task_io.hpp"

namespace tigload {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

void read_ms(const json& j, const char* key, std::chrono::milliseconds& out,
             const std::string& where) {
  long long ms = out.count();
  read(j, key, ms, where);
  if (ms < 0) throw ConfigError("config key '" + where + key + "' must be >= 0");
  out = std::chrono::milliseconds(ms);
}

ScorerConfig scorer_from_json(const json& j) {
  std::string kind = "heuristic";
  read(j, "kind", kind, "scorer.");
  if (kind == "heuristic") {
    check_keys(j, "scorer.", {"kind", "ambiguity_weight", "distraction_weight"});
    HeuristicScorerConfig h;
    read(j, "ambiguity_weight", h.ambiguity_weight, "scorer.");
    read(j, "distraction_weight", h.distraction_weight, "scorer.");
    if (h.ambiguity_weight < 0 || h.distraction_weight < 0)
      throw ConfigError("heuristic scorer weights must be >= 0");
    return h;
  }
  if (kind != "remote")
    throw ConfigError("scorer.kind must be 'heuristic' or 'remote', got '" + kind + "'");
  check_keys(j, "scorer.",
             {"kind", "endpoint", "model", "api_key_env", "connect_timeout_ms",
              "read_timeout_ms", "max_concurrency", "retry", "cache_path",
              "provenance_path"});
  RemoteScorerConfig r;
  read(j, "endpoint", r.endpoint, "scorer.");
  read(j, "model", r.model, "scorer.");
  read(j, "api_key_env", r.api_key_env, "scorer.");
  read_ms(j, "connect_timeout_ms", r.connect_timeout, "scorer.");
  read_ms(j, "read_timeout_ms", r.read_timeout, "scorer.");
  read(j, "max_concurrency", r.max_concurrency, "scorer.");
  read(j, "cache_path", r.cache_path, "scorer.");
  read(j, "provenance_path", r.provenance_path, "scorer.");
  if (auto it = j.find("retry"); it != j.end()) {
    check_keys(*it, "scorer.retry.",
               {"max_retries", "initial_backoff_ms", "multiplier", "max_backoff_ms"});
    read(*it, "max_retries", r.retry.max_retries, "scorer.retry.");
    read_ms(*it, "initial_backoff_ms", r.retry.initial_backoff, "scorer.retry.");
    read(*it, "multiplier", r.retry.multiplier, "scorer.retry.");
    read_ms(*it, "max_backoff_ms", r.retry.max_backoff, "scorer.retry.");
    if (r.retry.max_retries < 0 || !(r.retry.multiplier >= 1.0))
      throw ConfigError("scorer.retry needs max_retries >= 0 and multiplier >= 1");
  }
  if (r.endpoint.empty() || r.model.empty())
    throw ConfigError("remote scorer needs 'endpoint' and 'model'");
  if (r.max_concurrency < 1) throw ConfigError("scorer.max_concurrency must be >= 1");
  return r;
}

json scorer_to_json(const ScorerConfig& cfg) {
  if (const auto* h = std::get_if<HeuristicScorerConfig>(&cfg))
    return {{"kind", "heuristic"},
            {"ambiguity_weight", h->ambiguity_weight},
            {"distraction_weight", h->distraction_weight}};
  const auto& r = std::get<RemoteScorerConfig>(cfg);
  return {{"kind", "remote"},
          {"endpoint", r.endpoint},
          {"model", r.model},
          {"api_key_env", r.api_key_env},
          {"connect_timeout_ms", r.connect_timeout.count()},
          {"read_timeout_ms", r.read_timeout.count()},
          {"max_concurrency", r.max_concurrency},
          {"retry",
           {{"max_retries", r.retry.max_retries},
            {"initial_backoff_ms", r.retry.initial_backoff.count()},
            {"multiplier", r.retry.multiplier},
            {"max_backoff_ms", r.retry.max_backoff.count()}}},
          {"cache_path", r.cache_path},
          {"provenance_path", r.provenance_path}};
}

std::optional<double> optional_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ParseError(std::string("'") + key + "' is not a number");
  return it->get<double>();
}

}  // namespace

RunConfig run_config_from_json(const json& j, RunConfig cfg) {
  check_keys(j, "",
             {"lambda", "seed", "jobs", "omega_mode", "default_omega", "hl_groups",
              "calibration_bins", "fit", "scorer"});
  read(j, "lambda", cfg.lambda, "");
  read(j, "seed", cfg.seed, "");
  read(j, "jobs", cfg.jobs, "");
  read(j, "omega_mode", cfg.omega_mode, "");
  read(j, "default_omega", cfg.default_omega, "");
  read(j, "hl_groups", cfg.hl_groups, "");
  read(j, "calibration_bins", cfg.calibration_bins, "");
  if (auto it = j.find("fit"); it != j.end()) {
    check_keys(*it, "fit.",
               {"method", "n_bins", "min_bin_count", "min_bins", "nonlinear_refine"});
    std::string method = cfg.fit.method == FitMethod::MaximumLikelihood ? "mle" : "binned";
    read(*it, "method", method, "fit.");
    if (method == "binned")
      cfg.fit.method = FitMethod::BinnedLeastSquares;
    else if (method == "mle")
      cfg.fit.method = FitMethod::MaximumLikelihood;
    else
      throw ConfigError("fit.method must be 'binned' or 'mle', got '" + method + "'");
    read(*it, "n_bins", cfg.fit.n_bins, "fit.");
    read(*it, "min_bin_count", cfg.fit.min_bin_count, "fit.");
    read(*it, "min_bins", cfg.fit.min_bins, "fit.");
    read(*it, "nonlinear_refine", cfg.fit.nonlinear_refine, "fit.");
  }
  if (auto it = j.find("scorer"); it != j.end()) cfg.scorer = scorer_from_json(*it);

  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (cfg.omega_mode != "per_agent" && cfg.omega_mode != "pooled")
    throw ConfigError("omega_mode must be 'per_agent' or 'pooled'");
  if (!(cfg.default_omega >= 0.0)) throw ConfigError("default_omega must be >= 0");
  if (cfg.hl_groups < 3) throw ConfigError("hl_groups must be >= 3");
  if (cfg.calibration_bins < 1) throw ConfigError("calibration_bins must be >= 1");
  if (cfg.fit.n_bins < 2 || cfg.fit.min_bins < 2)
    throw ConfigError("fit.n_bins and fit.min_bins must be >= 2");
  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  return {{"lambda", cfg.lambda},
          {"seed", cfg.seed},
          {"omega_mode", cfg.omega_mode},
          {"default_omega", cfg.default_omega},
          {"hl_groups", cfg.hl_groups},
          {"calibration_bins", cfg.calibration_bins},
          {"fit",
           {{"method", cfg.fit.method == FitMethod::MaximumLikelihood ? "mle" : "binned"},
            {"n_bins", cfg.fit.n_bins},
            {"min_bin_count", cfg.fit.min_bin_count},
            {"min_bins", cfg.fit.min_bins},
            {"nonlinear_refine", cfg.fit.nonlinear_refine}}},
          {"scorer", scorer_to_json(cfg.scorer)}};
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json provenance(const std::string& command, const RunConfig& cfg,
                const std::vector<InputFile>& inputs) {
  json files = json::array();
  for (const auto& in : inputs)
    files.push_back({{"path", in.path}, {"sha256", sha256_hex(in.content)}});
  return {{"schema", std::string(kSchemaVersion)},
          {"command", command},
          {"config", run_config_to_json(cfg)},
          {"inputs", files}};
}

void write_files_atomically(const std::map<std::string, std::string>& files) {
  std::vector<std::pair<fs::path, fs::path>> staged;
  auto discard = [&] {
    std::error_code ec;
    for (const auto& [tmp, dst] : staged) fs::remove(tmp, ec);
  };
  for (const auto& [path, content] : files) {
    const fs::path dst(path);
    if (dst.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(dst.parent_path(), ec);
    }
    fs::path tmp = dst;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    staged.emplace_back(tmp, dst);
    out << content;
    out.close();
    if (!out) {
      discard();
      throw ParseError("cannot write " + tmp.string());
    }
  }
  for (const auto& [tmp, dst] : staged) {
    std::error_code ec;
    fs::rename(tmp, dst, ec);
    if (ec) {
      discard();
      throw ParseError("cannot move " + tmp.string() + " to " + dst.string() + ": " +
                       ec.message());
    }
  }
}

bool is_provenance_record(const json& j) {
  return j.is_object() && j.size() == 1 && j.contains("provenance");
}

std::vector<NumberedLine> jsonl_records(const std::string& content) {
  std::vector<NumberedLine> out;
  std::istringstream in(content);
  std::string line;
  std::size_t number = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (first) {
      first = false;
      if (line.find("\"provenance\"") != std::string::npos) {
        try {
          if (is_provenance_record(json::parse(line))) continue;
        } catch (const json::exception&) {
        }
      }
    }
    out.push_back({number, std::move(line)});
  }
  return out;
}

std::string to_string(const Diagnostic& d) {
  std::string out = d.file;
  if (d.line) out += ":" + std::to_string(d.line);
  return out + ": " + d.message;
}

double LoadRecord::total(double omega) const {
  if (cl_total) return *cl_total;
  return cl_i.value_or(0.0) + omega * cl_e.value_or(0.0);
}

std::vector<LoadRecord> parse_loads(const InputFile& in, std::vector<Diagnostic>& diags) {
  std::vector<LoadRecord> out;
  std::set<std::string> seen;
  for (const auto& line : jsonl_records(in.content)) {
    try {
      const auto j = json::parse(line.text);
      if (!j.is_object()) throw ParseError("record is not a JSON object");
      LoadRecord r;
      auto id = j.find("task_id");
      if (id == j.end() || !id->is_string()) throw ParseError("missing string 'task_id'");
      r.task_id = id->get<std::string>();
      r.cl_i = optional_number(j, "cl_i");
      r.cl_e = optional_number(j, "cl_e");
      r.cl_total = optional_number(j, "cl_total");
      if (!r.cl_total && !r.cl_i) throw ParseError("needs 'cl_i' or 'cl_total'");
      for (auto v : {r.cl_i, r.cl_e, r.cl_total})
        if (v && !(*v >= 0.0)) throw ParseError("loads must be >= 0");
      if (!seen.insert(r.task_id).second)
        throw ParseError("duplicate task_id '" + r.task_id + "'");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      diags.push_back({in.path, line.number, std::string("malformed JSON: ") + e.what()});
    } catch (const ParseError& e) {
      diags.push_back({in.path, line.number, e.what()});
    }
  }
  return out;
}

std::vector<TrialRecord> parse_trials(const InputFile& in, std::vector<Diagnostic>& diags) {
  std::vector<TrialRecord> out;
  for (const auto& line : jsonl_records(in.content)) {
    try {
      const auto j = json::parse(line.text);
      if (!j.is_object()) throw ParseError("record is not a JSON object");
      auto task = j.find("task_id");
      auto agent = j.find("agent_id");
      auto ok = j.find("success");
      if (task == j.end() || !task->is_string()) throw ParseError("missing string 'task_id'");
      if (agent == j.end() || !agent->is_string())
        throw ParseError("missing string 'agent_id'");
      if (ok == j.end() || !(ok->is_boolean() || ok->is_number_integer()))
        throw ParseError("'success' must be a boolean");
      bool success = ok->is_boolean() ? ok->get<bool>() : ok->get<long long>() != 0;
      if (ok->is_number_integer() && ok->get<long long>() != 0 && ok->get<long long>() != 1)
        throw ParseError("'success' must be a boolean");
      out.push_back({task->get<std::string>(), agent->get<std::string>(), success});
    } catch (const json::exception& e) {
      diags.push_back({in.path, line.number, std::string("malformed JSON: ") + e.what()});
    } catch (const ParseError& e) {
      diags.push_back({in.path, line.number, e.what()});
    }
  }
  return out;
}

json trial_to_json(const TrialRecord& t) {
  return {{"task_id", t.task_id}, {"agent_id", t.agent_id}, {"success", t.success}};
}

}  // namespace tigload
