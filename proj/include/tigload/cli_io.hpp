#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tigload/extraneous_load.hpp"
#include "tigload/fit_stats.hpp"
#include "tigload/trial.hpp"

namespace tigload {

// Everything that shapes a command's output. Serialized into the provenance
// block of every artifact. Output locations and the worker count are left
// out, since neither changes what gets written.
struct RunConfig {
  double lambda = 0.5;
  ScorerConfig scorer = HeuristicScorerConfig{};
  // "per_agent" or "pooled" (one omega from all agents' trials).
  std::string omega_mode = "per_agent";
  // Used when a command needs omega and none was calibrated.
  double default_omega = 1.0;
  FitOptions fit;
  std::size_t hl_groups = 10;
  std::size_t calibration_bins = 10;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Overlays the members present in `j` onto `base`. Throws ConfigError on
// unknown keys or values of the wrong type or range.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path, RunConfig base = {});

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

// Throws ParseError when the file cannot be read.
std::string read_file(const std::string& path);

struct InputFile {
  std::string path;
  std::string content;
};

// {schema, command, config, inputs: [{path, sha256}]}
nlohmann::json provenance(const std::string& command, const RunConfig& cfg,
                          const std::vector<InputFile>& inputs);

// Writes every file to a temporary sibling first and renames them into place
// only once all writes succeeded.
void write_files_atomically(const std::map<std::string, std::string>& files);

struct NumberedLine {
  std::size_t number = 0;  // 1-based
  std::string text;
};

// Non-blank lines of a JSONL document, skipping a leading provenance record.
std::vector<NumberedLine> jsonl_records(const std::string& content);

// True for the {"provenance": ...} header line.
bool is_provenance_record(const nlohmann::json& j);

struct Diagnostic {
  std::string file;
  std::size_t line = 0;  // 0 when not tied to a line
  std::string message;
};
std::string to_string(const Diagnostic& d);

// Loads as written by `analyze` (or any JSONL of {task_id, cl_i, cl_e} or
// {task_id, cl_total}).
struct LoadRecord {
  std::string task_id;
  std::optional<double> cl_i;
  std::optional<double> cl_e;
  std::optional<double> cl_total;

  // cl_total when present, else cl_i + omega * cl_e.
  double total(double omega) const;
};

// Parsers collect per-line diagnostics instead of stopping at the first bad
// line; callers decide whether diagnostics are fatal.
std::vector<LoadRecord> parse_loads(const InputFile& in, std::vector<Diagnostic>& diags);
std::vector<TrialRecord> parse_trials(const InputFile& in, std::vector<Diagnostic>& diags);

nlohmann::json trial_to_json(const TrialRecord& t);

}  // namespace tigload
