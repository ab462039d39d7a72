#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "tigload/core_model.hpp"

namespace tigload {

struct QueryLoad {
  std::size_t query_index = 0;
  double ambiguity = 0.0;    // [0, 1]
  double distraction = 0.0;  // [0, 1]
  double total = 0.0;        // ambiguity + distraction
};

struct ExtraneousReport {
  std::vector<QueryLoad> per_query;
  double total = 0.0;
  std::string scorer_id;
};

struct HeuristicScorerConfig {
  double ambiguity_weight = 1.0;
  double distraction_weight = 1.0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};
};

struct RemoteScorerConfig {
  // Full URL of an OpenAI-compatible chat completions endpoint.
  std::string endpoint;
  std::string model;
  // Name of the environment variable holding the bearer credential.
  std::string api_key_env = "TIGLOAD_API_KEY";
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds read_timeout{60000};
  int max_concurrency = 4;
  RetryPolicy retry;
  std::string cache_path;       // JSONL; empty disables caching
  std::string provenance_path;  // JSONL; empty disables the log
};

using ScorerConfig = std::variant<HeuristicScorerConfig, RemoteScorerConfig>;

class QueryScorer {
 public:
  virtual ~QueryScorer() = default;
  virtual std::string id() const = 0;
  // Throws ScorerUnavailable or MalformedScore; never returns a default.
  virtual QueryLoad score(const Query& q, const TaskInstance& task) = 0;
};

std::unique_ptr<QueryScorer> make_scorer(const ScorerConfig& cfg);

QueryLoad score_query(const Query& q, const TaskInstance& task,
                      const ScorerConfig& cfg);

ExtraneousReport extraneous_load(const TaskInstance& task, QueryScorer& scorer);
ExtraneousReport extraneous_load(const TaskInstance& task,
                                 const ScorerConfig& cfg);

// One report per task, in input order. The scorer must be safe to call
// concurrently (both built-in scorers are).
std::vector<ExtraneousReport> extraneous_load_batch(
    std::span<const TaskInstance> tasks, QueryScorer& scorer, std::size_t jobs);

// Heuristic scorer pieces, exposed for inspection and tests.
namespace heuristic {

// Lowercased alphanumeric tokens of a tool's name and description.
std::set<std::string> tool_tokens(const ToolSpec& tool);
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// Function nodes attributed to a query: those whose closest preceding query
// node in the linearization is that query's node. Nodes placed before any
// query belong to query 0.
std::vector<std::string> calls_of_query(const TaskInstance& task,
                                        std::size_t query_index);

// Unresolved referents over referent slots. A slot is an entity consumed by
// one of the query's calls that no earlier tool call delivers over a data
// edge; it is resolved when the query itself mentions that entity.
double ambiguity(const TaskInstance& task, std::size_t query_index);

// Highest name+description Jaccard similarity between a distractor tool
// (unused by any call) and a tool the query's calls use. Queries without
// calls are compared against every tool the task uses.
double distraction(const TaskInstance& task, std::size_t query_index);

}  // namespace heuristic

class HeuristicScorer final : public QueryScorer {
 public:
  explicit HeuristicScorer(HeuristicScorerConfig cfg = {}) : cfg_(cfg) {}
  std::string id() const override { return "heuristic/1"; }
  QueryLoad score(const Query& q, const TaskInstance& task) override;

 private:
  HeuristicScorerConfig cfg_;
};

// Append-only JSONL store of {key, ambiguity, distraction, raw}.
class ScoreCache {
 public:
  struct Entry {
    double ambiguity = 0.0;
    double distraction = 0.0;
    std::string raw;
  };

  explicit ScoreCache(std::string path);

  static std::string key(std::string_view scorer_id, std::string_view task_id,
                         std::size_t query_index);

  std::optional<Entry> find(const std::string& key) const;
  void store(const std::string& key, const Entry& entry);

 private:
  std::string path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
};

// Extracts the two scores from a model reply. The reply must contain exactly
// one fenced block tagged `scores` whose body is two non-negative decimals
// (ambiguity, then distraction) separated by whitespace or a comma. Anything
// else throws MalformedScore. Values are returned unclamped.
std::pair<double, double> parse_score_reply(const std::string& reply);

std::string build_scoring_prompt(const Query& q, const TaskInstance& task);

class RemoteLlmScorer final : public QueryScorer {
 public:
  explicit RemoteLlmScorer(RemoteScorerConfig cfg);
  ~RemoteLlmScorer() override;

  std::string id() const override { return "remote:" + cfg_.model; }
  QueryLoad score(const Query& q, const TaskInstance& task) override;

  // Requests actually sent, retries included.
  std::size_t requests_sent() const;

 private:
  std::string complete(const std::string& prompt, int& attempts);
  void log_provenance(const std::string& key, const std::string& raw,
                      int attempts);

  RemoteScorerConfig cfg_;
  std::string scheme_host_;
  std::string path_;
  std::unique_ptr<ScoreCache> cache_;

  std::mutex slots_mu_;
  std::condition_variable slots_cv_;
  int in_flight_ = 0;

  mutable std::mutex log_mu_;
  std::size_t requests_ = 0;
};

}  // namespace tigload
