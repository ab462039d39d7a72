#include "tigload/extraneous_load.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tigload/errors.hpp"
#include "tigload/parallel.hpp"

namespace tigload {

using nlohmann::json;

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

QueryLoad make_load(std::size_t index, double ambiguity, double distraction) {
  QueryLoad out;
  out.query_index = index;
  out.ambiguity = clamp01(ambiguity);
  out.distraction = clamp01(distraction);
  out.total = out.ambiguity + out.distraction;
  return out;
}

std::size_t query_position(const TaskInstance& task, const Query& q) {
  for (std::size_t i = 0; i < task.queries.size(); ++i)
    if (&task.queries[i] == &q) return i;
  if (q.index < task.queries.size()) return q.index;
  throw InvalidTask("query " + std::to_string(q.index) +
                    " does not belong to task '" + task.id + "'");
}

const ToolSpec* find_tool(const TaskInstance& task, const std::string& name) {
  for (const auto& t : task.tools)
    if (t.name == name) return &t;
  return nullptr;
}

}  // namespace

namespace heuristic {

std::set<std::string> tool_tokens(const ToolSpec& tool) {
  std::set<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.insert(std::move(cur));
    cur.clear();
  };
  for (const std::string* text : {&tool.name, &tool.description}) {
    for (unsigned char c : *text) {
      if (std::isalnum(c))
        cur.push_back(static_cast<char>(std::tolower(c)));
      else
        flush();
    }
    flush();
  }
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : a) common += b.count(t);
  return static_cast<double>(common) /
         static_cast<double>(a.size() + b.size() - common);
}

std::vector<std::string> calls_of_query(const TaskInstance& task,
                                        std::size_t query_index) {
  Linearization lin(task.graph);
  auto qidx = query_node_indices(task.graph);
  std::vector<std::string> out;
  for (std::size_t p = 0; p < lin.order().size(); ++p) {
    const auto& n = lin.at(p);
    if (n.is_query()) continue;
    std::size_t owner = 0;
    if (auto qp = lin.owning_query_position(p)) owner = qidx.at(lin.at(*qp).id);
    if (owner == query_index) out.push_back(n.id);
  }
  return out;
}

double ambiguity(const TaskInstance& task, std::size_t query_index) {
  const auto& q = task.queries.at(query_index);
  std::unordered_map<std::string, const GraphNode*> by_id;
  for (const auto& n : task.graph.nodes) by_id.emplace(n.id, &n);

  std::size_t slots = 0, unresolved = 0;
  for (const auto& call : calls_of_query(task, query_index)) {
    const GraphNode& node = *by_id.at(call);
    std::set<EntityRef> seen;
    for (const auto& x : node.consumes) {
      if (!seen.insert(x).second) continue;
      const bool from_tool = std::any_of(
          task.graph.edges.begin(), task.graph.edges.end(),
          [&](const DepEdge& e) {
            if (e.dst != node.id || e.kind != EdgeKind::Data || e.entity != x)
              return false;
            auto src = by_id.find(e.src);
            return src != by_id.end() && !src->second->is_query();
          });
      if (from_tool) continue;
      ++slots;
      const auto& m = q.mentioned_entities;
      if (std::find(m.begin(), m.end(), x) == m.end()) ++unresolved;
    }
  }
  return slots == 0 ? 0.0
                    : static_cast<double>(unresolved) /
                          static_cast<double>(slots);
}

double distraction(const TaskInstance& task, std::size_t query_index) {
  std::set<std::string> used;
  for (const auto& n : task.graph.nodes)
    if (!n.is_query()) used.insert(n.tool_name);

  std::set<std::string> required;
  std::unordered_map<std::string, std::string> tool_of;
  for (const auto& n : task.graph.nodes) tool_of.emplace(n.id, n.tool_name);
  for (const auto& call : calls_of_query(task, query_index))
    required.insert(tool_of.at(call));
  if (required.empty()) required = used;

  std::vector<std::set<std::string>> required_tokens;
  for (const auto& name : required)
    if (const auto* t = find_tool(task, name))
      required_tokens.push_back(tool_tokens(*t));

  double best = 0.0;
  for (const auto& t : task.tools) {
    if (used.count(t.name)) continue;
    const auto d = tool_tokens(t);
    for (const auto& r : required_tokens) best = std::max(best, jaccard(d, r));
  }
  return best;
}

}  // namespace heuristic

QueryLoad HeuristicScorer::score(const Query& q, const TaskInstance& task) {
  const auto i = query_position(task, q);
  return make_load(i, cfg_.ambiguity_weight * heuristic::ambiguity(task, i),
                   cfg_.distraction_weight * heuristic::distraction(task, i));
}

std::unique_ptr<QueryScorer> make_scorer(const ScorerConfig& cfg) {
  if (const auto* h = std::get_if<HeuristicScorerConfig>(&cfg))
    return std::make_unique<HeuristicScorer>(*h);
  return std::make_unique<RemoteLlmScorer>(std::get<RemoteScorerConfig>(cfg));
}

QueryLoad score_query(const Query& q, const TaskInstance& task,
                      const ScorerConfig& cfg) {
  return make_scorer(cfg)->score(q, task);
}

ExtraneousReport extraneous_load(const TaskInstance& task,
                                 QueryScorer& scorer) {
  ExtraneousReport out;
  out.scorer_id = scorer.id();
  for (const auto& q : task.queries) {
    out.per_query.push_back(scorer.score(q, task));
    out.total += out.per_query.back().total;
  }
  return out;
}

ExtraneousReport extraneous_load(const TaskInstance& task,
                                 const ScorerConfig& cfg) {
  auto scorer = make_scorer(cfg);
  return extraneous_load(task, *scorer);
}

std::vector<ExtraneousReport> extraneous_load_batch(
    std::span<const TaskInstance> tasks, QueryScorer& scorer,
    std::size_t jobs) {
  std::vector<ExtraneousReport> out(tasks.size());
  parallel_for(tasks.size(), jobs,
               [&](std::size_t i) { out[i] = extraneous_load(tasks[i], scorer); });
  return out;
}

// ---------------------------------------------------------------------------
// Score cache

ScoreCache::ScoreCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      entries_[j.at("key").get<std::string>()] = {
          j.at("ambiguity").get<double>(), j.at("distraction").get<double>(),
          j.value("raw", std::string())};
    } catch (const json::exception& e) {
      throw ParseError(path_ + ":" + std::to_string(lineno) +
                       ": bad cache record: " + e.what());
    }
  }
}

std::string ScoreCache::key(std::string_view scorer_id,
                            std::string_view task_id,
                            std::size_t query_index) {
  std::string k(scorer_id);
  k += '|';
  k += task_id;
  k += '|';
  k += std::to_string(query_index);
  return k;
}

std::optional<ScoreCache::Entry> ScoreCache::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::store(const std::string& key, const Entry& entry) {
  std::lock_guard lock(mu_);
  entries_[key] = entry;
  std::ofstream out(path_, std::ios::app);
  out << json{{"key", key},
              {"ambiguity", entry.ambiguity},
              {"distraction", entry.distraction},
              {"raw", entry.raw}}
             .dump()
      << '\n';
  if (!out) throw Error("cannot append to score cache " + path_);
}

// ---------------------------------------------------------------------------
// Remote scorer

std::pair<double, double> parse_score_reply(const std::string& reply) {
  static const std::regex fence(R"(```scores[ \t]*\r?\n([^`]*?)\r?\n?```)");
  static const std::regex body(
      R"(^\s*([0-9]+(?:\.[0-9]+)?)\s*(?:,\s*|\s+)([0-9]+(?:\.[0-9]+)?)\s*$)");

  auto begin = std::sregex_iterator(reply.begin(), reply.end(), fence);
  const auto count = std::distance(begin, std::sregex_iterator());
  if (count != 1)
    throw MalformedScore("expected exactly one ```scores block, found " +
                         std::to_string(count));
  const std::string inner = (*begin)[1].str();
  std::smatch m;
  if (!std::regex_match(inner, m, body))
    throw MalformedScore("scores block is not two decimals: '" + inner + "'");
  return {std::stod(m[1].str()), std::stod(m[2].str())};
}

std::string build_scoring_prompt(const Query& q, const TaskInstance& task) {
  std::ostringstream os;
  os << "You rate how hard a user request is to act on for a tool-using "
        "assistant, judging presentation only.\n\n";
  os << "Available tools:\n";
  for (const auto& t : task.tools) os << "- " << t.name << ": " << t.description << '\n';
  os << "\nConversation so far:\n";
  for (const auto& prev : task.queries) {
    if (prev.index >= q.index) break;
    os << "[user " << prev.index << "] " << prev.text << '\n';
  }
  os << "\nRequest to rate:\n[user " << q.index << "] " << q.text << "\n\n";
  os << "Give two scores in [0, 1]:\n"
        "1. ambiguity: how underspecified or unclear the request is.\n"
        "2. distraction: how likely irrelevant but plausible tools are to be "
        "chosen instead of the right ones.\n\n"
        "Answer with exactly one fenced block and nothing inside it but the "
        "two numbers, ambiguity first:\n"
        "```scores\n0.00 0.00\n```\n";
  return os.str();
}

RemoteLlmScorer::RemoteLlmScorer(RemoteScorerConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url))
    throw ConfigError("remote scorer endpoint is not an http(s) URL: '" +
                      cfg_.endpoint + "'");
  scheme_host_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
  if (cfg_.model.empty()) throw ConfigError("remote scorer needs a model name");
  if (cfg_.max_concurrency < 1)
    throw ConfigError("remote scorer max_concurrency must be >= 1");
  if (!cfg_.cache_path.empty())
    cache_ = std::make_unique<ScoreCache>(cfg_.cache_path);
}

RemoteLlmScorer::~RemoteLlmScorer() = default;

std::size_t RemoteLlmScorer::requests_sent() const {
  std::lock_guard lock(log_mu_);
  return requests_;
}

QueryLoad RemoteLlmScorer::score(const Query& q, const TaskInstance& task) {
  const auto index = query_position(task, q);
  const auto key = ScoreCache::key(id(), task.id, index);
  if (cache_) {
    if (auto hit = cache_->find(key))
      return make_load(index, hit->ambiguity, hit->distraction);
  }

  int attempts = 0;
  const std::string raw = complete(build_scoring_prompt(q, task), attempts);
  log_provenance(key, raw, attempts);
  const auto [amb, dist] = parse_score_reply(raw);
  const auto load = make_load(index, amb, dist);
  if (cache_) cache_->store(key, {load.ambiguity, load.distraction, raw});
  return load;
}

std::string RemoteLlmScorer::complete(const std::string& prompt,
                                      int& attempts) {
  // Bound the number of requests in flight across threads.
  {
    std::unique_lock lock(slots_mu_);
    slots_cv_.wait(lock, [&] { return in_flight_ < cfg_.max_concurrency; });
    ++in_flight_;
  }
  struct SlotRelease {
    RemoteLlmScorer* self;
    ~SlotRelease() {
      {
        std::lock_guard lock(self->slots_mu_);
        --self->in_flight_;
      }
      self->slots_cv_.notify_one();
    }
  } release{this};

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const std::string body =
      json{{"model", cfg_.model},
           {"temperature", 0},
           {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}}
          .dump();

  auto backoff = cfg_.retry.initial_backoff;
  std::string last_error;
  for (attempts = 1; attempts <= cfg_.retry.max_retries + 1; ++attempts) {
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(cfg_.connect_timeout);
    client.set_read_timeout(cfg_.read_timeout);
    {
      std::lock_guard lock(log_mu_);
      ++requests_;
    }
    auto res = client.Post(path_, headers, body, "application/json");

    auto wait = backoff;
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      try {
        auto reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw MalformedScore(std::string("unexpected response envelope: ") + e.what());
      }
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      if (res->has_header("Retry-After")) {
        try {
          wait = std::chrono::milliseconds(
              1000 * std::stoll(res->get_header_value("Retry-After")));
        } catch (const std::exception&) {
        }
      }
    } else {
      throw ScorerUnavailable("remote scorer rejected the request: HTTP " +
                              std::to_string(res->status));
    }

    if (attempts > cfg_.retry.max_retries) break;
    std::this_thread::sleep_for(std::min(wait, cfg_.retry.max_backoff));
    backoff = std::chrono::milliseconds(static_cast<long long>(
        static_cast<double>(backoff.count()) * cfg_.retry.multiplier));
  }
  throw ScorerUnavailable("remote scorer failed after " +
                          std::to_string(cfg_.retry.max_retries + 1) +
                          " attempts: " + last_error);
}

void RemoteLlmScorer::log_provenance(const std::string& key,
                                     const std::string& raw, int attempts) {
  if (cfg_.provenance_path.empty()) return;
  std::lock_guard lock(log_mu_);
  std::ofstream out(cfg_.provenance_path, std::ios::app);
  out << json{{"key", key},
              {"model", cfg_.model},
              {"attempts", attempts},
              {"raw", raw}}
             .dump()
      << '\n';
}

}  // namespace tigload
