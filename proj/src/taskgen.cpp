#include "tigload/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "tigload/errors.hpp"
#include "tigload/oracle_sim.hpp"
#include "tigload/parallel.hpp"

namespace tigload {

namespace {

constexpr int kMaxAttempts = 32;

std::size_t pick(CounterRng& rng, std::size_t n) {
  return std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)),
                  n - 1);
}

std::vector<ToolSpec> builtin_catalog() {
  auto tool = [](std::string name, std::string desc, std::string param,
                 std::string type) {
    return ToolSpec{std::move(name), std::move(desc),
                    {ToolParam{std::move(param), std::move(type), true, ""}}, {}};
  };
  return {
      tool("get_user_profile", "Fetch the profile record for a user id", "user_id", "user_id"),
      tool("list_user_orders", "List the orders placed by a user", "user_id", "user_id"),
      tool("cancel_order", "Cancel an order by its order id", "order_id", "order_id"),
      tool("get_order_status", "Look up the shipping status of an order", "order_id", "order_id"),
      tool("read_file", "Read the contents of a file at a path", "path", "file_path"),
      tool("copy_file", "Copy a file from a path to a destination directory", "path", "file_path"),
      tool("get_stock_price", "Get the latest trading price of a ticker symbol", "ticker", "ticker"),
      tool("place_trade", "Place a buy or sell order for a ticker symbol", "ticker", "ticker"),
      tool("get_weather", "Get the weather forecast for a city", "city", "city"),
      tool("book_flight", "Book a flight to a destination city on a date", "city", "city"),
      tool("schedule_meeting", "Schedule a meeting on a calendar date", "date", "date"),
      tool("send_message", "Send a text message to a user id", "user_id", "user_id"),
  };
}

struct Layout {
  TaskInstance task;
  std::vector<EntityRef> offered;  // entity introduced at each position
};

// Places queries and calls, assigns entities and tools. No edges yet.
Layout make_layout(const GenSpec& spec, CounterRng& rng) {
  Layout out;
  TaskInstance& t = out.task;
  t.id = spec.task_id;
  t.domain = spec.domain;

  std::vector<std::size_t> calls_per_query(spec.n_queries, 0);
  for (std::size_t c = 0; c < spec.n_calls; ++c)
    ++calls_per_query[pick(rng, spec.n_queries)];

  const auto& pool = spec.entity_type_pool;
  std::vector<std::string> used_types;
  std::map<std::string, std::size_t> next_value;
  auto new_entity = [&]() {
    std::string type;
    if (!used_types.empty() && rng.uniform() < spec.interference_density)
      type = used_types[pick(rng, used_types.size())];
    else
      type = pool[pick(rng, pool.size())];
    if (std::find(used_types.begin(), used_types.end(), type) == used_types.end())
      used_types.push_back(type);
    return EntityRef{type, type + "_" + std::to_string(next_value[type]++)};
  };

  const auto catalog =
      spec.tool_catalog.empty() ? builtin_catalog() : spec.tool_catalog;
  std::set<std::string> used_tools;

  std::size_t turn = 0, call_no = 0;
  for (std::size_t qi = 0; qi < spec.n_queries; ++qi) {
    const EntityRef mention = new_entity();
    std::ostringstream text;
    text << "Step " << qi + 1 << ": work with " << mention.value_id << " ("
         << mention.semantic_type << ").";
    t.queries.push_back(Query{qi, text.str(), {mention}, {}});

    GraphNode q;
    q.id = "q" + std::to_string(qi);
    q.kind = NodeKind::Query;
    q.turn = turn++;
    q.query_index = qi;
    // Listed as produced too, so the graph validates without its queries.
    q.produces.push_back(mention);
    t.graph.nodes.push_back(std::move(q));
    out.offered.push_back(mention);

    for (std::size_t c = 0; c < calls_per_query[qi]; ++c) {
      GraphNode f;
      f.id = "f" + std::to_string(++call_no);
      f.kind = NodeKind::FunctionCall;
      f.turn = turn++;
      f.tool_name = catalog[pick(rng, catalog.size())].name;
      used_tools.insert(f.tool_name);
      f.produces.push_back(new_entity());
      out.offered.push_back(f.produces.back());
      t.graph.nodes.push_back(std::move(f));
    }
  }

  for (const auto& tool : catalog)
    if (used_tools.count(tool.name)) t.tools.push_back(tool);

  // A task needs at least one tool even when it makes no calls.
  if (t.tools.empty() && spec.distractor_count == 0)
    t.tools.push_back(catalog[pick(rng, catalog.size())]);

  std::vector<const ToolSpec*> spare;
  for (const auto& tool : catalog)
    if (!used_tools.count(tool.name)) spare.push_back(&tool);
  for (std::size_t d = 0; d < spec.distractor_count; ++d) {
    if (!spare.empty()) {
      const auto i = pick(rng, spare.size());
      t.tools.push_back(*spare[i]);
      spare.erase(spare.begin() + static_cast<std::ptrdiff_t>(i));
      continue;
    }
    // Catalog exhausted: echo a used tool so the distractor stays plausible.
    const ToolSpec& base = t.tools[pick(rng, t.tools.size())];
    ToolSpec echo = base;
    echo.name = base.name + "_v" + std::to_string(d + 2);
    echo.description = base.description + " (legacy variant)";
    echo.extras.clear();
    t.tools.push_back(std::move(echo));
  }
  return out;
}

void add_edge(TaskInstance& t, std::size_t src_pos, std::size_t dst_pos,
              EdgeKind kind, const std::vector<EntityRef>& offered) {
  auto& nodes = t.graph.nodes;  // listed in turn order by construction
  DepEdge e;
  e.src = nodes[src_pos].id;
  e.dst = nodes[dst_pos].id;
  e.kind = kind;
  if (kind == EdgeKind::Data) {
    e.entity = offered[src_pos];
    auto& consumes = nodes[dst_pos].consumes;
    if (std::find(consumes.begin(), consumes.end(), *e.entity) == consumes.end())
      consumes.push_back(*e.entity);
  }
  t.graph.edges.push_back(std::move(e));
}

// Every call gets one incoming edge. `window` bounds how far back the source
// may be; window 1 with execution edges is the cheapest skeleton.
TaskInstance make_skeleton(const GenSpec& spec, CounterRng& rng,
                           std::size_t window, bool minimal) {
  auto layout = make_layout(spec, rng);
  auto& t = layout.task;
  for (std::size_t j = 0; j < t.graph.nodes.size(); ++j) {
    if (t.graph.nodes[j].is_query() || j == 0) continue;
    const std::size_t reach = std::min(window, j);
    const std::size_t src = minimal ? j - 1 : j - 1 - pick(rng, reach);
    const EdgeKind kind = minimal || rng.uniform() < 0.5 ? EdgeKind::Execution
                                                         : EdgeKind::Data;
    add_edge(t, src, j, kind, layout.offered);
  }
  return t;
}

bool in_band(double x, double target, double tol) {
  return std::abs(x - target) <= tol;
}

}  // namespace

double max_achievable_cli(std::size_t n_queries, std::size_t n_calls,
                          double lambda) {
  // Function nodes as late as possible; node at position j can take an edge
  // from each of the j earlier nodes and compete with j - 1 entities.
  double total = 0.0;
  const std::size_t n = n_queries + n_calls;
  for (std::size_t j = n_queries; j < n; ++j) {
    const double dist_sum = static_cast<double>(j) * static_cast<double>(j + 1) / 2.0;
    const double competitors = j >= 1 ? static_cast<double>(j - 1) : 0.0;
    total += dist_sum * (2.0 + lambda * competitors);
  }
  return total;
}

TaskInstance insert_edges(const TaskInstance& task, double target_cli,
                          double tolerance, const IntrinsicParams& p) {
  if (in_band(intrinsic_load(task, p).total, target_cli, tolerance)) return task;
  TaskInstance t = task;
  // New edges can change which query owns a node, and with it the untimed
  // order, so the current order is pinned as turns first.
  const bool timed = std::all_of(t.graph.nodes.begin(), t.graph.nodes.end(),
                                 [](const GraphNode& n) { return n.turn.has_value(); });
  if (!timed) t.graph = with_canonical_turns(t.graph);
  double current = intrinsic_load(t, p).total;
  if (current > target_cli + tolerance)
    throw TargetUnreachable("CL_I " + std::to_string(current) +
                            " already exceeds target band upper bound " +
                            std::to_string(target_cli + tolerance));

  const Linearization lin0(t.graph);
  std::vector<std::string> order(lin0.order().begin(), lin0.order().end());
  const auto qidx = query_node_indices(t.graph);

  // Entities offered by each position and the context before it.
  std::vector<std::vector<EntityRef>> offered(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& n = lin0.node(order[i]);
    offered[i] = n.produces;
    if (n.is_query()) {
      auto it = qidx.find(n.id);
      if (it != qidx.end() && it->second < t.queries.size())
        for (const auto& x : t.queries[it->second].mentioned_entities)
          if (std::find(offered[i].begin(), offered[i].end(), x) == offered[i].end())
            offered[i].push_back(x);
    }
  }
  auto competitors = [&](std::size_t pos, const EntityRef& x) {
    std::set<EntityRef> seen;
    for (std::size_t i = 0; i < pos; ++i)
      for (const auto& y : offered[i])
        if (y.semantic_type == x.semantic_type && y.value_id != x.value_id)
          seen.insert(y);
    return seen.size();
  };

  std::map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < t.graph.nodes.size(); ++i)
    node_index.emplace(t.graph.nodes[i].id, i);

  while (!in_band(current, target_cli, tolerance)) {
    struct Cand {
      double miss;
      int kind_rank;
      std::size_t dst, src;
      std::optional<EntityRef> entity;
      double weight;
    };
    std::optional<Cand> best;
    auto better = [](const Cand& a, const Cand& b) {
      return std::tie(a.miss, a.kind_rank, a.dst, a.src, a.entity) <
             std::tie(b.miss, b.kind_rank, b.dst, b.src, b.entity);
    };

    for (std::size_t j = 0; j < order.size(); ++j) {
      if (lin0.node(order[j]).is_query()) continue;
      for (std::size_t i = 0; i < j; ++i) {
        const double delta = static_cast<double>(j - i);
        auto exists = [&](EdgeKind kind, const std::optional<EntityRef>& x) {
          return std::any_of(t.graph.edges.begin(), t.graph.edges.end(),
                             [&](const DepEdge& e) {
                               return e.src == order[i] && e.dst == order[j] &&
                                      e.kind == kind && e.entity == x;
                             });
        };
        auto consider = [&](EdgeKind kind, std::optional<EntityRef> x, double w) {
          const double next = current + w;
          if (next > target_cli + tolerance) return;
          Cand c{std::abs(target_cli - next), kind == EdgeKind::Execution ? 0 : 1,
                 j, i, std::move(x), w};
          if (!best || better(c, *best)) best = std::move(c);
        };
        if (!exists(EdgeKind::Execution, std::nullopt))
          consider(EdgeKind::Execution, std::nullopt, delta);
        for (const auto& x : offered[i])
          if (!exists(EdgeKind::Data, x))
            consider(EdgeKind::Data, x,
                     edge_weight(j - i, competitors(j, x), p.lambda));
      }
    }

    if (!best)
      throw TargetUnreachable("no insertable edge brings CL_I from " +
                              std::to_string(current) + " into [" +
                              std::to_string(target_cli - tolerance) + ", " +
                              std::to_string(target_cli + tolerance) + "]");

    DepEdge e;
    e.src = order[best->src];
    e.dst = order[best->dst];
    e.kind = best->kind_rank == 0 ? EdgeKind::Execution : EdgeKind::Data;
    e.entity = best->entity;
    if (e.entity) {
      auto& consumes = t.graph.nodes[node_index.at(e.dst)].consumes;
      if (std::find(consumes.begin(), consumes.end(), *e.entity) == consumes.end())
        consumes.push_back(*e.entity);
    }
    t.graph.edges.push_back(std::move(e));
    current += best->weight;
  }
  return t;
}

TaskInstance generate_graph(const GenSpec& spec, const IntrinsicParams& p) {
  if (spec.n_queries < 1) throw DomainError("n_queries must be >= 1");
  if (!(spec.tolerance > 0.0)) throw DomainError("tolerance must be > 0");
  if (!(spec.target_cli >= 0.0)) throw DomainError("target_cli must be >= 0");
  if (spec.entity_type_pool.empty())
    throw DomainError("entity_type_pool must not be empty");
  if (!(spec.interference_density >= 0.0 && spec.interference_density <= 1.0))
    throw DomainError("interference_density must lie in [0, 1]");

  const double lo = spec.target_cli - spec.tolerance;
  const double hi = spec.target_cli + spec.tolerance;
  const double max_cli = max_achievable_cli(spec.n_queries, spec.n_calls, p.lambda);
  const double min_cli = static_cast<double>(spec.n_calls);
  if (max_cli < lo)
    throw TargetUnreachable("target band [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "] is above the maximum CL_I " +
                            std::to_string(max_cli) + " for " +
                            std::to_string(spec.n_queries) + " queries and " +
                            std::to_string(spec.n_calls) + " calls");
  if (min_cli > hi)
    throw TargetUnreachable("target band [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "] is below the minimum CL_I " +
                            std::to_string(min_cli) + " for " +
                            std::to_string(spec.n_calls) + " calls");

  const std::size_t positions = spec.n_queries + spec.n_calls;
  std::string last_error;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    CounterRng rng(CounterRng::derive(spec.seed, static_cast<std::uint64_t>(attempt)));
    // Later attempts draw tighter skeletons; the last one is the cheapest.
    const bool minimal = attempt == kMaxAttempts - 1;
    const std::size_t window =
        std::max<std::size_t>(1, positions >> std::min(attempt / 4, 16));
    TaskInstance t = make_skeleton(spec, rng, window, minimal);
    const double cli = intrinsic_load(t, p).total;
    if (in_band(cli, spec.target_cli, spec.tolerance)) return t;
    if (cli > hi) {
      last_error = "skeleton overshoots the band";
      continue;
    }
    try {
      return insert_edges(t, spec.target_cli, spec.tolerance, p);
    } catch (const TargetUnreachable& e) {
      last_error = e.what();
    }
  }
  throw TargetUnreachable("no layout reached CL_I in [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "] after " +
                          std::to_string(kMaxAttempts) + " attempts (maximum " +
                          std::to_string(max_cli) + "): " + last_error);
}

SweepResult sweep(const SweepConfig& cfg, const IntrinsicParams& p,
                  std::size_t jobs) {
  struct Job {
    std::size_t stratum;
    GenSpec spec;
  };
  std::vector<Job> work;
  for (std::size_t s = 0; s < cfg.strata.size(); ++s) {
    const auto& st = cfg.strata[s];
    const double base_calls = std::floor(st.mean_calls);
    const double frac = st.mean_calls - base_calls;
    for (std::size_t i = 0; i < st.count; ++i) {
      GenSpec spec = cfg.base;
      spec.n_queries = st.n_queries;
      // Spread the fractional part evenly: instance i gets an extra call when
      // floor((i + 1) * frac) steps up.
      const auto extra = static_cast<std::size_t>(
          std::floor(static_cast<double>(i + 1) * frac) -
          std::floor(static_cast<double>(i) * frac));
      spec.n_calls = static_cast<std::size_t>(base_calls) + extra;
      spec.target_cli = st.target;
      spec.tolerance = st.tolerance;
      spec.seed = CounterRng::derive(cfg.base.seed, (static_cast<std::uint64_t>(s) << 32) | i);
      spec.task_id = "gen-s" + std::to_string(s) + "-" + std::to_string(i);
      spec.tool_catalog = cfg.base.tool_catalog;
      work.push_back({s, std::move(spec)});
    }
  }

  std::vector<std::optional<TaskInstance>> made(work.size());
  std::vector<std::string> errors(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    try {
      made[w] = generate_graph(work[w].spec, p);
    } catch (const Error& e) {
      errors[w] = work[w].spec.task_id + ": " + e.what();
    }
  });

  SweepResult out;
  out.manifest.resize(cfg.strata.size());
  for (std::size_t s = 0; s < cfg.strata.size(); ++s) {
    out.manifest[s].stratum = s;
    out.manifest[s].target = cfg.strata[s].target;
  }
  std::vector<double> load_sum(cfg.strata.size(), 0.0), call_sum(cfg.strata.size(), 0.0);
  for (std::size_t w = 0; w < work.size(); ++w) {
    auto& summary = out.manifest[work[w].stratum];
    if (!made[w]) {
      summary.errors.push_back(errors[w]);
      continue;
    }
    ++summary.n;
    load_sum[work[w].stratum] += intrinsic_load(*made[w], p).total;
    call_sum[work[w].stratum] += static_cast<double>(work[w].spec.n_calls);
    out.tasks.push_back(std::move(*made[w]));
  }
  for (std::size_t s = 0; s < cfg.strata.size(); ++s) {
    auto& summary = out.manifest[s];
    if (summary.n > 0) {
      summary.achieved_mean = load_sum[s] / static_cast<double>(summary.n);
      summary.mean_calls = call_sum[s] / static_cast<double>(summary.n);
    }
  }
  return out;
}

}  // namespace tigload
