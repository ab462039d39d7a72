#include "tigload/task_io.hpp"

#include <initializer_list>

#include "tigload/errors.hpp"

namespace tigload {

using nlohmann::json;

namespace {

const json& member(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ParseError(where + ": missing member '" + key + "'");
  return *it;
}

std::string get_string(const json& obj, const char* key,
                       const std::string& where) {
  const auto& v = member(obj, key, where);
  if (!v.is_string())
    throw ParseError(where + "/" + key + ": expected a string");
  return v.get<std::string>();
}

std::string opt_string(const json& obj, const char* key,
                       const std::string& where) {
  return obj.contains(key) ? get_string(obj, key, where) : std::string();
}

std::size_t get_index(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ParseError(where + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

const json& get_array(const json& obj, const char* key,
                      const std::string& where) {
  const auto& v = member(obj, key, where);
  if (!v.is_array()) throw ParseError(where + "/" + key + ": expected an array");
  return v;
}

void expect_object(const json& v, const std::string& where) {
  if (!v.is_object()) throw ParseError(where + ": expected an object");
}

Extras collect_extras(const json& obj, std::initializer_list<const char*> known) {
  Extras out;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool is_known = false;
    for (const char* k : known)
      if (it.key() == k) is_known = true;
    if (!is_known) out.emplace(it.key(), it.value().dump());
  }
  return out;
}

void write_extras(json& obj, const Extras& extras) {
  for (const auto& [k, text] : extras)
    if (!obj.contains(k)) obj[k] = json::parse(text);
}

std::vector<EntityRef> entity_list(const json& obj, const char* key,
                                   const std::string& where) {
  std::vector<EntityRef> out;
  if (!obj.contains(key)) return out;
  const auto& arr = get_array(obj, key, where);
  for (std::size_t i = 0; i < arr.size(); ++i)
    out.push_back(entity_from_json(
        arr[i], where + "/" + key + "/" + std::to_string(i)));
  return out;
}

json entity_list_json(const std::vector<EntityRef>& xs) {
  json arr = json::array();
  for (const auto& x : xs) arr.push_back(entity_to_json(x));
  return arr;
}

}  // namespace

json entity_to_json(const EntityRef& x) {
  return json{{"semantic_type", x.semantic_type}, {"value_id", x.value_id}};
}

EntityRef entity_from_json(const json& j, const std::string& where) {
  expect_object(j, where);
  return {get_string(j, "semantic_type", where),
          get_string(j, "value_id", where)};
}

TaskInstance task_from_json(const json& doc) {
  const std::string root = "";
  expect_object(doc, "/");
  const auto schema = get_string(doc, "schema", root);
  if (schema != kSchemaVersion)
    throw ParseError("/schema: unsupported schema '" + schema + "'");

  TaskInstance t;
  t.id = get_string(doc, "id", root);
  t.domain = opt_string(doc, "domain", root);

  const auto& queries = get_array(doc, "queries", root);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::string where = "/queries/" + std::to_string(i);
    const auto& qj = queries[i];
    expect_object(qj, where);
    Query q;
    q.index = qj.contains("index") ? get_index(qj["index"], where + "/index") : i;
    q.text = opt_string(qj, "text", where);
    q.mentioned_entities = entity_list(qj, "mentioned_entities", where);
    q.extras = collect_extras(qj, {"index", "text", "mentioned_entities"});
    t.queries.push_back(std::move(q));
  }

  const auto& tools = get_array(doc, "tools", root);
  for (std::size_t i = 0; i < tools.size(); ++i) {
    const std::string where = "/tools/" + std::to_string(i);
    const auto& tj = tools[i];
    expect_object(tj, where);
    ToolSpec tool;
    tool.name = get_string(tj, "name", where);
    tool.description = opt_string(tj, "description", where);
    if (tj.contains("params")) {
      const auto& ps = get_array(tj, "params", where);
      for (std::size_t k = 0; k < ps.size(); ++k) {
        const std::string pw = where + "/params/" + std::to_string(k);
        expect_object(ps[k], pw);
        ToolParam p;
        p.name = get_string(ps[k], "name", pw);
        p.type = opt_string(ps[k], "type", pw);
        if (ps[k].contains("required")) {
          if (!ps[k]["required"].is_boolean())
            throw ParseError(pw + "/required: expected a boolean");
          p.required = ps[k]["required"].get<bool>();
        }
        p.description = opt_string(ps[k], "description", pw);
        tool.params.push_back(std::move(p));
      }
    }
    tool.extras = collect_extras(tj, {"name", "description", "params"});
    t.tools.push_back(std::move(tool));
  }

  const auto& gj = member(doc, "graph", root);
  expect_object(gj, "/graph");
  const auto& nodes = get_array(gj, "nodes", "/graph");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "/graph/nodes/" + std::to_string(i);
    const auto& nj = nodes[i];
    expect_object(nj, where);
    GraphNode n;
    n.id = get_string(nj, "id", where);
    const auto kind = get_string(nj, "kind", where);
    if (kind == "query")
      n.kind = NodeKind::Query;
    else if (kind == "function_call")
      n.kind = NodeKind::FunctionCall;
    else
      throw ParseError(where + "/kind: unknown node kind '" + kind + "'");
    if (nj.contains("turn") && !nj["turn"].is_null())
      n.turn = get_index(nj["turn"], where + "/turn");
    if (nj.contains("query_index") && !nj["query_index"].is_null())
      n.query_index = get_index(nj["query_index"], where + "/query_index");
    n.tool_name = opt_string(nj, "tool_name", where);
    n.produces = entity_list(nj, "produces", where);
    n.consumes = entity_list(nj, "consumes", where);
    n.extras = collect_extras(nj, {"id", "kind", "turn", "query_index",
                                   "tool_name", "produces", "consumes"});
    t.graph.nodes.push_back(std::move(n));
  }
  const auto& edges = get_array(gj, "edges", "/graph");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string where = "/graph/edges/" + std::to_string(i);
    const auto& ej = edges[i];
    expect_object(ej, where);
    DepEdge e;
    e.src = get_string(ej, "src", where);
    e.dst = get_string(ej, "dst", where);
    const auto kind = get_string(ej, "kind", where);
    if (kind == "data")
      e.kind = EdgeKind::Data;
    else if (kind == "execution")
      e.kind = EdgeKind::Execution;
    else
      throw ParseError(where + "/kind: unknown edge kind '" + kind + "'");
    if (ej.contains("entity") && !ej["entity"].is_null())
      e.entity = entity_from_json(ej["entity"], where + "/entity");
    e.extras = collect_extras(ej, {"src", "dst", "kind", "entity"});
    t.graph.edges.push_back(std::move(e));
  }

  if (doc.contains("meta")) {
    const auto& mj = doc["meta"];
    expect_object(mj, "/meta");
    for (auto it = mj.begin(); it != mj.end(); ++it) {
      if (!it.value().is_string())
        throw ParseError("/meta/" + it.key() + ": expected a string");
      t.meta.emplace(it.key(), it.value().get<std::string>());
    }
  }
  t.extras = collect_extras(
      doc, {"schema", "id", "domain", "queries", "tools", "graph", "meta"});
  return t;
}

json task_to_json(const TaskInstance& t) {
  json doc = json::object();
  doc["schema"] = kSchemaVersion;
  doc["id"] = t.id;
  doc["domain"] = t.domain;

  json queries = json::array();
  for (const auto& q : t.queries) {
    json qj{{"index", q.index},
            {"text", q.text},
            {"mentioned_entities", entity_list_json(q.mentioned_entities)}};
    write_extras(qj, q.extras);
    queries.push_back(std::move(qj));
  }
  doc["queries"] = std::move(queries);

  json tools = json::array();
  for (const auto& tool : t.tools) {
    json params = json::array();
    for (const auto& p : tool.params)
      params.push_back(json{{"name", p.name},
                            {"type", p.type},
                            {"required", p.required},
                            {"description", p.description}});
    json tj{{"name", tool.name},
            {"description", tool.description},
            {"params", std::move(params)}};
    write_extras(tj, tool.extras);
    tools.push_back(std::move(tj));
  }
  doc["tools"] = std::move(tools);

  json nodes = json::array();
  for (const auto& n : t.graph.nodes) {
    json nj{{"id", n.id},
            {"kind", to_string(n.kind)},
            {"produces", entity_list_json(n.produces)},
            {"consumes", entity_list_json(n.consumes)}};
    if (n.turn) nj["turn"] = *n.turn;
    if (n.query_index) nj["query_index"] = *n.query_index;
    if (!n.is_query()) nj["tool_name"] = n.tool_name;
    write_extras(nj, n.extras);
    nodes.push_back(std::move(nj));
  }
  json edges = json::array();
  for (const auto& e : t.graph.edges) {
    json ej{{"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}};
    if (e.entity) ej["entity"] = entity_to_json(*e.entity);
    write_extras(ej, e.extras);
    edges.push_back(std::move(ej));
  }
  doc["graph"] = json{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};

  json meta = json::object();
  for (const auto& [k, v] : t.meta) meta[k] = v;
  doc["meta"] = std::move(meta);
  write_extras(doc, t.extras);
  return doc;
}

TaskInstance parse_task(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return task_from_json(doc);
}

std::string dump_task(const TaskInstance& task) {
  return task_to_json(task).dump();
}

}  // namespace tigload
