#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "tigload/core_model.hpp"

namespace tigload {

inline constexpr std::string_view kSchemaVersion = "tigload/1";

// tigload/1 task documents. Parsing requires the top-level "schema" member
// and throws ParseError with a JSON-pointer-like location on any shape error.
// Members the schema does not know are carried in the extras of the record
// they appear on and written back unchanged.
TaskInstance task_from_json(const nlohmann::json& doc);
nlohmann::json task_to_json(const TaskInstance& task);

TaskInstance parse_task(std::string_view text);
// Single-line serialization, suitable for a JSONL batch file.
std::string dump_task(const TaskInstance& task);

nlohmann::json entity_to_json(const EntityRef& x);
EntityRef entity_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace tigload
