#pragma once

#include <map>
#include <string>

#include "tigload/fit_stats.hpp"

namespace tigload {

struct RoutingPolicy {
  enum class Kind { MaxAccuracy, CheapestAboveThreshold };
  Kind kind = Kind::MaxAccuracy;
  double threshold = 0.5;  // in (0, 1); CheapestAboveThreshold only
  std::map<std::string, double> costs;  // every routable agent needs one
};

struct RoutingDecision {
  std::string task_id;
  std::string agent_id;
  double predicted_accuracy = 0.0;
  std::string rationale;
};

// Picks an agent for one task. `task_loads` holds the task's CL_Total under
// each agent's own omega_e; agents without both a profile and a load are not
// considered. MaxAccuracy breaks ties on lower cost, then agent id.
// CheapestAboveThreshold takes the cheapest agent predicted at or above the
// threshold and falls back to MaxAccuracy when none qualifies. Throws
// NoProfiles and ConfigError (bad threshold or missing cost).
RoutingDecision route(const std::string& task_id,
                      const std::map<std::string, double>& task_loads,
                      const std::map<std::string, CognitiveProfile>& profiles,
                      const RoutingPolicy& policy);

}  // namespace tigload
