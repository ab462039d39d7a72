#include "tigload/router.hpp"

#include <cstdio>
#include <tuple>
#include <vector>

#include "tigload/errors.hpp"

namespace tigload {

namespace {

struct Option {
  std::string agent_id;
  double accuracy;
  double cost;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

const Option& most_accurate(const std::vector<Option>& options) {
  const Option* best = &options.front();
  for (const auto& o : options) {
    if (std::make_tuple(-o.accuracy, o.cost, o.agent_id) <
        std::make_tuple(-best->accuracy, best->cost, best->agent_id))
      best = &o;
  }
  return *best;
}

}  // namespace

RoutingDecision route(const std::string& task_id,
                      const std::map<std::string, double>& task_loads,
                      const std::map<std::string, CognitiveProfile>& profiles,
                      const RoutingPolicy& policy) {
  using Kind = RoutingPolicy::Kind;
  if (policy.kind == Kind::CheapestAboveThreshold &&
      !(policy.threshold > 0.0 && policy.threshold < 1.0))
    throw ConfigError("routing threshold must lie in (0, 1)");

  std::vector<Option> options;
  for (const auto& [agent, profile] : profiles) {
    auto load = task_loads.find(agent);
    if (load == task_loads.end()) continue;
    auto cost = policy.costs.find(agent);
    if (cost == policy.costs.end())
      throw ConfigError("no cost configured for agent '" + agent + "'");
    options.push_back(
        {agent, predict_accuracy(profile.k, profile.b, load->second), cost->second});
  }
  if (options.empty())
    throw NoProfiles("no profiled agent has a load for task '" + task_id + "'");

  RoutingDecision out;
  out.task_id = task_id;

  if (policy.kind == Kind::CheapestAboveThreshold) {
    const Option* pick = nullptr;
    for (const auto& o : options) {
      if (o.accuracy < policy.threshold) continue;
      if (!pick || std::tie(o.cost, o.agent_id) < std::tie(pick->cost, pick->agent_id))
        pick = &o;
    }
    if (pick) {
      out.agent_id = pick->agent_id;
      out.predicted_accuracy = pick->accuracy;
      out.rationale = "cheapest agent predicted at or above " +
                      fmt(policy.threshold) + " (" + fmt(pick->accuracy) + ")";
      return out;
    }
    const auto& best = most_accurate(options);
    out.agent_id = best.agent_id;
    out.predicted_accuracy = best.accuracy;
    out.rationale = "no agent reaches " + fmt(policy.threshold) +
                    "; fell back to highest predicted accuracy (" +
                    fmt(best.accuracy) + ")";
    return out;
  }

  const auto& best = most_accurate(options);
  out.agent_id = best.agent_id;
  out.predicted_accuracy = best.accuracy;
  out.rationale = "highest predicted accuracy (" + fmt(best.accuracy) + ")";
  return out;
}

}  // namespace tigload
