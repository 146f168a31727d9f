#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "forgebox/speclang.hpp"

namespace forgebox::planner {

struct RoleGraph {
  std::set<std::string> nodes;
  // (dependent, dependency)
  std::set<std::pair<std::string, std::string>> edges;

  std::vector<std::string> dependencies_of(const std::string& role) const;
};

struct PlanStep {
  std::string role;
  speclang::TaskSpec task;

  friend bool operator==(const PlanStep&, const PlanStep&) = default;
};

// For every edge A -> B all of B's steps precede all of A's; steps within a
// role keep their authored order.
struct Plan {
  std::string playbook_name;
  std::string playbook_version;
  std::vector<std::string> role_order;
  std::vector<PlanStep> steps;

  friend bool operator==(const Plan&, const Plan&) = default;
};

// Throws UnknownDependency; an empty role set gives an empty graph.
RoleGraph build_graph(const std::vector<speclang::RoleSpec>& roles);

// Selection plus all transitive dependencies. Throws UnknownRole.
std::set<std::string> select_closure(const RoleGraph& graph,
                                     const std::vector<std::string>& selection);

// Kahn's algorithm over the closure; whenever several roles are ready the
// lexicographically smallest name goes first. Throws CycleError with the
// members of one cycle, in cycle order starting from the smallest name.
std::vector<std::string> order_roles(const RoleGraph& graph,
                                     const std::set<std::string>& closure);

Plan linearize(const RoleGraph& graph, const std::set<std::string>& closure,
               const std::vector<speclang::RoleSpec>& roles);

// Whole pipeline for one playbook: graph, closure of the role selection,
// linearize.
Plan make_plan(const speclang::Playbook& playbook,
               const std::vector<speclang::RoleSpec>& roles);

// One `role/task-id directive` line per step.
std::string to_text(const Plan& plan);

}  // namespace forgebox::planner
