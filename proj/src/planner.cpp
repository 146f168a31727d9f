#include "forgebox/planner.hpp"

#include <algorithm>
#include <map>

#include "forgebox/errors.hpp"

namespace forgebox {

namespace {

std::string join_cycle(const std::vector<std::string>& members) {
  std::string out;
  for (const auto& m : members) out += m + " -> ";
  return out + (members.empty() ? "" : members.front());
}

}  // namespace

CycleError::CycleError(std::vector<std::string> members)
    : Error("dependency cycle: " + join_cycle(members)),
      members_(std::move(members)) {}

namespace planner {

std::vector<std::string> RoleGraph::dependencies_of(
    const std::string& role) const {
  std::vector<std::string> out;
  for (auto it = edges.lower_bound({role, ""});
       it != edges.end() && it->first == role; ++it) {
    out.push_back(it->second);
  }
  return out;
}

RoleGraph build_graph(const std::vector<speclang::RoleSpec>& roles) {
  RoleGraph graph;
  for (const auto& role : roles) graph.nodes.insert(role.name);
  for (const auto& role : roles) {
    for (const auto& dep : role.depends) {
      if (!graph.nodes.count(dep)) throw UnknownDependency(role.name, dep);
      graph.edges.insert({role.name, dep});
    }
  }
  return graph;
}

std::set<std::string> select_closure(const RoleGraph& graph,
                                     const std::vector<std::string>& selection) {
  std::set<std::string> closure;
  std::vector<std::string> stack;
  for (const auto& name : selection) {
    if (!graph.nodes.count(name)) throw UnknownRole(name);
    stack.push_back(name);
  }
  while (!stack.empty()) {
    std::string name = std::move(stack.back());
    stack.pop_back();
    if (!closure.insert(name).second) continue;
    for (auto& dep : graph.dependencies_of(name)) stack.push_back(std::move(dep));
  }
  return closure;
}

std::vector<std::string> order_roles(const RoleGraph& graph,
                                     const std::set<std::string>& closure) {
  std::map<std::string, std::vector<std::string>> pending;
  for (const auto& name : closure) {
    if (!graph.nodes.count(name)) throw UnknownRole(name);
    auto deps = graph.dependencies_of(name);
    for (const auto& dep : deps) {
      if (!closure.count(dep)) {
        throw Error("closure is not dependency-closed: '" + name +
                    "' needs '" + dep + "'");
      }
    }
    pending[name] = std::move(deps);
  }

  std::vector<std::string> order;
  std::set<std::string> emitted;
  while (!pending.empty()) {
    // pending is name-ordered, so the first ready entry is the smallest.
    auto ready = std::find_if(pending.begin(), pending.end(), [&](auto& kv) {
      return std::all_of(kv.second.begin(), kv.second.end(),
                         [&](const std::string& d) { return emitted.count(d); });
    });
    if (ready == pending.end()) break;
    order.push_back(ready->first);
    emitted.insert(ready->first);
    pending.erase(ready);
  }
  if (pending.empty()) return order;

  // Every pending role has a pending dependency, so following them from any
  // start must revisit a node.
  std::vector<std::string> path;
  std::map<std::string, std::size_t> index;
  std::string current = pending.begin()->first;
  while (!index.count(current)) {
    index[current] = path.size();
    path.push_back(current);
    for (const auto& dep : pending[current]) {
      if (!emitted.count(dep)) {
        current = dep;
        break;
      }
    }
  }
  std::vector<std::string> cycle(path.begin() + index[current], path.end());
  std::rotate(cycle.begin(), std::min_element(cycle.begin(), cycle.end()),
              cycle.end());
  throw CycleError(std::move(cycle));
}

Plan linearize(const RoleGraph& graph, const std::set<std::string>& closure,
               const std::vector<speclang::RoleSpec>& roles) {
  std::map<std::string, const speclang::RoleSpec*> by_name;
  for (const auto& role : roles) by_name[role.name] = &role;

  Plan plan;
  plan.role_order = order_roles(graph, closure);
  for (const auto& name : plan.role_order) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw UnknownRole(name);
    for (const auto& task : it->second->tasks) {
      plan.steps.push_back({name, task});
    }
  }
  return plan;
}

Plan make_plan(const speclang::Playbook& playbook,
               const std::vector<speclang::RoleSpec>& roles) {
  RoleGraph graph = build_graph(roles);
  Plan plan = linearize(graph, select_closure(graph, playbook.role_selection),
                        roles);
  plan.playbook_name = playbook.name;
  plan.playbook_version = playbook.version;
  return plan;
}

std::string to_text(const Plan& plan) {
  std::string out;
  for (const auto& step : plan.steps) {
    out += step.role + "/" + step.task.id + " " +
           std::string(speclang::directive_name(step.task.directive())) + "\n";
  }
  return out;
}

}  // namespace planner
}  // namespace forgebox
