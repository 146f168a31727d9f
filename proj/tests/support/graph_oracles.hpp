#pragma once

// Reference implementations used to check the planner. Deliberately naive:
// brute force over permutations and textbook depth-first search.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "forgebox/speclang.hpp"

namespace testing {

using Deps = std::map<std::string, std::vector<std::string>>;  // role -> dependencies

inline Deps deps_of(const std::vector<forgebox::speclang::RoleSpec>& roles) {
  Deps d;
  for (const auto& r : roles) d[r.name] = r.depends;
  return d;
}

inline std::set<std::string> closure_bfs(const Deps& deps, const std::vector<std::string>& start) {
  std::set<std::string> seen(start.begin(), start.end());
  std::vector<std::string> queue(start.begin(), start.end());
  while (!queue.empty()) {
    std::string r = queue.back();
    queue.pop_back();
    for (const auto& d : deps.at(r)) {
      if (seen.insert(d).second) queue.push_back(d);
    }
  }
  return seen;
}

// Every dependency precedes its dependent, and the order is a permutation of `nodes`.
inline bool is_valid_order(const Deps& deps, const std::set<std::string>& nodes,
                           const std::vector<std::string>& order) {
  if (order.size() != nodes.size()) return false;
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!nodes.count(order[i]) || !pos.emplace(order[i], i).second) return false;
  }
  for (const auto& n : nodes) {
    for (const auto& d : deps.at(n)) {
      if (pos.at(d) > pos.at(n)) return false;
    }
  }
  return true;
}

// Lexicographically smallest valid order, by enumerating permutations.
inline std::optional<std::vector<std::string>> smallest_order_brute_force(
    const Deps& deps, const std::set<std::string>& nodes) {
  std::vector<std::string> perm(nodes.begin(), nodes.end());  // sorted
  do {
    if (is_valid_order(deps, nodes, perm)) return perm;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::nullopt;
}

inline bool has_cycle_dfs(const Deps& deps, const std::set<std::string>& nodes) {
  std::map<std::string, int> color;  // 0 white, 1 grey, 2 black
  std::function<bool(const std::string&)> visit = [&](const std::string& n) {
    color[n] = 1;
    for (const auto& d : deps.at(n)) {
      if (!nodes.count(d)) continue;
      if (color[d] == 1) return true;
      if (color[d] == 0 && visit(d)) return true;
    }
    color[n] = 2;
    return false;
  };
  for (const auto& n : nodes) {
    if (color[n] == 0 && visit(n)) return true;
  }
  return false;
}

// True when consecutive members (wrapping around) are joined by dependency edges.
inline bool is_cycle(const Deps& deps, const std::vector<std::string>& members) {
  if (members.empty()) return false;
  std::set<std::string> unique(members.begin(), members.end());
  if (unique.size() != members.size()) return false;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& from = members[i];
    const auto& to = members[(i + 1) % members.size()];
    const auto& d = deps.at(from);
    if (std::find(d.begin(), d.end(), to) == d.end()) return false;
  }
  return true;
}

// Random role set over n nodes named with shuffled letters. Edges only go
// from higher to lower rank, so the graph is acyclic unless `back_edges` adds
// some the other way.
inline std::vector<forgebox::speclang::RoleSpec> random_roles(std::mt19937_64& gen, int n,
                                                             double density, int back_edges) {
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) {
    std::string name = "r";
    name += static_cast<char>('a' + i % 26);
    name += std::to_string(i / 26);
    names.push_back(name);
  }
  std::shuffle(names.begin(), names.end(), gen);
  std::vector<std::set<std::string>> deps(n);
  std::uniform_real_distribution<double> coin(0, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (coin(gen) < density) deps[i].insert(names[j]);
    }
  }
  for (int k = 0; k < back_edges && n > 1; ++k) {
    int lo = static_cast<int>(gen() % (n - 1));
    int hi = lo + 1 + static_cast<int>(gen() % (n - lo - 1));
    deps[lo].insert(names[hi]);
    deps[hi].insert(names[lo]);
  }
  std::vector<forgebox::speclang::RoleSpec> roles;
  for (int i = 0; i < n; ++i) {
    forgebox::speclang::RoleSpec r;
    r.name = names[i];
    r.depends.assign(deps[i].begin(), deps[i].end());
    int tasks = static_cast<int>(gen() % 3);
    for (int t = 0; t < tasks; ++t) {
      forgebox::speclang::TaskSpec task;
      task.id = "t" + std::to_string(t);
      task.args = forgebox::speclang::DirArgs{"/" + names[i] + "/" + std::to_string(t), 0755};
      r.tasks.push_back(task);
    }
    roles.push_back(std::move(r));
  }
  std::shuffle(roles.begin(), roles.end(), gen);
  return roles;
}

}  // namespace testing
