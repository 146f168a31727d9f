#include <doctest.h>

#include "forgebox/errors.hpp"
#include "forgebox/planner.hpp"
#include "graph_oracles.hpp"
#include "test_support.hpp"

using namespace forgebox;
using namespace forgebox::planner;
using speclang::RoleSpec;

namespace {

RoleSpec role(std::string name, std::vector<std::string> deps, int tasks = 1) {
  RoleSpec r;
  r.name = std::move(name);
  r.depends = std::move(deps);
  for (int i = 0; i < tasks; ++i) {
    speclang::TaskSpec t;
    t.id = "t" + std::to_string(i);
    t.args = speclang::FileArgs{"/" + r.name + std::to_string(i), "x", 0644};
    r.tasks.push_back(t);
  }
  return r;
}

speclang::Playbook playbook(std::vector<std::string> selection) {
  speclang::Playbook pb;
  pb.name = "p";
  pb.version = "1";
  pb.role_selection = std::move(selection);
  return pb;
}

}  // namespace

TEST_CASE("diamond orders dependencies first, ties by name") {
  std::vector<RoleSpec> roles{role("A", {"B", "C"}), role("C", {"D"}), role("B", {"D"}), role("D", {})};
  auto graph = build_graph(roles);
  auto closure = select_closure(graph, {"A"});
  auto order = order_roles(graph, closure);
  CHECK(order == std::vector<std::string>{"D", "B", "C", "A"});
  CHECK(order == *testing::smallest_order_brute_force(testing::deps_of(roles), closure));
}

TEST_CASE("closure includes transitive dependencies only") {
  std::vector<RoleSpec> roles{role("a", {"b"}), role("b", {"c"}), role("c", {}), role("z", {})};
  auto graph = build_graph(roles);
  CHECK(select_closure(graph, {"a"}) == std::set<std::string>{"a", "b", "c"});
  CHECK(select_closure(graph, {"z"}) == std::set<std::string>{"z"});
  CHECK_THROWS_AS(select_closure(graph, {"missing"}), UnknownRole);
  CHECK(graph.dependencies_of("a") == std::vector<std::string>{"b"});
}

TEST_CASE("unknown dependencies and cycles are reported") {
  try {
    build_graph({role("a", {"ghost"})});
    FAIL("expected UnknownDependency");
  } catch (const UnknownDependency& e) {
    CHECK(e.role() == "a");
    CHECK(e.dependency() == "ghost");
  }
  std::vector<RoleSpec> roles{role("b", {"c"}), role("c", {"a"}), role("a", {"b"}), role("x", {"a"})};
  auto graph = build_graph(roles);
  try {
    order_roles(graph, select_closure(graph, {"x"}));
    FAIL("expected CycleError");
  } catch (const CycleError& e) {
    CHECK(e.members() == std::vector<std::string>{"a", "b", "c"});
    CHECK(std::string(e.what()) == "dependency cycle: a -> b -> c -> a");
  }
  CHECK(build_graph({}).nodes.empty());
}

TEST_CASE("steps keep authored order within a role") {
  std::vector<RoleSpec> roles{role("app", {"base"}, 3), role("base", {}, 2)};
  Plan plan = make_plan(playbook({"app"}), roles);
  CHECK(plan.role_order == std::vector<std::string>{"base", "app"});
  REQUIRE(plan.steps.size() == 5);
  CHECK(to_text(plan) ==
        "base/t0 file\nbase/t1 file\napp/t0 file\napp/t1 file\napp/t2 file\n");
}

TEST_CASE("the fixture plan") {
  auto pb = speclang::load_playbook(testing::fixtures_dir() / "micromag.play.yaml");
  auto roles = speclang::load_roles(testing::fixtures_dir());
  Plan plan = make_plan(pb, roles);
  CHECK(plan.role_order == std::vector<std::string>{"base", "fidimag", "magpar", "nmag", "oommf"});
  CHECK(plan.steps.size() == 12);
}

TEST_CASE("property: orders match brute force on small random graphs") {
  auto gen = testing::rng(20);
  for (int round = 0; round < 300; ++round) {
    int n = 1 + static_cast<int>(gen() % 7);
    auto roles = testing::random_roles(gen, n, 0.4, round % 4 == 0 ? 1 : 0);
    auto deps = testing::deps_of(roles);
    auto graph = build_graph(roles);
    std::vector<std::string> selection{roles[gen() % roles.size()].name};
    auto closure = select_closure(graph, selection);
    CHECK(closure == testing::closure_bfs(deps, selection));
    auto expected = testing::smallest_order_brute_force(deps, closure);
    if (expected) {
      CHECK(order_roles(graph, closure) == *expected);
    } else {
      CHECK(testing::has_cycle_dfs(deps, closure));
      try {
        order_roles(graph, closure);
        FAIL("expected CycleError");
      } catch (const CycleError& e) {
        CHECK(testing::is_cycle(deps, e.members()));
        CHECK(e.members().front() == *std::min_element(e.members().begin(), e.members().end()));
      }
    }
  }
}

TEST_CASE("property: plans are independent of role document order") {
  auto gen = testing::rng(21);
  for (int round = 0; round < 100; ++round) {
    auto roles = testing::random_roles(gen, 2 + static_cast<int>(gen() % 12), 0.3, 0);
    std::vector<std::string> selection;
    for (const auto& r : roles) {
      if (gen() % 3 == 0) selection.push_back(r.name);
    }
    if (selection.empty()) selection.push_back(roles.front().name);
    Plan a = make_plan(playbook(selection), roles);
    std::shuffle(roles.begin(), roles.end(), gen);
    Plan b = make_plan(playbook(selection), roles);
    CHECK(a == b);
    auto deps = testing::deps_of(roles);
    CHECK(testing::is_valid_order(deps, testing::closure_bfs(deps, selection), a.role_order));
  }
}
