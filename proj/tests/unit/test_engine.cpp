#include <doctest.h>

#include <sstream>

#include "forgebox/engine.hpp"
#include "forgebox/errors.hpp"
#include "test_support.hpp"

using namespace forgebox;
using namespace forgebox::engine;
using namespace forgebox::speclang;
using planner::Plan;
using planner::PlanStep;
namespace fs = std::filesystem;

namespace {

PlanStep step(std::string role, std::string id, TaskArgs args,
              std::optional<std::string> creates = std::nullopt) {
  TaskSpec t;
  t.id = std::move(id);
  t.args = std::move(args);
  t.creates = std::move(creates);
  return {std::move(role), t};
}

Plan plan_of(std::vector<PlanStep> steps) {
  Plan p;
  p.playbook_name = "p";
  p.playbook_version = "1";
  for (const auto& s : steps) {
    if (p.role_order.empty() || p.role_order.back() != s.role) p.role_order.push_back(s.role);
  }
  p.steps = std::move(steps);
  return p;
}

BuildContext fixture_context() {
  BuildContext ctx;
  ctx.root = testing::fixtures_dir();
  return ctx;
}

ExecSpec exec(std::vector<std::string> argv) {
  ExecSpec e;
  e.argv = std::move(argv);
  return e;
}

// Plans whose steps touch disjoint paths, so a second pass must be a no-op.
Plan random_plan(std::mt19937_64& gen) {
  std::vector<PlanStep> steps;
  int n = 1 + static_cast<int>(gen() % 8);
  const char* packages[][2] = {{"oommf", "1.2.0"}, {"nmag", "0.2.1"}, {"magpar", "0.9.0"}};
  for (int i = 0; i < n; ++i) {
    std::string base = "/t" + std::to_string(i);
    std::string id = "s" + std::to_string(i);
    std::uint32_t mode = gen() % 2 ? 0644 : 0600;
    switch (gen() % 6) {
      case 0: steps.push_back(step("r", id, FileArgs{base + "/f", std::to_string(gen()), mode})); break;
      case 1: steps.push_back(step("r", id, DirArgs{base + "/d/e", gen() % 2 ? 0755u : 0700u})); break;
      case 2: steps.push_back(step("base", id, CopyArgs{"README.md", base + "/readme", mode})); break;
      case 3: {
        auto& p = packages[gen() % 3];
        steps.push_back(step("r", id, PackageArgs{p[0], p[1]}));
        break;
      }
      case 4:
        steps.push_back(step("r", id, CommandArgs{exec({"touch", base + "/made"})}, base + "/made"));
        break;
      default: steps.push_back(step("r", id, TestArgs{exec({"true"})}));
    }
  }
  return plan_of(steps);
}

}  // namespace

TEST_CASE("file, dir and copy converge and then check clean") {
  drivers::MockDriver driver;
  auto t = driver.create();
  auto ctx = fixture_context();
  std::vector<PlanStep> steps{
      step("base", "f", FileArgs{"/etc/motd", "hello\n", 0640}),
      step("base", "d", DirArgs{"/home/user/Desktop", 0755}),
      step("base", "c", CopyArgs{"README.md", "/home/user/Desktop/README.md", 0644}),
  };
  for (const auto& s : steps) {
    CHECK(check(s, *t, ctx).verdict == Verdict::divergent);
    auto r = apply(s, *t, ctx);
    CHECK(r.status == TaskStatus::changed);
    CHECK(check(s, *t, ctx).verdict == Verdict::converged);
  }
  CHECK(t->read_file("/etc/motd") == "hello\n");
  CHECK(t->read_file("/home/user/Desktop/README.md") ==
        testing::read_text(testing::fixtures_dir() / "roles/base/files/README.md"));
  // Drift in content or mode is detected.
  t->write_file("/etc/motd", "hello\n", 0644);
  CHECK(check(steps[0], *t, ctx).verdict == Verdict::divergent);
  t->write_file("/etc/motd", "changed\n", 0640);
  CHECK(check(steps[0], *t, ctx).verdict == Verdict::divergent);
}

TEST_CASE("packages install from the repository and are recorded") {
  drivers::MockDriver driver;
  auto t = driver.create();
  auto ctx = fixture_context();
  auto s = step("oommf", "install", PackageArgs{"oommf", "1.2.0"});
  CHECK(check(s, *t, ctx).verdict == Verdict::divergent);
  CHECK(apply(s, *t, ctx).status == TaskStatus::changed);
  CHECK(check(s, *t, ctx).verdict == Verdict::converged);
  CHECK(t->stat("/usr/local/bin/oommf").mode == 0755);
  CHECK(t->read_file(std::string(kPackageDatabase)) == "oommf\t1.2.0\n");
  apply(step("nmag", "install", PackageArgs{"nmag", "0.2.1"}), *t, ctx);
  CHECK(t->read_file(std::string(kPackageDatabase)) == "oommf\t1.2.0\nnmag\t0.2.1\n");

  auto missing = apply(step("r", "x", PackageArgs{"nothere", "1"}), *t, ctx);
  CHECK(missing.status == TaskStatus::failed);
  CHECK(missing.error_kind == "PackageNotFound");
}

TEST_CASE("a tampered package archive fails integrity") {
  testing::TempDir tmp;
  fs::copy(testing::fixtures_dir() / "packages", tmp / "packages");
  auto pkg = tmp / "packages/oommf-1.2.0.pkg";
  std::string bytes = testing::read_text(pkg);
  bytes[600] ^= 1;
  testing::write_text(pkg, bytes);
  BuildContext ctx;
  ctx.root = tmp.path();
  drivers::MockDriver driver;
  auto t = driver.create();
  auto r = apply(step("r", "i", PackageArgs{"oommf", "1.2.0"}), *t, ctx);
  CHECK(r.status == TaskStatus::failed);
  CHECK(r.error_kind == "IntegrityError");
  CHECK_FALSE(t->stat(std::string(kPackageDatabase)).exists);
  CHECK(t->entries().empty());
}

TEST_CASE("package index parsing") {
  auto index = read_package_index(testing::fixtures_dir() / "packages");
  REQUIRE(index.size() == 4);
  for (const auto& r : index) {
    auto file = testing::fixtures_dir() / "packages" / package_file_name(r.name, r.version);
    CHECK(r.sha256.hex() == testing::sha256sum_file(file));
  }
}

TEST_CASE("commands: guards, exit codes and messages") {
  testing::TempDir tmp;
  drivers::SandboxDriver driver(tmp / "state");
  auto t = driver.create();
  BuildContext ctx;
  auto guarded = step("r", "mk", CommandArgs{exec({"mkdir", "-p", "out"})}, "/out");
  CHECK(check(guarded, *t, ctx).verdict == Verdict::divergent);
  CHECK(apply(guarded, *t, ctx).status == TaskStatus::changed);
  CHECK(check(guarded, *t, ctx).verdict == Verdict::converged);

  auto unguarded = step("r", "u", CommandArgs{exec({"true"})});
  CHECK(check(unguarded, *t, ctx).verdict == Verdict::unknown);

  auto failing = apply(step("r", "bad", CommandArgs{exec({"sh", "-c", "echo boom >&2; exit 5"})}), *t, ctx);
  CHECK(failing.status == TaskStatus::failed);
  CHECK(failing.message.find("exit code 5") != std::string::npos);
  CHECK(failing.message.find("boom") != std::string::npos);
  driver.destroy(*t);
}

TEST_CASE("tests report ok or failed and must not modify the target") {
  testing::TempDir tmp;
  drivers::SandboxDriver driver(tmp / "state");
  auto t = driver.create();
  BuildContext ctx;
  auto pass = step("r", "t", TestArgs{exec({"sh", "-c", "exit 0"})});
  CHECK(check(pass, *t, ctx).verdict == Verdict::unknown);
  CHECK(apply(pass, *t, ctx).status == TaskStatus::ok);
  CHECK(apply(step("r", "t", TestArgs{exec({"false"})}), *t, ctx).status == TaskStatus::failed);
  auto writer = apply(step("r", "t", TestArgs{exec({"sh", "-c", "echo x > junk"})}), *t, ctx);
  CHECK(writer.status == TaskStatus::failed);
  CHECK(writer.message.find("modified") != std::string::npos);
  driver.destroy(*t);
}

TEST_CASE("fetch_url verifies the payload digest") {
  testing::TempDir tmp;
  testing::write_text(tmp / "payload.bin", "payload-bytes");
  std::string url = "file://" + (tmp / "payload.bin").string();
  BuildContext ctx;
  ctx.cache_dir = tmp / "cache";
  drivers::MockDriver driver;
  auto t = driver.create();
  auto good = step("r", "g", FetchUrlArgs{url, "/opt/p.bin", Digest::of("payload-bytes"), 0644});
  CHECK(apply(good, *t, ctx).status == TaskStatus::changed);
  CHECK(t->read_file("/opt/p.bin") == "payload-bytes");
  CHECK(check(good, *t, ctx).verdict == Verdict::converged);
  auto bad = apply(step("r", "b", FetchUrlArgs{url, "/opt/q.bin", Digest::of("other"), 0644}), *t, ctx);
  CHECK(bad.status == TaskStatus::failed);
  CHECK(bad.error_kind == "IntegrityError");
  CHECK_FALSE(t->stat("/opt/q.bin").exists);
}

TEST_CASE("converge stops at the first failure and skips the rest") {
  drivers::MockDriver driver;
  auto t = driver.create();
  auto ctx = fixture_context();
  Plan plan = plan_of({step("r", "a", FileArgs{"/a", "1", 0644}),
                       step("r", "b", CommandArgs{exec({"exit", "2"})}),
                       step("r", "c", FileArgs{"/c", "3", 0644})});
  std::ostringstream progress;
  auto report = converge(plan, *t, ctx, {&progress, std::nullopt});
  CHECK(report.outcome == Outcome::failed);
  CHECK(report.failed_step == 1);
  CHECK(report.results[0].status == TaskStatus::changed);
  CHECK(report.results[1].status == TaskStatus::failed);
  CHECK(report.results[2].status == TaskStatus::skipped);
  CHECK_FALSE(t->stat("/c").exists);
  std::string text = progress.str();
  CHECK(text.rfind("[r/a] CHANGED (", 0) == 0);
  CHECK(text.find("[r/b] FAILED (") != std::string::npos);
  CHECK(text.find("[r/c] SKIPPED (") != std::string::npos);
}

TEST_CASE("injected failures behave like real ones") {
  drivers::MockDriver driver;
  auto ctx = fixture_context();
  Plan plan = plan_of({step("r", "a", FileArgs{"/a", "1", 0644}), step("r", "b", FileArgs{"/b", "2", 0644}),
                       step("r", "c", FileArgs{"/c", "3", 0644})});
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    auto t = driver.create();
    auto report = converge(plan, *t, ctx, {nullptr, i});
    CHECK(report.failed_step == i);
    for (std::size_t k = i + 1; k < plan.steps.size(); ++k) {
      CHECK(report.results[k].status == TaskStatus::skipped);
    }
    CHECK(report.count(TaskStatus::changed) == i);
    driver.destroy(*t);
  }
}

TEST_CASE("property: a second converge changes nothing") {
  drivers::MockDriver driver;
  auto ctx = fixture_context();
  auto gen = testing::rng(40);
  for (int round = 0; round < 200; ++round) {
    Plan plan = random_plan(gen);
    auto t = driver.create();
    auto first = converge(plan, *t, ctx);
    REQUIRE(first.outcome == Outcome::success);
    Digest after_first = t->snapshot_digest();
    auto second = converge(plan, *t, ctx);
    CHECK(second.outcome == Outcome::success);
    CHECK(second.count(TaskStatus::changed) == 0);
    CHECK(t->snapshot_digest() == after_first);
    for (const auto& s : plan.steps) {
      if (s.task.directive() != Directive::test) {
        CHECK(check(s, *t, ctx).verdict == Verdict::converged);
      }
    }
    driver.destroy(*t);
  }
}
