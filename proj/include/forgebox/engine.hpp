#pragma once

// State-driven convergence: assess each plan step against the target, apply
// only what diverges, stop at the first failure.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "forgebox/drivers.hpp"
#include "forgebox/imagestore.hpp"
#include "forgebox/planner.hpp"

namespace forgebox::engine {

inline constexpr std::string_view kPackageDatabase = "/var/fdb/packages.tsv";

enum class Verdict { converged, divergent, unknown };

// `test` always assesses unknown; pure-state directives never do.
struct StateAssessment {
  Verdict verdict = Verdict::unknown;
  std::string reason;
};

enum class TaskStatus { ok, changed, failed, skipped };
std::string_view status_name(TaskStatus status);

struct TaskResult {
  std::string role;
  std::string task_id;
  TaskStatus status = TaskStatus::ok;
  std::string message;
  std::int64_t duration_ms = 0;
  // Error class behind a failure, e.g. "IntegrityError"; empty otherwise.
  std::string error_kind;
};

enum class Outcome { success, failed };

// outcome == failed <=> some result failed <=> failed_step is set, and every
// result after failed_step is skipped.
struct BuildReport {
  std::vector<TaskResult> results;
  Outcome outcome = Outcome::success;
  std::optional<std::size_t> failed_step;

  std::size_t count(TaskStatus status) const;
  std::string to_text() const;
};

// Where role payloads and the package repository live:
//   <root>/roles/<name>/files/...
//   <root>/packages/index.tsv, <root>/packages/<name>-<version>.pkg
struct BuildContext {
  std::filesystem::path root;
  // Cache for fetch_url payloads; empty disables caching.
  std::filesystem::path cache_dir;
  imagestore::Transport* transport = &imagestore::default_transport();

  std::filesystem::path role_file(const std::string& role,
                                  const std::string& relative) const;
  std::filesystem::path packages_dir() const { return root / "packages"; }
};

// One package repository entry; index.tsv lines are `name\tversion\tsha256`.
struct PackageRecord {
  std::string name;
  std::string version;
  Digest sha256 = Digest::of("");
};
std::vector<PackageRecord> read_package_index(
    const std::filesystem::path& packages_dir);
std::string package_file_name(const std::string& name,
                              const std::string& version);

// Read-only. Throws DriverError on target I/O failure.
StateAssessment check(const planner::PlanStep& step, drivers::Target& target,
                      const BuildContext& context);

// Never throws for task-level problems: errors become a failed result.
TaskResult apply(const planner::PlanStep& step, drivers::Target& target,
                 const BuildContext& context);

struct ConvergeOptions {
  // Progress lines `[role/task] STATUS (ms)`; null for silence.
  std::ostream* progress = nullptr;
  // Force a failure at this step index instead of running it.
  std::optional<std::size_t> inject_failure_at;
};

BuildReport converge(const planner::Plan& plan, drivers::Target& target,
                     const BuildContext& context,
                     const ConvergeOptions& options = {});

}  // namespace forgebox::engine
