#include "forgebox/engine.hpp"

#include <chrono>
#include <ostream>
#include <sstream>
#include <typeinfo>

#include "forgebox/errors.hpp"
#include "fsutil.hpp"

namespace forgebox::engine {

namespace fs = std::filesystem;
using speclang::Directive;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

StateAssessment converged(std::string reason) {
  return {Verdict::converged, std::move(reason)};
}
StateAssessment divergent(std::string reason) {
  return {Verdict::divergent, std::move(reason)};
}

StateAssessment check_content(drivers::Target& target, const std::string& path,
                              const Digest& want, speclang::Mode mode) {
  auto st = target.stat(path);
  if (!st.exists) return divergent(path + " is absent");
  if (st.kind != drivers::NodeKind::file) {
    return divergent(path + " is not a regular file");
  }
  if (st.mode != mode) return divergent(path + " has a different mode");
  if (Digest::of(target.read_file(path)) != want) {
    return divergent(path + " has different content");
  }
  return converged(path + " is up to date");
}

bool package_installed(drivers::Target& target, const std::string& name,
                       const std::string& version) {
  auto st = target.stat(kPackageDatabase);
  if (!st.exists) return false;
  std::istringstream db(target.read_file(kPackageDatabase));
  std::string wanted = name + "\t" + version;
  for (std::string line; std::getline(db, line);) {
    if (line == wanted) return true;
  }
  return false;
}

std::string tail(const std::string& text, std::size_t max = 400) {
  std::string out = text.size() > max ? "..." + text.substr(text.size() - max)
                                      : text;
  while (!out.empty() && (out.back() == '\n' || out.back() == ' ')) out.pop_back();
  return out;
}

std::string describe_exit(const drivers::ExecOutcome& outcome) {
  std::string message = "exit code " + std::to_string(outcome.exit_code);
  std::string err = tail(outcome.stderr_bytes);
  if (!err.empty()) message += ": " + err;
  return message;
}

// Error class name for reports; most-derived first.
std::string kind_of(const std::exception& e) {
  if (dynamic_cast<const IntegrityError*>(&e)) return "IntegrityError";
  if (dynamic_cast<const PackageNotFound*>(&e)) return "PackageNotFound";
  if (dynamic_cast<const ConfinementError*>(&e)) return "ConfinementError";
  if (dynamic_cast<const DeadTarget*>(&e)) return "DeadTarget";
  if (dynamic_cast<const DriverError*>(&e)) return "DriverError";
  if (dynamic_cast<const NotFound*>(&e)) return "NotFound";
  if (dynamic_cast<const NetworkError*>(&e)) return "NetworkError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "InternalError";
}

void install_package(const speclang::PackageArgs& pkg, drivers::Target& target,
                     const BuildContext& context) {
  const PackageRecord* record = nullptr;
  auto index = read_package_index(context.packages_dir());
  for (const auto& r : index) {
    if (r.name == pkg.name && r.version == pkg.version) record = &r;
  }
  if (record == nullptr) {
    throw PackageNotFound("package " + pkg.name + " " + pkg.version +
                          " is not in the repository index");
  }
  fs::path file = context.packages_dir() / package_file_name(pkg.name, pkg.version);
  std::string bytes;
  try {
    bytes = fsutil::read_file(file);
  } catch (const NotFound&) {
    throw PackageNotFound("package archive " + file.string() + " is missing");
  }
  Digest actual = Digest::of(bytes);
  if (actual != record->sha256) {
    throw IntegrityError("package " + file.filename().string() +
                         " does not match its index digest");
  }
  drivers::populate(target, archive::read_tar(bytes));
  std::string db;
  if (target.stat(kPackageDatabase).exists) db = target.read_file(kPackageDatabase);
  db += pkg.name + "\t" + pkg.version + "\n";
  target.write_file(kPackageDatabase, db, 0644);
}

// Returns a message for the result; throws on failure.
std::string apply_step(const planner::PlanStep& step, drivers::Target& target,
                       const BuildContext& context, TaskStatus& status) {
  status = TaskStatus::changed;
  return std::visit(
      overloaded{
          [&](const speclang::FileArgs& a) {
            target.write_file(a.path, a.content, a.mode);
            return "wrote " + a.path;
          },
          [&](const speclang::DirArgs& a) {
            target.make_dir(a.path, a.mode);
            return "created " + a.path;
          },
          [&](const speclang::CopyArgs& a) {
            std::string bytes =
                fsutil::read_file(context.role_file(step.role, a.src));
            target.write_file(a.dest, bytes, a.mode);
            return "copied " + a.src + " to " + a.dest;
          },
          [&](const speclang::FetchUrlArgs& a) {
            std::string bytes = imagestore::fetch_blob(
                a.url, a.sha256, context.cache_dir, *context.transport);
            target.write_file(a.dest, bytes, a.mode);
            return "fetched " + a.url;
          },
          [&](const speclang::PackageArgs& a) {
            install_package(a, target, context);
            return "installed " + a.name + " " + a.version;
          },
          [&](const speclang::CommandArgs& a) {
            auto outcome = target.exec(a.exec.argv, a.exec.env, a.exec.cwd);
            if (outcome.exit_code != 0) {
              status = TaskStatus::failed;
              return describe_exit(outcome);
            }
            return std::string("command succeeded");
          },
          [&](const speclang::TestArgs& a) {
            Digest before = target.snapshot_digest();
            auto outcome = target.exec(a.exec.argv, a.exec.env, a.exec.cwd);
            if (outcome.exit_code != 0) {
              status = TaskStatus::failed;
              return describe_exit(outcome);
            }
            if (target.snapshot_digest() != before) {
              status = TaskStatus::failed;
              return std::string("test modified the target filesystem");
            }
            status = TaskStatus::ok;
            return std::string("test passed");
          },
      },
      step.task.args);
}

std::int64_t ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - start)
      .count();
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view status_name(TaskStatus status) {
  switch (status) {
    case TaskStatus::ok:
      return "ok";
    case TaskStatus::changed:
      return "changed";
    case TaskStatus::failed:
      return "failed";
    case TaskStatus::skipped:
      return "skipped";
  }
  return "?";
}

std::size_t BuildReport::count(TaskStatus status) const {
  std::size_t n = 0;
  for (const auto& r : results) n += r.status == status;
  return n;
}

std::string BuildReport::to_text() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out << i << " " << r.role << "/" << r.task_id << " "
        << status_name(r.status);
    if (!r.message.empty()) out << " - " << r.message;
    out << "\n";
  }
  out << "outcome: " << (outcome == Outcome::success ? "success" : "failed");
  if (failed_step) out << " at step " << *failed_step;
  out << "\n";
  return out.str();
}

fs::path BuildContext::role_file(const std::string& role,
                                 const std::string& relative) const {
  if (!speclang::is_target_path("/" + relative)) {
    throw NotFound("invalid payload path '" + relative + "'");
  }
  return root / "roles" / role / "files" / relative;
}

std::string package_file_name(const std::string& name,
                              const std::string& version) {
  return name + "-" + version + ".pkg";
}

std::vector<PackageRecord> read_package_index(const fs::path& packages_dir) {
  std::vector<PackageRecord> out;
  fs::path index = packages_dir / "index.tsv";
  if (!fs::exists(index)) return out;
  std::istringstream in(fsutil::read_file(index));
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    PackageRecord r;
    std::string hex;
    if (!std::getline(fields, r.name, '\t') ||
        !std::getline(fields, r.version, '\t') || !std::getline(fields, hex) ||
        !Digest::is_valid_hex(hex)) {
      throw Error(index.string() + ":" + std::to_string(line_no) +
                  ": expected name<TAB>version<TAB>sha256");
    }
    r.sha256 = Digest::parse(hex);
    out.push_back(std::move(r));
  }
  return out;
}

StateAssessment check(const planner::PlanStep& step, drivers::Target& target,
                      const BuildContext& context) {
  return std::visit(
      overloaded{
          [&](const speclang::FileArgs& a) {
            return check_content(target, a.path, Digest::of(a.content), a.mode);
          },
          [&](const speclang::DirArgs& a) {
            auto st = target.stat(a.path);
            if (!st.exists) return divergent(a.path + " is absent");
            if (st.kind != drivers::NodeKind::directory) {
              return divergent(a.path + " is not a directory");
            }
            if (st.mode != a.mode) return divergent(a.path + " has a different mode");
            return converged(a.path + " exists");
          },
          [&](const speclang::CopyArgs& a) {
            Digest want = Digest::of(
                fsutil::read_file(context.role_file(step.role, a.src)));
            return check_content(target, a.dest, want, a.mode);
          },
          [&](const speclang::FetchUrlArgs& a) {
            auto st = target.stat(a.dest);
            if (!st.exists || st.kind != drivers::NodeKind::file) {
              return divergent(a.dest + " is absent");
            }
            if (Digest::of(target.read_file(a.dest)) != a.sha256) {
              return divergent(a.dest + " does not match the declared digest");
            }
            return converged(a.dest + " matches the declared digest");
          },
          [&](const speclang::PackageArgs& a) {
            if (package_installed(target, a.name, a.version)) {
              return converged(a.name + " " + a.version + " is installed");
            }
            return divergent(a.name + " " + a.version + " is not installed");
          },
          [&](const speclang::CommandArgs&) {
            if (!step.task.creates) {
              return StateAssessment{Verdict::unknown, "unguarded command"};
            }
            if (target.stat(*step.task.creates).exists) {
              return converged(*step.task.creates + " exists");
            }
            return divergent(*step.task.creates + " is absent");
          },
          [&](const speclang::TestArgs&) {
            return StateAssessment{Verdict::unknown, "tests always run"};
          },
      },
      step.task.args);
}

TaskResult apply(const planner::PlanStep& step, drivers::Target& target,
                 const BuildContext& context) {
  auto start = std::chrono::steady_clock::now();
  TaskResult result{step.role, step.task.id, TaskStatus::changed, "", 0, ""};
  try {
    result.message = apply_step(step, target, context, result.status);
  } catch (const std::exception& e) {
    result.status = TaskStatus::failed;
    result.error_kind = kind_of(e);
    result.message = result.error_kind + ": " + e.what();
  }
  result.duration_ms = ms_since(start);
  return result;
}

BuildReport converge(const planner::Plan& plan, drivers::Target& target,
                     const BuildContext& context,
                     const ConvergeOptions& options) {
  BuildReport report;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto& step = plan.steps[i];
    auto start = std::chrono::steady_clock::now();
    TaskResult result{step.role, step.task.id, TaskStatus::skipped, "", 0, ""};
    if (report.failed_step) {
      result.message = "skipped after failure at step " +
                       std::to_string(*report.failed_step);
    } else if (options.inject_failure_at == i) {
      result.status = TaskStatus::failed;
      result.message = "injected failure";
      result.error_kind = "Injected";
    } else {
      try {
        StateAssessment assessment = check(step, target, context);
        if (assessment.verdict == Verdict::converged) {
          result.status = TaskStatus::ok;
          result.message = assessment.reason;
        } else {
          result = apply(step, target, context);
        }
      } catch (const std::exception& e) {
        result.status = TaskStatus::failed;
        result.error_kind = kind_of(e);
        result.message = result.error_kind + ": " + e.what();
      }
    }
    result.duration_ms = ms_since(start);
    if (result.status == TaskStatus::failed) {
      report.failed_step = i;
      report.outcome = Outcome::failed;
    }
    if (options.progress != nullptr) {
      *options.progress << "[" << result.role << "/" << result.task_id << "] "
                        << upper(status_name(result.status)) << " ("
                        << result.duration_ms << " ms)";
      if (result.status == TaskStatus::failed) {
        *options.progress << " " << result.message;
      }
      *options.progress << "\n";
    }
    report.results.push_back(std::move(result));
  }
  return report;
}

}  // namespace forgebox::engine
