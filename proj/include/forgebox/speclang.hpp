#pragma once

// Playbook and role documents: typed specs, a strict YAML reader, a canonical
// writer and the linter.
//
// Parsing is pure. Unknown keys, tabs, duplicate keys and multi-document
// streams are all rejected; nothing is silently ignored.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "forgebox/image_ref.hpp"

namespace forgebox::speclang {

using Mode = std::uint32_t;

struct ExecSpec {
  std::vector<std::string> argv;
  std::string cwd = "/";
  std::map<std::string, std::string> env;

  friend bool operator==(const ExecSpec&, const ExecSpec&) = default;
};

struct FileArgs {
  std::string path;
  std::string content;
  Mode mode = 0644;
  friend bool operator==(const FileArgs&, const FileArgs&) = default;
};

struct DirArgs {
  std::string path;
  Mode mode = 0755;
  friend bool operator==(const DirArgs&, const DirArgs&) = default;
};

// `src` is relative to the owning role's files/ directory.
struct CopyArgs {
  std::string src;
  std::string dest;
  Mode mode = 0644;
  friend bool operator==(const CopyArgs&, const CopyArgs&) = default;
};

struct FetchUrlArgs {
  std::string url;
  std::string dest;
  Digest sha256 = Digest::of("");
  Mode mode = 0644;
  friend bool operator==(const FetchUrlArgs&, const FetchUrlArgs&) = default;
};

struct PackageArgs {
  std::string name;
  std::string version;
  friend bool operator==(const PackageArgs&, const PackageArgs&) = default;
};

struct CommandArgs {
  ExecSpec exec;
  friend bool operator==(const CommandArgs&, const CommandArgs&) = default;
};

struct TestArgs {
  ExecSpec exec;
  friend bool operator==(const TestArgs&, const TestArgs&) = default;
};

// Alternative order matches Directive.
using TaskArgs = std::variant<FileArgs, DirArgs, CopyArgs, FetchUrlArgs,
                              PackageArgs, CommandArgs, TestArgs>;

enum class Directive { file, dir, copy, fetch_url, package, command, test };

std::string_view directive_name(Directive directive);
std::optional<Directive> directive_from_name(std::string_view name);

struct TaskSpec {
  std::string id;
  TaskArgs args;
  // Only legal on `command`.
  std::optional<std::string> creates;
  // Source line of the task; informational, not part of equality.
  int line = 0;

  Directive directive() const { return static_cast<Directive>(args.index()); }

  friend bool operator==(const TaskSpec& a, const TaskSpec& b) {
    return a.id == b.id && a.args == b.args && a.creates == b.creates;
  }
};

struct RoleSpec {
  std::string name;
  std::vector<std::string> depends;
  std::vector<TaskSpec> tasks;
  // Where the role was read from; not part of equality.
  std::string source;

  friend bool operator==(const RoleSpec& a, const RoleSpec& b) {
    return a.name == b.name && a.depends == b.depends && a.tasks == b.tasks;
  }
};

inline constexpr std::string_view kCharacteristicsFileName =
    "machine_characteristics.txt";
inline constexpr std::string_view kDesktopPath = "/home/user/Desktop";

struct VerifyConfig {
  std::vector<std::string> characteristics_paths;
  std::vector<std::string> docs_paths;

  // The root path plus the desktop path; no documentation paths.
  static VerifyConfig defaults();

  friend bool operator==(const VerifyConfig&, const VerifyConfig&) = default;
};

struct Playbook {
  std::string name;
  std::string version;
  // Empty means `scratch`.
  std::optional<ImageRef> base_image;
  std::vector<std::string> role_selection;
  std::optional<std::int64_t> build_epoch;
  VerifyConfig verify_config = VerifyConfig::defaults();
  std::string source;

  friend bool operator==(const Playbook& a, const Playbook& b) {
    return a.name == b.name && a.version == b.version &&
           a.base_image == b.base_image &&
           a.role_selection == b.role_selection &&
           a.build_epoch == b.build_epoch && a.verify_config == b.verify_config;
  }
};

enum class Severity { error, warning };

struct Diagnostic {
  Severity severity = Severity::error;
  std::string code;
  std::string file;
  int line = 0;
  std::string message;

  // `file:line: severity CODE: message`
  std::string to_string() const;
};

bool is_identifier(std::string_view text);
// Target paths are written absolute (`/etc/x`) and are interpreted relative
// to the target root. `..` and `.` components are rejected.
bool is_target_path(std::string_view text);

// Both throw SyntaxError, SchemaError, DuplicateError (and SelfDependError
// for roles). `source` is only used in messages.
Playbook parse_playbook(std::string_view text, std::string source = "<playbook>");
RoleSpec parse_role(std::string_view text, std::string source = "<role>");

// Canonical documents; parse(to_yaml(x)) == x.
std::string to_yaml(const Playbook& playbook);
std::string to_yaml(const RoleSpec& role);

// W001: unguarded command. E001: selection names a missing role.
// E002: a role depends on a missing role.
std::vector<Diagnostic> lint(const Playbook& playbook,
                             const std::vector<RoleSpec>& roles);

bool has_errors(const std::vector<Diagnostic>& diagnostics);

// File helpers. load_roles reads every roles/<name>/role.yaml below
// `context_dir`, in name order, and checks each document's name matches its
// directory.
Playbook load_playbook(const std::filesystem::path& path);
std::vector<RoleSpec> load_roles(const std::filesystem::path& context_dir);

}  // namespace forgebox::speclang
