#pragma once

// Provisionable environments. A Target is a running environment rooted at
// some filesystem root; every path handed to it is interpreted relative to
// that root and must stay inside it.
//
// Two drivers ship: SandboxDriver (a directory on the host) and MockDriver
// (an in-memory tree with scripted command responses). VM or container
// drivers would implement the same TargetDriver interface.
//
// A Target is single-owner; distinct targets may be used from different
// threads. Driver construction and create/destroy are thread-safe.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forgebox/archive.hpp"
#include "forgebox/digest.hpp"

namespace forgebox::drivers {

using Env = std::map<std::string, std::string>;
using NodeKind = archive::EntryKind;

struct StatResult {
  bool exists = false;
  NodeKind kind = NodeKind::file;
  std::uint32_t mode = 0;
  std::uint64_t size = 0;
};

struct ExecOutcome {
  int exit_code = 0;
  std::string stdout_bytes;
  std::string stderr_bytes;
  std::int64_t duration_ms = 0;
};

enum class TargetState { alive, destroyed };

// Resolves a target path to the components of its real location, following
// symlinks reported by `read_link` (which returns the link text for a
// symlink and nothing otherwise). `..` above the root, absolute symlink
// targets, symlinks leaving the root and NUL bytes raise ConfinementError.
// A relative path is taken relative to `base`.
using LinkReader = std::function<std::optional<std::string>(
    const std::vector<std::string>& components)>;
std::vector<std::string> confine(std::string_view path, bool follow_final,
                                 const LinkReader& read_link,
                                 const std::vector<std::string>& base = {});

// True when a symlink at `link_path` (relative entry path) pointing to
// `link_target` stays inside the root, judged lexically.
bool symlink_stays_inside(std::string_view link_path,
                          std::string_view link_target);

class Target;

// Materialises archive entries inside a target: directories, files and
// symlinks in path order, then directory modes deepest first so restrictive
// modes cannot block their own children.
void populate(Target& target, const std::vector<archive::Entry>& entries);

class Target {
 public:
  explicit Target(std::string id) : id_(std::move(id)) {}
  virtual ~Target() = default;
  Target(const Target&) = delete;
  Target& operator=(const Target&) = delete;

  const std::string& id() const { return id_; }
  TargetState state() const { return state_; }
  bool alive() const { return state_ == TargetState::alive; }
  // Human-readable root handle: a host path or a mock token.
  virtual std::string root() const = 0;

  virtual ExecOutcome exec(const std::vector<std::string>& argv,
                           const Env& env, std::string_view cwd) = 0;
  // Missing parent directories are created with mode 0755.
  virtual void write_file(std::string_view path, std::string_view bytes,
                          std::uint32_t mode) = 0;
  virtual std::string read_file(std::string_view path) = 0;
  // Does not follow a symlink in the final component.
  virtual StatResult stat(std::string_view path) = 0;
  // Creates missing parents (0755); an existing directory gets `mode`.
  virtual void make_dir(std::string_view path, std::uint32_t mode) = 0;
  // Refuses absolute targets and targets leaving the root.
  virtual void make_symlink(std::string_view path,
                            std::string_view link_target) = 0;
  // Every entry below the root, sorted by path. Refuses escaping symlinks.
  virtual std::vector<archive::Entry> entries() = 0;

  // Deterministic ustar stream of the whole root.
  std::string snapshot(std::int64_t epoch = 0);
  Digest snapshot_digest(std::int64_t epoch = 0);

 protected:
  void require_alive() const;

 private:
  friend class TargetDriver;
  std::string id_;
  TargetState state_ = TargetState::alive;
};

class TargetDriver {
 public:
  virtual ~TargetDriver() = default;

  virtual std::string name() const = 0;
  virtual std::unique_ptr<Target> create() = 0;
  // Verifies the archive against `expected` (IntegrityError), then builds a
  // fresh target holding the archived tree.
  std::unique_ptr<Target> instantiate(std::string_view archive,
                                      const Digest& expected);
  // Releases the target's resources; the handle stays invalid for good.
  void destroy(Target& target);
  virtual std::size_t live_count() const = 0;

 protected:
  virtual void release(Target& target) = 0;
};

class SandboxDriver : public TargetDriver {
 public:
  // Roots live at <state_dir>/<id>/root.
  explicit SandboxDriver(std::filesystem::path state_dir);

  std::string name() const override { return "sandbox"; }
  std::unique_ptr<Target> create() override;
  // Re-opens a target created earlier (possibly by another process).
  std::unique_ptr<Target> attach(const std::string& id);
  bool exists(const std::string& id) const;
  std::filesystem::path root_of(const std::string& id) const;
  std::vector<std::string> list() const;
  std::size_t live_count() const override;
  const std::filesystem::path& state_dir() const { return state_dir_; }

 protected:
  void release(Target& target) override;

 private:
  std::filesystem::path state_dir_;
};

class MemoryTarget;

class MockDriver : public TargetDriver {
 public:
  using Handler = std::function<ExecOutcome(
      MemoryTarget& target, const std::vector<std::string>& argv,
      const Env& env, std::string_view cwd)>;

  // Built-in programs: `true`, `false`, `exit N`, `touch PATH...` and
  // `write PATH CONTENT`. Anything else exits 127 unless scripted.
  MockDriver();

  std::string name() const override { return "mock"; }
  std::unique_ptr<Target> create() override;
  std::size_t live_count() const override { return live_.load(); }

  // Scripts the response for every argv whose first element is `program`.
  void script(const std::string& program, Handler handler);
  std::optional<Handler> handler_for(const std::string& program) const;

 protected:
  void release(Target& target) override;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Handler> handlers_;
  std::atomic<std::size_t> next_id_{0};
  std::atomic<std::size_t> live_{0};
};

class MemoryTarget : public Target {
 public:
  MemoryTarget(std::string id, const MockDriver& driver);

  std::string root() const override { return "mem:" + id(); }
  ExecOutcome exec(const std::vector<std::string>& argv, const Env& env,
                   std::string_view cwd) override;
  void write_file(std::string_view path, std::string_view bytes,
                  std::uint32_t mode) override;
  std::string read_file(std::string_view path) override;
  StatResult stat(std::string_view path) override;
  void make_dir(std::string_view path, std::uint32_t mode) override;
  void make_symlink(std::string_view path,
                    std::string_view link_target) override;
  std::vector<archive::Entry> entries() override;

  // Drops the whole tree; used on destroy.
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::string> resolve(std::string_view path, bool follow_final,
                                   const std::vector<std::string>& base = {});
  void ensure_parents(const std::vector<std::string>& components);

  const MockDriver& driver_;
  // Keyed by relative path; the root itself is implicit.
  std::map<std::string, archive::Entry> nodes_;
};

}  // namespace forgebox::drivers
