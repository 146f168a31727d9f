#pragma once

// The `forgebox` command line. Every command exits 0 (success), 1 (build,
// gate, integrity or I/O failure) or 2 (usage, spec or lint error). Logs go
// to the error stream; refs, digests and target ids go to the output
// stream, one per line.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "forgebox/imagestore.hpp"

namespace forgebox::cli {

// Resolved from flags, then FORGEBOX_* environment variables, then an
// optional JSON config file (--config or FORGEBOX_CONFIG), then defaults.
struct CliConfig {
  std::filesystem::path state_dir = ".forgebox";
  std::filesystem::path cache_dir;          // default <state_dir>/cache
  std::vector<std::string> registries;      // default [<state_dir>/registry]
  std::string default_driver = "sandbox";   // or "mock"
};

// A target created by `up`. Stored at <state_dir>/records/<id>.json; its
// root lives at <state_dir>/targets/<id>/root. Records are written after
// the root exists and removed before the root is deleted.
struct TargetRecord {
  std::string id;
  std::string image;
  std::filesystem::path root;
  std::int64_t created_at = 0;

  std::string to_json() const;
  static TargetRecord from_json(std::string_view text);
};

std::vector<TargetRecord> list_records(const std::filesystem::path& state_dir);

// Seams for tests.
struct Hooks {
  std::optional<std::size_t> inject_failure_at;
  imagestore::Transport* transport = nullptr;
};

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err, const Hooks& hooks = {});

}  // namespace forgebox::cli
