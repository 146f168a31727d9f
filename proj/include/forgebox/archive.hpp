#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Canonical POSIX ustar streams. Everything that turns a tree into bytes
// (snapshots, images, fixture packages) goes through write_tar so equal trees
// always serialise to equal bytes.
namespace forgebox::archive {

enum class EntryKind { file, directory, symlink };

struct Entry {
  // Relative, '/'-separated, no leading or trailing slash, no '.' or '..'.
  std::string path;
  EntryKind kind = EntryKind::file;
  std::uint32_t mode = 0644;
  std::string content;      // file bytes
  std::string link_target;  // symlink target, as stored

  friend bool operator==(const Entry&, const Entry&) = default;
};

inline constexpr std::size_t kBlockSize = 512;
inline constexpr std::size_t kRecordSize = 10240;

// True when `path` is a well-formed relative entry name.
bool is_valid_entry_path(std::string_view path);

// Entries are sorted by path byte order; uid/gid are 0, uname/gname empty and
// every mtime is `mtime`. Throws forgebox::Error on duplicate or invalid paths
// and on names too long for ustar.
std::string write_tar(std::vector<Entry> entries, std::int64_t mtime);

// Parses a ustar stream written by write_tar or any ustar-compatible tool.
// Throws IntegrityError on checksum failures, truncation, unsupported entry
// types and unsafe paths.
std::vector<Entry> read_tar(std::string_view bytes);

// gzip with mtime 0, no file name and OS byte 255, so output is a pure
// function of input.
std::string gzip(std::string_view bytes);
std::string gunzip(std::string_view bytes);
bool is_gzip(std::string_view bytes);

}  // namespace forgebox::archive
