#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace forgebox::fsutil {

// Throws NotFound if the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);

// Unique per process and call, for temporary names.
std::string unique_suffix();

}  // namespace forgebox::fsutil
