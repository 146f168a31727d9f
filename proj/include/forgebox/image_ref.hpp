#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "forgebox/digest.hpp"

namespace forgebox {

// `name/version[@sha256:<hex>]`. Within one registry name/version addresses
// exactly one image.
struct ImageRef {
  std::string name;
  std::string version;
  std::optional<Digest> digest;

  // Throws forgebox::Error on malformed input.
  static ImageRef parse(std::string_view text);
  static bool is_valid_name(std::string_view name);
  // Versions end up as directory names, so they are restricted to
  // [A-Za-z0-9._+-] and may not be "." or "..".
  static bool is_valid_version(std::string_view version);

  std::string to_string() const;
  std::string path() const { return name + "/" + version; }

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

}  // namespace forgebox
