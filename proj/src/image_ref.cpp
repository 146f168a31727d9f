#include "forgebox/image_ref.hpp"

#include "forgebox/errors.hpp"

namespace forgebox {

bool ImageRef::is_valid_name(std::string_view name) {
  if (name.empty()) return false;
  auto lower_or_digit = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
  };
  if (!lower_or_digit(name.front())) return false;
  for (char c : name) {
    if (!lower_or_digit(c) && c != '_' && c != '-') return false;
  }
  return true;
}

bool ImageRef::is_valid_version(std::string_view version) {
  if (version.empty() || version == "." || version == "..") return false;
  for (char c : version) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '+' ||
              c == '-';
    if (!ok) return false;
  }
  return true;
}

ImageRef ImageRef::parse(std::string_view text) {
  ImageRef ref;
  std::string_view body = text;
  if (auto at = text.find('@'); at != std::string_view::npos) {
    std::string_view digest = text.substr(at + 1);
    constexpr std::string_view kPrefix = "sha256:";
    if (digest.substr(0, kPrefix.size()) != kPrefix) {
      throw Error("image ref '" + std::string(text) +
                  "': digest must be written sha256:<hex>");
    }
    ref.digest = Digest::parse(digest.substr(kPrefix.size()));
    body = text.substr(0, at);
  }
  auto slash = body.find('/');
  if (slash == std::string_view::npos) {
    throw Error("image ref '" + std::string(text) +
                "' must have the form name/version");
  }
  ref.name = body.substr(0, slash);
  ref.version = body.substr(slash + 1);
  if (!is_valid_name(ref.name)) {
    throw Error("image ref '" + std::string(text) + "': invalid name");
  }
  if (!is_valid_version(ref.version)) {
    throw Error("image ref '" + std::string(text) + "': invalid version");
  }
  return ref;
}

std::string ImageRef::to_string() const {
  std::string out = path();
  if (digest) out += "@sha256:" + digest->hex();
  return out;
}

}  // namespace forgebox
