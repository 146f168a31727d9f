#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace forgebox {

// A SHA-256 digest held as 64 lowercase hex characters.
class Digest {
 public:
  static Digest of(std::string_view bytes);
  // Throws forgebox::Error unless `hex` is 64 lowercase hex characters.
  static Digest parse(std::string_view hex);
  static bool is_valid_hex(std::string_view hex);

  const std::string& hex() const { return hex_; }

  friend bool operator==(const Digest&, const Digest&) = default;
  friend auto operator<=>(const Digest&, const Digest&) = default;

 private:
  explicit Digest(std::string hex) : hex_(std::move(hex)) {}
  std::string hex_;

  friend class Sha256;
};

// Incremental hasher for streamed content.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  Digest finish();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace forgebox
