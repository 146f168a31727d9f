#include "forgebox/digest.hpp"

#include <openssl/evp.h>

#include <array>

#include "forgebox/errors.hpp"

namespace forgebox {

struct Sha256::State {
  EVP_MD_CTX* ctx = nullptr;
  ~State() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : state_(std::make_unique<State>()) {
  state_->ctx = EVP_MD_CTX_new();
  if (state_->ctx == nullptr ||
      EVP_DigestInit_ex(state_->ctx, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: cannot initialise digest context");
  }
}

Sha256::~Sha256() = default;

void Sha256::update(std::string_view bytes) {
  if (bytes.empty()) return;
  if (EVP_DigestUpdate(state_->ctx, bytes.data(), bytes.size()) != 1) {
    throw Error("sha256: update failed");
  }
}

Digest Sha256::finish() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> raw{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(state_->ctx, raw.data(), &len) != 1 || len != 32) {
    throw Error("sha256: finalisation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(64);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[raw[i] >> 4]);
    hex.push_back(kHex[raw[i] & 0xf]);
  }
  // Leave the context reusable.
  EVP_DigestInit_ex(state_->ctx, EVP_sha256(), nullptr);
  return Digest(std::move(hex));
}

Digest Digest::of(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.finish();
}

bool Digest::is_valid_hex(std::string_view hex) {
  if (hex.size() != 64) return false;
  for (char c : hex) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

Digest Digest::parse(std::string_view hex) {
  if (!is_valid_hex(hex)) {
    throw Error("malformed sha256 digest '" + std::string(hex) + "'");
  }
  return Digest(std::string(hex));
}

}  // namespace forgebox
