#pragma once

// Images: deterministic archives of converged targets plus a provenance
// manifest; filesystem registries; a digest-keyed fetch cache.
//
// Registry layout (plain static tree, servable over HTTP):
//   <root>/<name>/<version>/image.tar      (or image.tar.gz)
//   <root>/<name>/<version>/manifest.json
//   <root>/<name>/<version>/image.sha256   SHA-256 of the uncompressed tar
//
// Cache layout:
//   <cache>/images/<hex>/{image.tar,manifest.json}   verified images only
//   <cache>/blobs/<hex>                              verified fetch_url payloads
//   <cache>/refs/<registry-key>/<name>/<version>     resolved digest
// Everything is written to a temporary name first and renamed into place.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgebox/digest.hpp"
#include "forgebox/drivers.hpp"
#include "forgebox/image_ref.hpp"
#include "forgebox/planner.hpp"
#include "forgebox/speclang.hpp"

namespace forgebox::imagestore {

inline constexpr std::string_view kToolVersion = "forgebox 0.1.0";

struct TestCommand {
  std::string role;
  std::string task_id;
  speclang::ExecSpec exec;

  friend bool operator==(const TestCommand&, const TestCommand&) = default;
};

struct ImageManifest {
  std::string name;
  std::string version;
  std::int64_t created_at = 0;
  // Empty means `scratch`.
  std::optional<ImageRef> base_image;
  std::vector<std::string> roles;
  Digest archive_digest = Digest::of("");
  std::vector<TestCommand> tests;
  speclang::VerifyConfig verify_config;
  std::string tool_version{kToolVersion};

  // JSON with sorted keys, two-space indent, trailing newline.
  std::string to_json() const;
  // Throws IntegrityError on malformed documents.
  static ImageManifest from_json(std::string_view text);

  friend bool operator==(const ImageManifest&, const ImageManifest&) = default;
};

struct ImageArtifact {
  ImageManifest manifest;
  std::string archive;

  bool verifies() const { return Digest::of(archive) == manifest.archive_digest; }
  ImageRef ref() const {
    return {manifest.name, manifest.version, manifest.archive_digest};
  }
};

// `key: value` lines: name, version, built, base, roles, tool.
std::string characteristics_text(const ImageManifest& manifest);
// Throws forgebox::Error on lines that are not `key: value`.
std::vector<std::pair<std::string, std::string>> parse_characteristics(
    std::string_view text);
std::string format_epoch(std::int64_t epoch);

struct PackageOptions {
  // Base image as actually resolved (with digest); defaults to the
  // playbook's declaration.
  std::optional<ImageRef> resolved_base;
};

// Writes the characteristics file at every configured path, snapshots the
// target at `epoch` and fills the manifest from playbook and plan. The
// caller certifies the build succeeded.
ImageArtifact package(drivers::Target& target, const planner::Plan& plan,
                      const speclang::Playbook& playbook, std::int64_t epoch,
                      const PackageOptions& options = {});

// Publishing an identical artifact again is a no-op; a different artifact
// under the same name/version throws Conflict.
struct PublishOptions {
  bool gzip = false;
};
ImageRef publish(const ImageArtifact& artifact,
                 const std::filesystem::path& registry_root,
                 const PublishOptions& options = {});

// Every published name/version (with digest), sorted.
std::vector<ImageRef> list(const std::filesystem::path& registry_root);

// Moves bytes from a location: a filesystem path, file:// or http(s):// URL.
class Transport {
 public:
  virtual ~Transport() = default;
  // Throws NotFound when the resource does not exist, NetworkError otherwise.
  virtual std::string get(const std::string& location) = 0;
};

class DefaultTransport : public Transport {
 public:
  std::string get(const std::string& location) override;
};

// Counts what passes through another transport.
class CountingTransport : public Transport {
 public:
  explicit CountingTransport(Transport& inner) : inner_(inner) {}
  std::string get(const std::string& location) override;

  std::size_t bytes() const { return bytes_.load(); }
  std::size_t requests() const { return requests_.load(); }
  void reset() {
    bytes_ = 0;
    requests_ = 0;
  }

 private:
  Transport& inner_;
  std::atomic<std::size_t> bytes_{0};
  std::atomic<std::size_t> requests_{0};
};

Transport& default_transport();

bool is_url(std::string_view location);
// Appends a relative path to a directory path or URL.
std::string join_location(const std::string& base, const std::string& rel);

struct FetchedImage {
  std::filesystem::path archive_path;
  std::filesystem::path manifest_path;
  Digest digest = Digest::of("");

  // Reads both files back; throws IntegrityError if they no longer verify.
  ImageArtifact load() const;
};

struct FetchOptions {
  std::optional<Digest> expected_digest;
  std::filesystem::path cache_dir;
  // Searched in order when the source is a name/version ref.
  std::vector<std::string> registries;
};

// `source` is a registry entry location (directory path or URL), a direct
// image.tar[.gz] location, or a name/version ref looked up in the
// registries. Bytes are verified before they enter the cache; a cache hit
// transfers nothing. Throws IntegrityError, NotFound, NetworkError.
FetchedImage fetch(const std::string& source, const FetchOptions& options,
                   Transport& transport = default_transport());

// Raw payload by URL, verified against `expected`, cached under blobs/ when
// `cache_dir` is set.
std::string fetch_blob(const std::string& url, const Digest& expected,
                       const std::filesystem::path& cache_dir,
                       Transport& transport = default_transport());

struct ResolvedBase {
  bool scratch = true;
  std::optional<ImageRef> ref;  // with digest, when not scratch
  std::string archive;
  Digest digest = Digest::of("");
};

// The empty-tree archive every `scratch` build starts from.
const std::string& scratch_archive();

ResolvedBase resolve_base(const std::optional<ImageRef>& base_image,
                          const FetchOptions& options,
                          Transport& transport = default_transport());

}  // namespace forgebox::imagestore
