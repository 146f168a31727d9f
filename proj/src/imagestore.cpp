#include "forgebox/imagestore.hpp"

#include <json.hpp>

#include <algorithm>
#include <ctime>

#include "forgebox/archive.hpp"
#include "forgebox/errors.hpp"
#include "fsutil.hpp"

namespace forgebox::imagestore {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kArchiveName = "image.tar";
constexpr std::string_view kGzipArchiveName = "image.tar.gz";
constexpr std::string_view kManifestName = "manifest.json";
constexpr std::string_view kDigestName = "image.sha256";

std::string trim(std::string_view text) {
  auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return "";
  auto end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

// Accepts a bare hex digest or `sha256sum` output.
Digest parse_digest_file(std::string_view text, const std::string& where) {
  std::string body = trim(text);
  body = body.substr(0, body.find_first_of(" \t"));
  if (!Digest::is_valid_hex(body)) {
    throw IntegrityError("malformed digest file " + where);
  }
  return Digest::parse(body);
}

json exec_to_json(const speclang::ExecSpec& exec) {
  return json{{"argv", exec.argv}, {"cwd", exec.cwd}, {"env", exec.env}};
}

}  // namespace

std::string format_epoch(std::int64_t epoch) {
  std::time_t t = static_cast<std::time_t>(epoch);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string ImageManifest::to_json() const {
  json tests_json = json::array();
  for (const auto& t : tests) {
    json entry = exec_to_json(t.exec);
    entry["role"] = t.role;
    entry["task_id"] = t.task_id;
    tests_json.push_back(std::move(entry));
  }
  json doc{
      {"name", name},
      {"version", version},
      {"created_at", created_at},
      {"base_image", base_image ? base_image->to_string() : "scratch"},
      {"roles", roles},
      {"archive_digest", archive_digest.hex()},
      {"tests", tests_json},
      {"verify_config",
       {{"characteristics_paths", verify_config.characteristics_paths},
        {"docs_paths", verify_config.docs_paths}}},
      {"tool_version", tool_version},
  };
  return doc.dump(2) + "\n";
}

ImageManifest ImageManifest::from_json(std::string_view text) {
  try {
    json doc = json::parse(text);
    ImageManifest m;
    m.name = doc.at("name").get<std::string>();
    m.version = doc.at("version").get<std::string>();
    m.created_at = doc.at("created_at").get<std::int64_t>();
    std::string base = doc.at("base_image").get<std::string>();
    if (base != "scratch") m.base_image = ImageRef::parse(base);
    m.roles = doc.at("roles").get<std::vector<std::string>>();
    m.archive_digest = Digest::parse(doc.at("archive_digest").get<std::string>());
    for (const auto& t : doc.at("tests")) {
      TestCommand cmd;
      cmd.role = t.at("role").get<std::string>();
      cmd.task_id = t.at("task_id").get<std::string>();
      cmd.exec.argv = t.at("argv").get<std::vector<std::string>>();
      cmd.exec.cwd = t.value("cwd", std::string("/"));
      if (t.contains("env")) {
        cmd.exec.env = t.at("env").get<std::map<std::string, std::string>>();
      }
      m.tests.push_back(std::move(cmd));
    }
    const auto& vc = doc.at("verify_config");
    m.verify_config.characteristics_paths =
        vc.at("characteristics_paths").get<std::vector<std::string>>();
    m.verify_config.docs_paths =
        vc.at("docs_paths").get<std::vector<std::string>>();
    m.tool_version = doc.at("tool_version").get<std::string>();
    if (!ImageRef::is_valid_name(m.name) ||
        !ImageRef::is_valid_version(m.version)) {
      throw IntegrityError("manifest names an invalid image reference");
    }
    return m;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed manifest: ") + e.what());
  } catch (const IntegrityError&) {
    throw;
  } catch (const Error& e) {
    throw IntegrityError(std::string("malformed manifest: ") + e.what());
  }
}

std::string characteristics_text(const ImageManifest& m) {
  std::string roles;
  for (const auto& r : m.roles) roles += (roles.empty() ? "" : ", ") + r;
  return "name: " + m.name + "\n" + "version: " + m.version + "\n" +
         "built: " + format_epoch(m.created_at) + "\n" +
         "base: " + (m.base_image ? m.base_image->to_string() : "scratch") +
         "\n" + "roles: " + roles + "\n" + "tool: " + m.tool_version + "\n";
}

std::vector<std::pair<std::string, std::string>> parse_characteristics(
    std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (trim(line).empty()) continue;
    auto colon = line.find(": ");
    if (colon == std::string_view::npos || colon == 0) {
      throw Error("characteristics line " + std::to_string(line_no) +
                  " is not 'key: value'");
    }
    out.emplace_back(std::string(line.substr(0, colon)),
                     std::string(line.substr(colon + 2)));
  }
  return out;
}

ImageArtifact package(drivers::Target& target, const planner::Plan& plan,
                      const speclang::Playbook& playbook, std::int64_t epoch,
                      const PackageOptions& options) {
  ImageArtifact artifact;
  ImageManifest& m = artifact.manifest;
  m.name = playbook.name;
  m.version = playbook.version;
  m.created_at = epoch;
  m.base_image = options.resolved_base ? options.resolved_base
                                       : playbook.base_image;
  m.roles = plan.role_order;
  for (const auto& step : plan.steps) {
    if (const auto* test = std::get_if<speclang::TestArgs>(&step.task.args)) {
      m.tests.push_back({step.role, step.task.id, test->exec});
    }
  }
  m.verify_config = playbook.verify_config;

  std::string text = characteristics_text(m);
  for (const auto& path : m.verify_config.characteristics_paths) {
    target.write_file(path, text, 0644);
  }
  artifact.archive = target.snapshot(epoch);
  m.archive_digest = Digest::of(artifact.archive);
  return artifact;
}

ImageRef publish(const ImageArtifact& artifact, const fs::path& registry_root,
                 const PublishOptions& options) {
  if (is_url(registry_root.string())) {
    throw IoError("publishing to remote registries is not supported: " +
                  registry_root.string());
  }
  if (!artifact.verifies()) {
    throw IntegrityError("artifact archive does not match its manifest digest");
  }
  ImageRef ref = artifact.ref();
  fs::path entry = registry_root / ref.name / ref.version;
  auto existing_matches = [&]() -> std::optional<bool> {
    if (!fs::exists(entry / kDigestName)) return std::nullopt;
    Digest existing = parse_digest_file(
        fsutil::read_file(entry / kDigestName), (entry / kDigestName).string());
    return existing == ref.digest;
  };
  auto settle = [&](bool same) {
    if (!same) {
      throw Conflict("registry already holds " + ref.path() +
                     " with a different digest");
    }
    return ref;
  };
  if (auto same = existing_matches()) return settle(*same);

  std::error_code ec;
  fs::create_directories(registry_root / ref.name, ec);
  if (ec) throw IoError("cannot create " + (registry_root / ref.name).string());
  fs::path staging =
      registry_root / ref.name / (".staging-" + fsutil::unique_suffix());
  fs::create_directory(staging, ec);
  if (ec) throw IoError("cannot create " + staging.string());
  try {
    if (options.gzip) {
      fsutil::write_atomic(staging / kGzipArchiveName,
                           archive::gzip(artifact.archive));
    } else {
      fsutil::write_atomic(staging / kArchiveName, artifact.archive);
    }
    fsutil::write_atomic(staging / kManifestName, artifact.manifest.to_json());
    fsutil::write_atomic(staging / kDigestName, ref.digest->hex() + "\n");
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  fs::rename(staging, entry, ec);
  if (ec) {
    fs::remove_all(staging);
    // Lost a race with another publisher; judge against what landed.
    if (auto same = existing_matches()) return settle(*same);
    throw IoError("cannot publish to " + entry.string() + ": " + ec.message());
  }
  return ref;
}

std::vector<ImageRef> list(const fs::path& registry_root) {
  std::vector<ImageRef> refs;
  if (!fs::is_directory(registry_root)) return refs;
  for (const auto& name_dir : fs::directory_iterator(registry_root)) {
    if (!name_dir.is_directory()) continue;
    for (const auto& version_dir : fs::directory_iterator(name_dir.path())) {
      fs::path digest_file = version_dir.path() / kDigestName;
      std::string name = name_dir.path().filename().string();
      std::string version = version_dir.path().filename().string();
      if (!ImageRef::is_valid_name(name) ||
          !ImageRef::is_valid_version(version) || !fs::exists(digest_file)) {
        continue;
      }
      refs.push_back({name, version,
                      parse_digest_file(fsutil::read_file(digest_file),
                                        digest_file.string())});
    }
  }
  std::sort(refs.begin(), refs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.name, a.version) < std::tie(b.name, b.version);
  });
  return refs;
}

std::string CountingTransport::get(const std::string& location) {
  ++requests_;
  std::string bytes = inner_.get(location);
  bytes_ += bytes.size();
  return bytes;
}

Transport& default_transport() {
  static DefaultTransport transport;
  return transport;
}

bool is_url(std::string_view location) {
  return location.find("://") != std::string_view::npos;
}

std::string join_location(const std::string& base, const std::string& rel) {
  if (is_url(base)) {
    return base.empty() || base.back() == '/' ? base + rel : base + "/" + rel;
  }
  return (fs::path(base) / rel).string();
}

ImageArtifact FetchedImage::load() const {
  ImageArtifact artifact;
  artifact.archive = fsutil::read_file(archive_path);
  artifact.manifest = ImageManifest::from_json(fsutil::read_file(manifest_path));
  if (artifact.manifest.archive_digest != digest || !artifact.verifies()) {
    throw IntegrityError("cached image " + digest.hex() +
                         " no longer matches its digest");
  }
  return artifact;
}

namespace {

class Cache {
 public:
  explicit Cache(fs::path root) : root_(std::move(root)) {}

  std::optional<FetchedImage> lookup(const Digest& digest) const {
    fs::path dir = root_ / "images" / digest.hex();
    if (!fs::exists(dir / kArchiveName) || !fs::exists(dir / kManifestName)) {
      return std::nullopt;
    }
    return FetchedImage{dir / kArchiveName, dir / kManifestName, digest};
  }

  // Only ever called with verified bytes.
  FetchedImage admit(const Digest& digest, std::string_view archive,
                     std::string_view manifest) {
    if (auto hit = lookup(digest)) return *hit;
    fs::create_directories(root_ / "images");
    fs::path staging = root_ / "images" / (".staging-" + fsutil::unique_suffix());
    fs::create_directory(staging);
    fsutil::write_atomic(staging / kArchiveName, archive);
    fsutil::write_atomic(staging / kManifestName, manifest);
    std::error_code ec;
    fs::rename(staging, root_ / "images" / digest.hex(), ec);
    if (ec) fs::remove_all(staging);
    auto hit = lookup(digest);
    if (!hit) throw IoError("cannot admit image " + digest.hex() + " to cache");
    return *hit;
  }

  std::optional<std::string> blob(const Digest& digest) const {
    fs::path path = root_ / "blobs" / digest.hex();
    if (!fs::exists(path)) return std::nullopt;
    return fsutil::read_file(path);
  }

  void admit_blob(const Digest& digest, std::string_view bytes) {
    fs::create_directories(root_ / "blobs");
    fsutil::write_atomic(root_ / "blobs" / digest.hex(), bytes);
  }

  fs::path ref_path(const std::string& registry, const ImageRef& ref) const {
    return root_ / "refs" / Digest::of(registry).hex().substr(0, 16) /
           ref.name / ref.version;
  }

  std::optional<Digest> ref(const std::string& registry,
                            const ImageRef& ref) const {
    fs::path path = ref_path(registry, ref);
    if (!fs::exists(path)) return std::nullopt;
    std::string text = trim(fsutil::read_file(path));
    if (!Digest::is_valid_hex(text)) return std::nullopt;
    return Digest::parse(text);
  }

  void remember_ref(const std::string& registry, const ImageRef& ref,
                    const Digest& digest) {
    fs::path path = ref_path(registry, ref);
    fs::create_directories(path.parent_path());
    fsutil::write_atomic(path, digest.hex() + "\n");
  }

 private:
  fs::path root_;
};

std::string get_archive(Transport& transport, const std::string& entry) {
  try {
    return transport.get(join_location(entry, std::string(kArchiveName)));
  } catch (const NotFound&) {
    std::string packed =
        transport.get(join_location(entry, std::string(kGzipArchiveName)));
    return archive::gunzip(packed);
  }
}

// Fetches one registry entry (a directory holding image.tar etc.). Callers
// that already consulted the cache for a pinned digest pass use_cache=false.
FetchedImage fetch_entry(const std::string& entry,
                         std::optional<Digest> expected, Cache& cache,
                         Transport& transport, bool use_cache = true) {
  if (expected && use_cache) {
    if (auto hit = cache.lookup(*expected)) return *hit;
  }
  Digest digest =
      expected ? *expected
               : parse_digest_file(
                     transport.get(join_location(entry, std::string(kDigestName))),
                     entry);
  if (!expected) {
    if (auto hit = cache.lookup(digest)) return *hit;
  }
  std::string archive_bytes = get_archive(transport, entry);
  Digest actual = Digest::of(archive_bytes);
  if (actual != digest) {
    throw IntegrityError("image from " + entry + " failed verification: expected sha256 " +
                         digest.hex() + ", got " + actual.hex());
  }
  std::string manifest_text =
      transport.get(join_location(entry, std::string(kManifestName)));
  ImageManifest manifest = ImageManifest::from_json(manifest_text);
  if (manifest.archive_digest != digest) {
    throw IntegrityError("manifest from " + entry +
                         " does not describe the fetched archive");
  }
  return cache.admit(digest, archive_bytes, manifest_text);
}

std::string parent_location(const std::string& location) {
  auto slash = location.find_last_of('/');
  if (slash == std::string::npos) return ".";
  return location.substr(0, slash);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

FetchedImage fetch(const std::string& source, const FetchOptions& options,
                   Transport& transport) {
  if (options.cache_dir.empty()) throw Error("fetch: no cache directory");
  Cache cache(options.cache_dir);

  // Anything that is not a URL and parses as name/version is a ref; paths
  // can always be disambiguated with a leading "./".
  std::string location = source;
  if (location.rfind("file://", 0) == 0) location = location.substr(7);
  bool is_ref = false;
  if (!is_url(location)) {
    try {
      ImageRef::parse(location);
      is_ref = true;
    } catch (const Error&) {
    }
  }
  if (!is_ref) {
    if (!is_url(location) && !fs::exists(location)) {
      throw NotFound("no image at " + source);
    }
    if (ends_with(location, kArchiveName) || ends_with(location, kGzipArchiveName)) {
      location = parent_location(location);
    }
    return fetch_entry(location, options.expected_digest, cache, transport);
  }

  ImageRef ref = ImageRef::parse(source);
  std::optional<Digest> expected = options.expected_digest;
  if (ref.digest) {
    if (expected && *expected != *ref.digest) {
      throw IntegrityError("ref digest and expected digest disagree for " +
                           source);
    }
    expected = ref.digest;
  }
  if (options.registries.empty()) {
    throw NotFound("no registries configured to resolve " + source);
  }
  for (const auto& registry : options.registries) {
    std::optional<Digest> known = expected ? expected : cache.ref(registry, ref);
    if (known) {
      if (auto hit = cache.lookup(*known)) {
        // A pinned digest alone could match an image cached under another name.
        auto cached = ImageManifest::from_json(fsutil::read_file(hit->manifest_path));
        if (cached.name == ref.name && cached.version == ref.version) return *hit;
      }
    }
    std::string entry = join_location(registry, ref.path());
    try {
      FetchedImage image = fetch_entry(entry, expected, cache, transport, false);
      cache.remember_ref(registry, ref, image.digest);
      return image;
    } catch (const NotFound&) {
      continue;
    }
  }
  throw NotFound("image " + source + " not found in any registry");
}

std::string fetch_blob(const std::string& url, const Digest& expected,
                       const fs::path& cache_dir, Transport& transport) {
  std::optional<Cache> cache;
  if (!cache_dir.empty()) {
    cache.emplace(cache_dir);
    if (auto hit = cache->blob(expected)) {
      if (Digest::of(*hit) == expected) return *hit;
    }
  }
  std::string bytes = transport.get(url);
  Digest actual = Digest::of(bytes);
  if (actual != expected) {
    throw IntegrityError("payload from " + url + " failed verification: expected sha256 " +
                         expected.hex() + ", got " + actual.hex());
  }
  if (cache) cache->admit_blob(expected, bytes);
  return bytes;
}

const std::string& scratch_archive() {
  static const std::string archive = archive::write_tar({}, 0);
  return archive;
}

ResolvedBase resolve_base(const std::optional<ImageRef>& base_image,
                          const FetchOptions& options, Transport& transport) {
  ResolvedBase base;
  if (!base_image) {
    base.archive = scratch_archive();
    base.digest = Digest::of(base.archive);
    return base;
  }
  FetchOptions opts = options;
  if (base_image->digest) opts.expected_digest = base_image->digest;
  ImageRef undigested{base_image->name, base_image->version, std::nullopt};
  FetchedImage image = fetch(undigested.to_string(), opts, transport);
  ImageArtifact artifact = image.load();
  base.scratch = false;
  base.ref = ImageRef{base_image->name, base_image->version, image.digest};
  base.archive = std::move(artifact.archive);
  base.digest = image.digest;
  return base;
}

}  // namespace forgebox::imagestore
