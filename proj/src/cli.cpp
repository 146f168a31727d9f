#include "forgebox/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "forgebox/drivers.hpp"
#include "forgebox/engine.hpp"
#include "forgebox/errors.hpp"
#include "forgebox/gates.hpp"
#include "forgebox/planner.hpp"
#include "forgebox/speclang.hpp"
#include "fsutil.hpp"

namespace forgebox::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kSpecError = 2;

// Thrown for bad flag combinations found after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::optional<std::string> env(const char* name) {
  const char* value = std::getenv(name);
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::string(value);
}

std::int64_t parse_epoch(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    long long value = std::stoll(text, &used);
    if (used != text.size() || value < 0) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw UsageError(what + " must be a non-negative integer, got '" + text + "'");
  }
}

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Exclusive lock on <state_dir>/lock for commands that touch target records.
class StateLock {
 public:
  explicit StateLock(const fs::path& state_dir) {
    fs::create_directories(state_dir);
    fd_ = ::open((state_dir / "lock").c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) {
      throw IoError("cannot lock " + (state_dir / "lock").string());
    }
  }
  ~StateLock() {
    if (fd_ >= 0) ::close(fd_);
  }
  StateLock(const StateLock&) = delete;
  StateLock& operator=(const StateLock&) = delete;

 private:
  int fd_ = -1;
};

struct GlobalFlags {
  std::string config_path;
  std::string state_dir;
  std::string cache_dir;
  std::vector<std::string> registries;
  std::string driver;
};

CliConfig resolve_config(const GlobalFlags& flags) {
  CliConfig config;
  std::optional<std::string> file_state, file_cache, file_driver;
  std::vector<std::string> file_registries;

  std::string config_path =
      !flags.config_path.empty() ? flags.config_path
                                 : env("FORGEBOX_CONFIG").value_or("");
  if (!config_path.empty()) {
    json doc;
    try {
      doc = json::parse(fsutil::read_file(config_path));
    } catch (const json::exception& e) {
      throw UsageError("config " + config_path + ": " + e.what());
    }
    for (const auto& [key, value] : doc.items()) {
      if (key == "state_dir") {
        file_state = value.get<std::string>();
      } else if (key == "cache_dir") {
        file_cache = value.get<std::string>();
      } else if (key == "registries") {
        file_registries = value.get<std::vector<std::string>>();
      } else if (key == "default_driver") {
        file_driver = value.get<std::string>();
      } else {
        throw UsageError("config " + config_path + ": unknown key '" + key + "'");
      }
    }
  }

  if (!flags.state_dir.empty()) {
    config.state_dir = flags.state_dir;
  } else if (auto e = env("FORGEBOX_STATE_DIR")) {
    config.state_dir = *e;
  } else if (file_state) {
    config.state_dir = *file_state;
  }

  if (!flags.cache_dir.empty()) {
    config.cache_dir = flags.cache_dir;
  } else if (auto e = env("FORGEBOX_CACHE_DIR")) {
    config.cache_dir = *e;
  } else if (file_cache) {
    config.cache_dir = *file_cache;
  } else {
    config.cache_dir = config.state_dir / "cache";
  }

  if (!flags.registries.empty()) {
    config.registries = flags.registries;
  } else if (!file_registries.empty()) {
    config.registries = file_registries;
  } else {
    config.registries = {(config.state_dir / "registry").string()};
  }

  if (!flags.driver.empty()) {
    config.default_driver = flags.driver;
  } else if (file_driver) {
    config.default_driver = *file_driver;
  }
  if (config.default_driver != "sandbox" && config.default_driver != "mock") {
    throw UsageError("unknown driver '" + config.default_driver +
                     "' (expected sandbox or mock)");
  }
  return config;
}

std::unique_ptr<drivers::TargetDriver> make_driver(const CliConfig& config,
                                                   const fs::path& sandbox_dir) {
  if (config.default_driver == "mock") return std::make_unique<drivers::MockDriver>();
  return std::make_unique<drivers::SandboxDriver>(sandbox_dir);
}

// Destroys a target when the scope ends.
struct TargetGuard {
  drivers::TargetDriver& driver;
  std::unique_ptr<drivers::Target> target;
  ~TargetGuard() {
    try {
      if (target) driver.destroy(*target);
    } catch (const std::exception&) {
    }
  }
};

std::vector<std::string> split_roles(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct SpecBundle {
  speclang::Playbook playbook;
  std::vector<speclang::RoleSpec> roles;
  planner::Plan plan;
  fs::path context;
};

// Parse, lint and plan. Diagnostics go to `err`; lint errors throw.
SpecBundle load_specs(const std::string& playbook_path,
                      const std::string& context_flag,
                      const std::string& roles_flag, std::ostream& err) {
  SpecBundle bundle;
  bundle.playbook = speclang::load_playbook(playbook_path);
  bundle.context = context_flag.empty() ? fs::path(playbook_path).parent_path()
                                        : fs::path(context_flag);
  if (bundle.context.empty()) bundle.context = ".";
  if (!roles_flag.empty()) {
    auto selection = split_roles(roles_flag);
    std::set<std::string> seen;
    for (const auto& name : selection) {
      if (!speclang::is_identifier(name)) {
        throw UsageError("--roles: invalid role name '" + name + "'");
      }
      if (!seen.insert(name).second) {
        throw UsageError("--roles: role '" + name + "' listed twice");
      }
    }
    if (selection.empty()) throw UsageError("--roles must name at least one role");
    bundle.playbook.role_selection = selection;
  }
  bundle.roles = speclang::load_roles(bundle.context);
  auto diagnostics = speclang::lint(bundle.playbook, bundle.roles);
  for (const auto& d : diagnostics) err << d.to_string() << "\n";
  if (speclang::has_errors(diagnostics)) {
    throw SchemaError("lint found errors", 0);
  }
  bundle.plan = planner::make_plan(bundle.playbook, bundle.roles);
  return bundle;
}

fs::path records_dir(const CliConfig& config) { return config.state_dir / "records"; }
fs::path targets_dir(const CliConfig& config) { return config.state_dir / "targets"; }

imagestore::FetchOptions fetch_options(const CliConfig& config,
                                       const std::string& digest_flag) {
  imagestore::FetchOptions options;
  options.cache_dir = config.cache_dir;
  options.registries = config.registries;
  if (!digest_flag.empty()) {
    std::string hex = digest_flag;
    if (hex.rfind("sha256:", 0) == 0) hex = hex.substr(7);
    if (!Digest::is_valid_hex(hex)) {
      throw UsageError("--digest must be 64 lowercase hex characters");
    }
    options.expected_digest = Digest::parse(hex);
  }
  return options;
}

// Registry root for publishing: --out, else the first configured registry.
fs::path publish_root(const CliConfig& config, const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  return config.registries.front();
}

struct Context {
  const CliConfig& config;
  std::ostream& out;
  std::ostream& err;
  const Hooks& hooks;
  imagestore::Transport& transport;
};

struct BuildFlags {
  std::string playbook;
  std::string context;
  std::string roles;
  std::string out;
  std::string epoch;
  bool gzip = false;
};

std::int64_t resolve_epoch(const BuildFlags& flags,
                           const speclang::Playbook& playbook,
                           std::ostream& err) {
  if (!flags.epoch.empty()) return parse_epoch(flags.epoch, "--epoch");
  if (auto e = env("FORGEBOX_EPOCH")) return parse_epoch(*e, "FORGEBOX_EPOCH");
  if (playbook.build_epoch) return *playbook.build_epoch;
  if (auto e = env("SOURCE_DATE_EPOCH")) return parse_epoch(*e, "SOURCE_DATE_EPOCH");
  err << "warning: no build epoch given (--epoch, FORGEBOX_EPOCH, build_epoch "
         "or SOURCE_DATE_EPOCH); using the current time, the image will not "
         "be reproducible\n";
  return now_seconds();
}

int cmd_build(const Context& ctx, const BuildFlags& flags) {
  SpecBundle specs = load_specs(flags.playbook, flags.context, flags.roles, ctx.err);
  std::int64_t epoch = resolve_epoch(flags, specs.playbook, ctx.err);
  fs::path registry = publish_root(ctx.config, flags.out);

  auto options = fetch_options(ctx.config, "");
  imagestore::ResolvedBase base =
      imagestore::resolve_base(specs.playbook.base_image, options, ctx.transport);
  ctx.err << "base: " << (base.ref ? base.ref->to_string() : "scratch") << "\n";

  auto driver = make_driver(ctx.config, ctx.config.state_dir / "work");
  TargetGuard guard{*driver, driver->instantiate(base.archive, base.digest)};

  engine::BuildContext build_context;
  build_context.root = specs.context;
  build_context.cache_dir = ctx.config.cache_dir;
  build_context.transport = &ctx.transport;
  engine::ConvergeOptions converge_options;
  converge_options.progress = &ctx.err;
  converge_options.inject_failure_at = ctx.hooks.inject_failure_at;
  engine::BuildReport report =
      engine::converge(specs.plan, *guard.target, build_context, converge_options);

  gates::GateDecision gate = gates::gate_build(report);
  if (!gate.passed) {
    ctx.err << "error: " << gate.reason << "\n" << report.to_text();
    ctx.err << "no image was produced\n";
    return kFailure;
  }

  imagestore::PackageOptions package_options;
  package_options.resolved_base = base.ref;
  imagestore::ImageArtifact artifact = imagestore::package(
      *guard.target, specs.plan, specs.playbook, epoch, package_options);
  ImageRef ref = imagestore::publish(artifact, registry, {flags.gzip});
  ctx.err << "published " << ref.to_string() << " to " << registry.string() << "\n";
  ctx.out << ref.path() << "\n" << "sha256:" << ref.digest->hex() << "\n";
  return kOk;
}

int cmd_validate(const Context& ctx, const BuildFlags& flags, bool explain) {
  SpecBundle specs = load_specs(flags.playbook, flags.context, flags.roles, ctx.err);
  if (explain) ctx.out << planner::to_text(specs.plan);
  ctx.err << specs.playbook.name << " " << specs.playbook.version << ": "
          << specs.plan.steps.size() << " step(s) across "
          << specs.plan.role_order.size() << " role(s)\n";
  return kOk;
}

int cmd_up(const Context& ctx, const std::string& source,
           const std::string& digest) {
  if (ctx.config.default_driver != "sandbox") {
    throw UsageError("up needs the sandbox driver: mock targets do not outlive the process");
  }
  auto fetched = imagestore::fetch(source, fetch_options(ctx.config, digest),
                                   ctx.transport);
  imagestore::ImageArtifact artifact = fetched.load();

  StateLock lock(ctx.config.state_dir);
  drivers::SandboxDriver driver(targets_dir(ctx.config));
  auto target = driver.instantiate(artifact.archive, fetched.digest);
  TargetRecord record{target->id(), artifact.ref().to_string(),
                      fs::path(target->root()), now_seconds()};
  try {
    fs::create_directories(records_dir(ctx.config));
    fsutil::write_atomic(records_dir(ctx.config) / (record.id + ".json"),
                         record.to_json());
  } catch (...) {
    driver.destroy(*target);
    throw;
  }
  ctx.err << "target " << record.id << " is up from " << record.image << "\n";
  ctx.out << record.id << "\n" << record.root.string() << "\n";
  return kOk;
}

int cmd_destroy(const Context& ctx, const std::string& id) {
  StateLock lock(ctx.config.state_dir);
  drivers::SandboxDriver driver(targets_dir(ctx.config));
  fs::path record = records_dir(ctx.config) / (id + ".json");
  bool had_record = fs::exists(record);
  bool had_root = driver.exists(id);
  if (!had_record && !had_root) {
    ctx.err << "warning: no target '" << id << "'\n";
    return kOk;
  }
  fs::remove(record);
  if (had_root) {
    auto target = driver.attach(id);
    driver.destroy(*target);
  }
  ctx.err << "destroyed " << id << "\n";
  ctx.out << id << "\n";
  return kOk;
}

int cmd_verify(const Context& ctx, const std::string& source,
               const std::string& digest) {
  imagestore::ImageArtifact artifact;
  try {
    auto fetched = imagestore::fetch(source, fetch_options(ctx.config, digest),
                                     ctx.transport);
    artifact = fetched.load();
  } catch (const IntegrityError& e) {
    gates::ChecklistReport report;
    report.criteria = {{"C1", false, std::string("integrity failure: ") + e.what()},
                       {"C2", false, "no target: C1 failed"},
                       {"C3", false, "no target: C1 failed"},
                       {"C4", false, "no target: C1 failed"}};
    ctx.out << report.to_text();
    return kFailure;
  }
  fs::path private_dir = ctx.config.state_dir / "verify";
  auto driver = make_driver(ctx.config, private_dir);
  gates::ChecklistReport report = gates::run_release_checklist(artifact, *driver);
  ctx.out << report.to_text();
  return report.overall ? kOk : kFailure;
}

int cmd_fetch(const Context& ctx, const std::string& source,
              const std::string& digest) {
  auto fetched = imagestore::fetch(source, fetch_options(ctx.config, digest),
                                   ctx.transport);
  ctx.out << fetched.archive_path.string() << "\n"
          << "sha256:" << fetched.digest.hex() << "\n";
  return kOk;
}

int cmd_publish(const Context& ctx, const std::string& path,
                const std::string& out_flag, bool gzip) {
  fs::path dir = path;
  if (fs::is_regular_file(dir)) dir = dir.parent_path();
  imagestore::ImageArtifact artifact;
  artifact.manifest =
      imagestore::ImageManifest::from_json(fsutil::read_file(dir / "manifest.json"));
  if (fs::exists(dir / "image.tar")) {
    artifact.archive = fsutil::read_file(dir / "image.tar");
  } else {
    artifact.archive = archive::gunzip(fsutil::read_file(dir / "image.tar.gz"));
  }
  fs::path registry = publish_root(ctx.config, out_flag);
  ImageRef ref = imagestore::publish(artifact, registry, {gzip});
  ctx.err << "published " << ref.to_string() << " to " << registry.string() << "\n";
  ctx.out << ref.path() << "\n" << "sha256:" << ref.digest->hex() << "\n";
  return kOk;
}

// Maps an escaped error onto the exit-code contract.
int report_error(std::ostream& err, const std::exception& e) {
  err << "error: " << e.what() << "\n";
  if (dynamic_cast<const UsageError*>(&e) ||
      dynamic_cast<const SyntaxError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const CycleError*>(&e) ||
      dynamic_cast<const UnknownRole*>(&e) ||
      dynamic_cast<const UnknownDependency*>(&e)) {
    return kSpecError;
  }
  return kFailure;
}

}  // namespace

std::string TargetRecord::to_json() const {
  json doc{{"id", id},
           {"image", image},
           {"root", root.string()},
           {"created_at", created_at}};
  return doc.dump(2) + "\n";
}

TargetRecord TargetRecord::from_json(std::string_view text) {
  try {
    json doc = json::parse(text);
    return {doc.at("id").get<std::string>(), doc.at("image").get<std::string>(),
            doc.at("root").get<std::string>(),
            doc.at("created_at").get<std::int64_t>()};
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed target record: ") + e.what());
  }
}

std::vector<TargetRecord> list_records(const fs::path& state_dir) {
  std::vector<TargetRecord> out;
  fs::path dir = state_dir / "records";
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    out.push_back(TargetRecord::from_json(fsutil::read_file(entry.path())));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err, const Hooks& hooks) {
  CLI::App app{"forgebox: declarative environment builds, images and release checks",
               "forgebox"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags global;
  app.add_option("--config", global.config_path, "JSON config file");
  app.add_option("--state-dir", global.state_dir, "State directory (default .forgebox)");
  app.add_option("--cache-dir", global.cache_dir, "Fetch cache directory");
  app.add_option("--registry", global.registries, "Registry location (repeatable)")
      ->take_all();
  app.add_option("--driver", global.driver, "Target driver: sandbox or mock");

  BuildFlags build_flags;
  auto* build = app.add_subcommand("build", "Provision, gate, package and publish a playbook");
  build->add_option("playbook", build_flags.playbook, "Playbook file")->required();
  build->add_option("--context", build_flags.context, "Build context (default: playbook directory)");
  build->add_option("--roles", build_flags.roles, "Comma-separated role selection override");
  build->add_option("--out", build_flags.out, "Registry to publish to");
  build->add_option("--epoch", build_flags.epoch, "Build epoch in seconds");
  build->add_flag("--gzip", build_flags.gzip, "Publish image.tar.gz");

  BuildFlags validate_flags;
  bool explain = false;
  auto* validate = app.add_subcommand("validate", "Parse, lint and plan without executing");
  validate->add_option("playbook", validate_flags.playbook, "Playbook file")->required();
  validate->add_option("--context", validate_flags.context, "Build context");
  validate->add_option("--roles", validate_flags.roles, "Role selection override");
  validate->add_flag("--explain", explain, "Print the plan, one step per line");

  std::string source, digest;
  auto* up = app.add_subcommand("up", "Fetch an image and instantiate a target from it");
  up->add_option("image", source, "Image ref, registry entry or URL")->required();
  up->add_option("--digest", digest, "Expected sha256");

  std::string target_id;
  auto* destroy = app.add_subcommand("destroy", "Destroy a target created by up");
  destroy->add_option("id", target_id, "Target id")->required();

  auto* verify = app.add_subcommand("verify", "Run the release checklist on an image");
  verify->add_option("image", source, "Image ref, registry entry or URL")->required();
  verify->add_option("--digest", digest, "Expected sha256");

  auto* fetch = app.add_subcommand("fetch", "Fetch and verify an image into the cache");
  fetch->add_option("source", source, "Image ref, registry entry or URL")->required();
  fetch->add_option("--digest", digest, "Expected sha256");

  std::string artifact_path, publish_out;
  bool publish_gzip = false;
  auto* publish = app.add_subcommand("publish", "Publish an image directory to a registry");
  publish->add_option("artifact", artifact_path, "Directory with manifest.json and image.tar")
      ->required();
  publish->add_option("--out", publish_out, "Registry to publish to");
  publish->add_flag("--gzip", publish_gzip, "Publish image.tar.gz");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kSpecError;
  }

  try {
    CliConfig config = resolve_config(global);
    imagestore::Transport& transport =
        hooks.transport ? *hooks.transport : imagestore::default_transport();
    Context ctx{config, out, err, hooks, transport};
    if (*build) return cmd_build(ctx, build_flags);
    if (*validate) return cmd_validate(ctx, validate_flags, explain);
    if (*up) return cmd_up(ctx, source, digest);
    if (*destroy) return cmd_destroy(ctx, target_id);
    if (*verify) return cmd_verify(ctx, source, digest);
    if (*fetch) return cmd_fetch(ctx, source, digest);
    if (*publish) return cmd_publish(ctx, artifact_path, publish_out, publish_gzip);
  } catch (const std::exception& e) {
    return report_error(err, e);
  }
  return kSpecError;
}

}  // namespace forgebox::cli
