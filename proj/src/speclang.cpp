#include "forgebox/speclang.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "forgebox/errors.hpp"

namespace forgebox::speclang {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kDirectiveNames[] = {
    "file", "dir", "copy", "fetch_url", "package", "command", "test"};

int line_of(const YAML::Node& node) {
  return node.Mark().line >= 0 ? node.Mark().line + 1 : 0;
}

// Per-document parse state; only carries the source name for messages.
class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void schema(const std::string& message, int line) const {
    throw SchemaError(where(line) + message, line);
  }

  std::string where(int line) const {
    return source_ + ":" + std::to_string(line) + ": ";
  }

  YAML::Node load(std::string_view text) const {
    std::size_t line = 1;
    for (char c : text) {
      if (c == '\t') {
        throw SyntaxError(where(static_cast<int>(line)) +
                              "tab characters are not allowed",
                          static_cast<int>(line));
      }
      if (c == '\n') ++line;
    }
    std::vector<YAML::Node> docs;
    try {
      docs = YAML::LoadAll(std::string(text));
    } catch (const YAML::Exception& e) {
      int l = e.mark.line >= 0 ? e.mark.line + 1 : 0;
      throw SyntaxError(where(l) + e.msg, l);
    }
    if (docs.size() != 1) {
      throw SyntaxError(where(1) + "expected exactly one document, found " +
                            std::to_string(docs.size()),
                        1);
    }
    if (!docs.front().IsMap()) {
      schema("document must be a mapping", line_of(docs.front()));
    }
    return docs.front();
  }

  std::string scalar(const YAML::Node& node, std::string_view what) const {
    if (!node.IsScalar()) schema(std::string(what) + " must be a string", line_of(node));
    return node.Scalar();
  }

  std::vector<std::string> string_list(const YAML::Node& node,
                                       std::string_view what) const {
    if (!node.IsSequence()) {
      schema(std::string(what) + " must be a list", line_of(node));
    }
    std::vector<std::string> out;
    for (const auto& item : node) out.push_back(scalar(item, what));
    return out;
  }

  std::string identifier(const YAML::Node& node, std::string_view what) const {
    std::string value = scalar(node, what);
    if (!is_identifier(value)) {
      schema(std::string(what) + " '" + value +
                 "' must match [a-z0-9][a-z0-9_-]*",
             line_of(node));
    }
    return value;
  }

  std::string target_path(const YAML::Node& node, std::string_view what) const {
    std::string value = scalar(node, what);
    if (!is_target_path(value)) {
      schema(std::string(what) + " '" + value +
                 "' must be an absolute target path without '.' or '..'",
             line_of(node));
    }
    return value;
  }

  Mode mode(const YAML::Node& node) const {
    std::string value = scalar(node, "mode");
    bool ok = value.size() >= 3 && value.size() <= 5 &&
              std::all_of(value.begin(), value.end(),
                          [](char c) { return c >= '0' && c <= '7'; });
    unsigned parsed = 0;
    if (ok) {
      std::from_chars(value.data(), value.data() + value.size(), parsed, 8);
      ok = parsed <= 07777;
    }
    if (!ok) schema("mode '" + value + "' must be octal, e.g. \"0644\"", line_of(node));
    return parsed;
  }

 private:
  std::string source_;
};

// Walks one mapping: every key must be consumed exactly once, duplicates and
// leftovers are errors.
class Fields {
 public:
  Fields(const Reader& reader, const YAML::Node& node, std::string context)
      : reader_(reader), node_(node), context_(std::move(context)) {
    if (!node.IsMap()) {
      reader_.schema(context_ + " must be a mapping", line_of(node));
    }
    for (auto it = node.begin(); it != node.end(); ++it) {
      std::string key = reader_.scalar(it->first, "key");
      if (!seen_.insert(key).second) {
        throw DuplicateError(reader_.where(line_of(it->first)) +
                                 "duplicate key '" + key + "' in " + context_,
                             line_of(it->first));
      }
      order_.push_back({key, it->first, it->second});
    }
  }

  std::optional<YAML::Node> optional(std::string_view key) {
    for (auto& item : order_) {
      if (item.key == key) {
        item.used = true;
        return item.value;
      }
    }
    return std::nullopt;
  }

  YAML::Node required(std::string_view key) {
    auto value = optional(key);
    if (!value) {
      reader_.schema(context_ + " is missing required key '" +
                         std::string(key) + "'",
                     line_of(node_));
    }
    return *value;
  }

  // Keys not yet consumed, in document order.
  std::vector<std::pair<std::string, YAML::Node>> remaining() const {
    std::vector<std::pair<std::string, YAML::Node>> out;
    for (const auto& item : order_) {
      if (!item.used) out.emplace_back(item.key, item.key_node);
    }
    return out;
  }

  void finish() const {
    auto rest = remaining();
    if (!rest.empty()) {
      reader_.schema("unknown key '" + rest.front().first + "' in " + context_,
                     line_of(rest.front().second));
    }
  }

 private:
  struct Item {
    std::string key;
    YAML::Node key_node;
    YAML::Node value;
    bool used = false;
  };
  const Reader& reader_;
  YAML::Node node_;
  std::string context_;
  std::set<std::string> seen_;
  std::vector<Item> order_;
};

ExecSpec parse_exec(const Reader& r, const YAML::Node& node,
                    const std::string& context) {
  Fields f(r, node, context);
  ExecSpec exec;
  auto argv = f.required("argv");
  exec.argv = r.string_list(argv, "argv");
  if (exec.argv.empty()) r.schema(context + ": argv must not be empty", line_of(argv));
  if (auto cwd = f.optional("cwd")) exec.cwd = r.target_path(*cwd, "cwd");
  if (auto env = f.optional("env")) {
    Fields vars(r, *env, context + " env");
    for (const auto& [key, key_node] : vars.remaining()) {
      exec.env[key] = r.scalar(*vars.optional(key), "env value");
    }
  }
  f.finish();
  return exec;
}

TaskArgs parse_args(const Reader& r, Directive directive,
                    const YAML::Node& node, const std::string& context) {
  if (directive == Directive::command) return CommandArgs{parse_exec(r, node, context)};
  if (directive == Directive::test) return TestArgs{parse_exec(r, node, context)};
  Fields f(r, node, context);
  TaskArgs args;
  switch (directive) {
    case Directive::file: {
      FileArgs a;
      a.path = r.target_path(f.required("path"), "path");
      a.content = r.scalar(f.required("content"), "content");
      if (auto m = f.optional("mode")) a.mode = r.mode(*m);
      args = a;
      break;
    }
    case Directive::dir: {
      DirArgs a;
      a.path = r.target_path(f.required("path"), "path");
      if (auto m = f.optional("mode")) a.mode = r.mode(*m);
      args = a;
      break;
    }
    case Directive::copy: {
      CopyArgs a;
      auto src = f.required("src");
      a.src = r.scalar(src, "src");
      if (!is_target_path("/" + a.src) || a.src.front() == '/') {
        r.schema("src '" + a.src +
                     "' must be a relative path inside the role's files/",
                 line_of(src));
      }
      a.dest = r.target_path(f.required("dest"), "dest");
      if (auto m = f.optional("mode")) a.mode = r.mode(*m);
      args = a;
      break;
    }
    case Directive::fetch_url: {
      FetchUrlArgs a;
      a.url = r.scalar(f.required("url"), "url");
      a.dest = r.target_path(f.required("dest"), "dest");
      auto sha = f.required("sha256");
      std::string hex = r.scalar(sha, "sha256");
      if (!Digest::is_valid_hex(hex)) {
        r.schema("sha256 must be 64 lowercase hex characters", line_of(sha));
      }
      a.sha256 = Digest::parse(hex);
      if (auto m = f.optional("mode")) a.mode = r.mode(*m);
      args = a;
      break;
    }
    case Directive::package: {
      PackageArgs a;
      a.name = r.identifier(f.required("name"), "package name");
      auto version = f.required("version");
      a.version = r.scalar(version, "package version");
      if (!ImageRef::is_valid_version(a.version)) {
        r.schema("package version '" + a.version + "' is not valid",
                 line_of(version));
      }
      args = a;
      break;
    }
    case Directive::command:
    case Directive::test:
      break;
  }
  f.finish();
  return args;
}

TaskSpec parse_task(const Reader& r, const YAML::Node& node) {
  Fields f(r, node, "task");
  TaskSpec task;
  task.line = line_of(node);
  task.id = r.identifier(f.required("id"), "task id");
  std::string context = "task '" + task.id + "'";
  std::optional<YAML::Node> creates = f.optional("creates");

  std::optional<Directive> directive;
  YAML::Node args_node;
  for (const auto& [key, key_node] : f.remaining()) {
    auto d = directive_from_name(key);
    if (!d) {
      r.schema("unknown directive '" + key + "' in " + context,
               line_of(key_node));
    }
    if (directive) {
      r.schema(context + " has more than one directive ('" +
                   std::string(directive_name(*directive)) + "', '" + key +
                   "')",
               line_of(key_node));
    }
    directive = d;
    args_node = *f.optional(key);
  }
  if (!directive) r.schema(context + " has no directive", task.line);
  task.args = parse_args(r, *directive, args_node,
                         context + " " + std::string(directive_name(*directive)));
  if (creates) {
    if (*directive != Directive::command) {
      r.schema("'creates' is only allowed on command tasks (" + context + ")",
               line_of(*creates));
    }
    task.creates = r.target_path(*creates, "creates");
  }
  f.finish();
  return task;
}

std::string mode_string(Mode mode) {
  std::ostringstream s;
  s.width(4);
  s.fill('0');
  s << std::oct << mode;
  return s.str();
}

void emit_string(YAML::Emitter& out, const std::string& value) {
  out << YAML::DoubleQuoted << value;
}

void emit_list(YAML::Emitter& out, const std::vector<std::string>& items) {
  out << YAML::Flow << YAML::BeginSeq;
  for (const auto& item : items) emit_string(out, item);
  out << YAML::EndSeq;
}

void emit_exec(YAML::Emitter& out, const ExecSpec& exec) {
  out << YAML::BeginMap;
  out << YAML::Key << "argv" << YAML::Value;
  emit_list(out, exec.argv);
  out << YAML::Key << "cwd" << YAML::Value;
  emit_string(out, exec.cwd);
  if (!exec.env.empty()) {
    out << YAML::Key << "env" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : exec.env) {
      out << YAML::Key;
      emit_string(out, k);
      out << YAML::Value;
      emit_string(out, v);
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
}

void emit_field(YAML::Emitter& out, const char* key, const std::string& value) {
  out << YAML::Key << key << YAML::Value;
  emit_string(out, value);
}

struct ArgsEmitter {
  YAML::Emitter& out;
  void operator()(const FileArgs& a) {
    out << YAML::BeginMap;
    emit_field(out, "path", a.path);
    emit_field(out, "content", a.content);
    emit_field(out, "mode", mode_string(a.mode));
    out << YAML::EndMap;
  }
  void operator()(const DirArgs& a) {
    out << YAML::BeginMap;
    emit_field(out, "path", a.path);
    emit_field(out, "mode", mode_string(a.mode));
    out << YAML::EndMap;
  }
  void operator()(const CopyArgs& a) {
    out << YAML::BeginMap;
    emit_field(out, "src", a.src);
    emit_field(out, "dest", a.dest);
    emit_field(out, "mode", mode_string(a.mode));
    out << YAML::EndMap;
  }
  void operator()(const FetchUrlArgs& a) {
    out << YAML::BeginMap;
    emit_field(out, "url", a.url);
    emit_field(out, "dest", a.dest);
    emit_field(out, "sha256", a.sha256.hex());
    emit_field(out, "mode", mode_string(a.mode));
    out << YAML::EndMap;
  }
  void operator()(const PackageArgs& a) {
    out << YAML::BeginMap;
    emit_field(out, "name", a.name);
    emit_field(out, "version", a.version);
    out << YAML::EndMap;
  }
  void operator()(const CommandArgs& a) { emit_exec(out, a.exec); }
  void operator()(const TestArgs& a) { emit_exec(out, a.exec); }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string_view directive_name(Directive directive) {
  return kDirectiveNames[static_cast<std::size_t>(directive)];
}

std::optional<Directive> directive_from_name(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kDirectiveNames); ++i) {
    if (kDirectiveNames[i] == name) return static_cast<Directive>(i);
  }
  return std::nullopt;
}

VerifyConfig VerifyConfig::defaults() {
  VerifyConfig config;
  config.characteristics_paths = {
      "/" + std::string(kCharacteristicsFileName),
      std::string(kDesktopPath) + "/" + std::string(kCharacteristicsFileName)};
  return config;
}

std::string Diagnostic::to_string() const {
  return file + ":" + std::to_string(line) + ": " +
         (severity == Severity::error ? "error " : "warning ") + code + ": " +
         message;
}

bool is_identifier(std::string_view text) {
  return ImageRef::is_valid_name(text);
}

bool is_target_path(std::string_view text) {
  if (text.empty() || text.front() != '/') return false;
  if (text == "/") return true;
  std::string_view rest = text.substr(1);
  if (rest.back() == '/') rest.remove_suffix(1);
  if (rest.empty() || rest.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  while (start <= rest.size()) {
    std::size_t end = rest.find('/', start);
    if (end == std::string_view::npos) end = rest.size();
    std::string_view part = rest.substr(start, end - start);
    if (part.empty() || part == "." || part == "..") return false;
    start = end + 1;
  }
  return true;
}

Playbook parse_playbook(std::string_view text, std::string source) {
  Reader r(source);
  YAML::Node root = r.load(text);
  Fields f(r, root, "playbook");
  Playbook pb;
  pb.source = source;
  pb.name = r.identifier(f.required("name"), "playbook name");
  auto version = f.required("version");
  pb.version = r.scalar(version, "version");
  if (!ImageRef::is_valid_version(pb.version)) {
    r.schema("version '" + pb.version +
                 "' must be non-empty with characters [A-Za-z0-9._+-]",
             line_of(version));
  }
  auto base = f.required("base_image");
  std::string base_text = r.scalar(base, "base_image");
  if (base_text != "scratch") {
    try {
      pb.base_image = ImageRef::parse(base_text);
    } catch (const Error& e) {
      r.schema(std::string("base_image: ") + e.what(), line_of(base));
    }
  }
  auto roles = f.required("roles");
  if (!roles.IsSequence()) r.schema("roles must be a list", line_of(roles));
  std::set<std::string> seen;
  for (const auto& item : roles) {
    std::string name = r.identifier(item, "role name");
    if (!seen.insert(name).second) {
      throw DuplicateError(r.where(line_of(item)) + "role '" + name +
                               "' selected more than once",
                           line_of(item));
    }
    pb.role_selection.push_back(std::move(name));
  }
  if (pb.role_selection.empty()) r.schema("roles must not be empty", line_of(roles));
  if (auto epoch = f.optional("build_epoch")) {
    std::string value = r.scalar(*epoch, "build_epoch");
    std::int64_t parsed = -1;
    auto [ptr, ec] =
        std::from_chars(value.data(), value.data() + value.size(), parsed);
    if (ec != std::errc() || ptr != value.data() + value.size() || parsed < 0) {
      r.schema("build_epoch must be a non-negative integer", line_of(*epoch));
    }
    pb.build_epoch = parsed;
  }
  if (auto verify = f.optional("verify")) {
    Fields v(r, *verify, "verify");
    if (auto paths = v.optional("characteristics_paths")) {
      if (!paths->IsSequence()) r.schema("characteristics_paths must be a list", line_of(*paths));
      pb.verify_config.characteristics_paths.clear();
      for (const auto& item : *paths) {
        pb.verify_config.characteristics_paths.push_back(
            r.target_path(item, "characteristics path"));
      }
    }
    if (auto paths = v.optional("docs_paths")) {
      if (!paths->IsSequence()) r.schema("docs_paths must be a list", line_of(*paths));
      for (const auto& item : *paths) {
        pb.verify_config.docs_paths.push_back(r.target_path(item, "docs path"));
      }
    }
    v.finish();
  }
  f.finish();
  return pb;
}

RoleSpec parse_role(std::string_view text, std::string source) {
  Reader r(source);
  YAML::Node root = r.load(text);
  Fields f(r, root, "role");
  RoleSpec role;
  role.source = source;
  role.name = r.identifier(f.required("name"), "role name");
  if (auto depends = f.optional("depends")) {
    if (!depends->IsSequence()) r.schema("depends must be a list", line_of(*depends));
    std::set<std::string> seen;
    for (const auto& item : *depends) {
      std::string dep = r.identifier(item, "dependency");
      if (dep == role.name) {
        throw SelfDependError(
            r.where(line_of(item)) + "role '" + dep + "' depends on itself",
            line_of(item));
      }
      if (!seen.insert(dep).second) {
        throw DuplicateError(
            r.where(line_of(item)) + "dependency '" + dep + "' listed twice",
            line_of(item));
      }
      role.depends.push_back(std::move(dep));
    }
  }
  auto tasks = f.required("tasks");
  if (!tasks.IsSequence()) r.schema("tasks must be a list", line_of(tasks));
  std::set<std::string> ids;
  for (const auto& item : tasks) {
    TaskSpec task = parse_task(r, item);
    if (!ids.insert(task.id).second) {
      throw DuplicateError(r.where(task.line) + "task id '" + task.id +
                               "' used twice in role '" + role.name + "'",
                           task.line);
    }
    role.tasks.push_back(std::move(task));
  }
  f.finish();
  return role;
}

std::string to_yaml(const Playbook& pb) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  emit_field(out, "name", pb.name);
  emit_field(out, "version", pb.version);
  emit_field(out, "base_image",
             pb.base_image ? pb.base_image->to_string() : "scratch");
  out << YAML::Key << "roles" << YAML::Value;
  emit_list(out, pb.role_selection);
  if (pb.build_epoch) {
    out << YAML::Key << "build_epoch" << YAML::Value << *pb.build_epoch;
  }
  out << YAML::Key << "verify" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "characteristics_paths" << YAML::Value;
  emit_list(out, pb.verify_config.characteristics_paths);
  out << YAML::Key << "docs_paths" << YAML::Value;
  emit_list(out, pb.verify_config.docs_paths);
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string to_yaml(const RoleSpec& role) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  emit_field(out, "name", role.name);
  out << YAML::Key << "depends" << YAML::Value;
  emit_list(out, role.depends);
  out << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
  for (const auto& task : role.tasks) {
    out << YAML::BeginMap;
    emit_field(out, "id", task.id);
    out << YAML::Key << std::string(directive_name(task.directive()))
        << YAML::Value;
    std::visit(ArgsEmitter{out}, task.args);
    if (task.creates) emit_field(out, "creates", *task.creates);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::vector<Diagnostic> lint(const Playbook& playbook,
                             const std::vector<RoleSpec>& roles) {
  std::vector<Diagnostic> out;
  std::set<std::string> known;
  for (const auto& role : roles) known.insert(role.name);

  for (const auto& name : playbook.role_selection) {
    if (!known.count(name)) {
      out.push_back({Severity::error, "E001", playbook.source, 0,
                     "selected role '" + name + "' has no role document"});
    }
  }
  for (const auto& role : roles) {
    for (const auto& dep : role.depends) {
      if (!known.count(dep)) {
        out.push_back({Severity::error, "E002", role.source, 0,
                       "role '" + role.name + "' depends on unknown role '" +
                           dep + "'"});
      }
    }
    for (const auto& task : role.tasks) {
      if (task.directive() == Directive::command && !task.creates) {
        out.push_back({Severity::warning, "W001", role.source, task.line,
                       "command task '" + role.name + "/" + task.id +
                           "' has no 'creates' guard and will run on every "
                           "build"});
      }
    }
  }
  return out;
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [](const Diagnostic& d) {
                       return d.severity == Severity::error;
                     });
}

Playbook load_playbook(const fs::path& path) {
  return parse_playbook(read_file(path), path.string());
}

std::vector<RoleSpec> load_roles(const fs::path& context_dir) {
  std::vector<RoleSpec> roles;
  fs::path roles_dir = context_dir / "roles";
  if (!fs::is_directory(roles_dir)) return roles;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(roles_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "role.yaml")) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    fs::path file = dir / "role.yaml";
    RoleSpec role = parse_role(read_file(file), file.string());
    if (role.name != dir.filename().string()) {
      throw SchemaError(file.string() + ":1: role name '" + role.name +
                            "' does not match its directory '" +
                            dir.filename().string() + "'",
                        1);
    }
    roles.push_back(std::move(role));
  }
  return roles;
}

}  // namespace forgebox::speclang
