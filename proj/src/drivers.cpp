#include "forgebox/drivers.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

#include "forgebox/errors.hpp"

namespace forgebox::drivers {

namespace fs = std::filesystem;

namespace {

constexpr int kMaxSymlinkHops = 40;

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t end = path.find('/', start);
    if (end == std::string_view::npos) end = path.size();
    std::string_view part = path.substr(start, end - start);
    if (!part.empty() && part != ".") parts.emplace_back(part);
    start = end + 1;
  }
  return parts;
}

std::string join(const std::vector<std::string>& parts, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count && i < parts.size(); ++i) {
    if (i) out += '/';
    out += parts[i];
  }
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  return join(parts, parts.size());
}

std::string show(std::string_view path) {
  std::string out(path);
  std::replace(out.begin(), out.end(), '\0', '?');
  return out;
}

std::string random_id() {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id(12, '0');
  for (auto& c : id) c = kHex[rng() & 0xf];
  return id;
}

bool is_safe_id(std::string_view id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) {
           return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
         });
}

// Every relative argument that is not an option is resolved as a path and
// must stay inside the root, final symlink included since the program will
// follow it. Words that name nothing resolve lexically and pass. Absolute
// arguments are host paths (interpreters, tools) and are not checked.
void check_arguments(const std::vector<std::string>& argv,
                     const std::vector<std::string>& cwd,
                     const LinkReader& read_link) {
  for (const auto& arg : argv) {
    // execve would silently cut the argument at the NUL.
    if (arg.find('\0') != std::string::npos) {
      throw ConfinementError("argument '" + show(arg) + "' contains a NUL byte");
    }
    if (arg.empty() || arg.front() == '/' || arg.front() == '-') continue;
    try {
      confine(arg, true, read_link, cwd);
    } catch (const ConfinementError&) {
      throw ConfinementError("argument '" + show(arg) +
                             "' escapes the target root");
    }
  }
}

// Target-absolute form of a path given relative to `cwd`.
std::string absolute_from(std::string_view path,
                          const std::vector<std::string>& cwd) {
  if (!path.empty() && path.front() == '/') return std::string(path);
  std::string base = "/" + join(cwd);
  if (base.size() > 1) base += '/';
  return base + std::string(path);
}

class SandboxTarget : public Target {
 public:
  SandboxTarget(std::string id, fs::path root)
      : Target(std::move(id)), root_(std::move(root)) {}

  std::string root() const override { return root_.string(); }

  ExecOutcome exec(const std::vector<std::string>& argv, const Env& env,
                   std::string_view cwd) override;
  void write_file(std::string_view path, std::string_view bytes,
                  std::uint32_t mode) override;
  std::string read_file(std::string_view path) override;
  StatResult stat(std::string_view path) override;
  void make_dir(std::string_view path, std::uint32_t mode) override;
  void make_symlink(std::string_view path,
                    std::string_view link_target) override;
  std::vector<archive::Entry> entries() override;

 private:
  LinkReader link_reader() const {
    return [this](const std::vector<std::string>& parts)
               -> std::optional<std::string> {
      fs::path host = root_ / join(parts);
      struct stat st {};
      if (::lstat(host.c_str(), &st) != 0 || !S_ISLNK(st.st_mode)) {
        return std::nullopt;
      }
      std::string buf(4096, '\0');
      ssize_t n = ::readlink(host.c_str(), buf.data(), buf.size());
      if (n < 0) throw DriverError("readlink failed for " + host.string());
      buf.resize(static_cast<std::size_t>(n));
      return buf;
    };
  }

  std::vector<std::string> resolve(std::string_view path, bool follow_final,
                                   const std::vector<std::string>& base = {}) {
    require_alive();
    return confine(path, follow_final, link_reader(), base);
  }

  fs::path host(const std::vector<std::string>& parts) const {
    return parts.empty() ? root_ : root_ / join(parts);
  }

  void ensure_parents(const std::vector<std::string>& parts) {
    for (std::size_t i = 1; i < parts.size(); ++i) {
      fs::path dir = root_ / join(parts, i);
      struct stat st {};
      if (::lstat(dir.c_str(), &st) == 0) {
        if (!S_ISDIR(st.st_mode)) {
          throw DriverError("/" + join(parts, i) + " is not a directory");
        }
        continue;
      }
      if (::mkdir(dir.c_str(), 0755) != 0 && errno != EEXIST) {
        throw DriverError("mkdir " + dir.string() + ": " + std::strerror(errno));
      }
      ::chmod(dir.c_str(), 0755);
    }
  }

  fs::path root_;
};

ExecOutcome SandboxTarget::exec(const std::vector<std::string>& argv,
                                const Env& env, std::string_view cwd) {
  require_alive();
  if (argv.empty()) throw DriverError("exec: empty argv");
  auto cwd_parts = resolve(cwd, true);
  fs::path host_cwd = host(cwd_parts);
  struct stat st {};
  if (::stat(host_cwd.c_str(), &st) != 0 || !S_ISDIR(st.st_mode)) {
    throw NotFound("exec: working directory " + show(cwd) + " does not exist");
  }
  check_arguments(argv, cwd_parts, link_reader());

  Env full{
      {"PATH", (root_ / "usr/local/bin").string() + ":" +
                   (root_ / "usr/bin").string() + ":" +
                   (root_ / "bin").string() +
                   ":/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin"},
      {"HOME", (root_ / "home/user").string()},
      {"FORGEBOX_ROOT", root_.string()},
      {"LC_ALL", "C"},
  };
  for (const auto& [k, v] : env) full[k] = v;

  auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - started)
        .count();
  };

  std::string program = argv.front();
  if (program.find('/') == std::string::npos) {
    std::string found;
    std::stringstream dirs(full["PATH"]);
    for (std::string dir; std::getline(dirs, dir, ':');) {
      fs::path candidate = fs::path(dir) / program;
      if (!dir.empty() && ::access(candidate.c_str(), X_OK) == 0 &&
          !fs::is_directory(candidate)) {
        found = candidate.string();
        break;
      }
    }
    if (found.empty()) {
      return {127, "", program + ": command not found\n", elapsed()};
    }
    program = found;
  }

  std::vector<std::string> env_strings;
  for (const auto& [k, v] : full) env_strings.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = argv;
  std::vector<char*> argp;
  for (auto& s : args) argp.push_back(s.data());
  argp.push_back(nullptr);

  int out_pipe[2];
  int err_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw DriverError("pipe failed");
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    throw DriverError("pipe failed");
  }
  std::string host_cwd_str = host_cwd.string();
  pid_t pid = ::fork();
  if (pid < 0) throw DriverError("fork failed");
  if (pid == 0) {
    int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, 0);
    ::dup2(out_pipe[1], 1);
    ::dup2(err_pipe[1], 2);
    if (::chdir(host_cwd_str.c_str()) != 0) ::_exit(126);
    ::execve(program.c_str(), argp.data(), envp.data());
    ::_exit(127);
  }
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);

  ExecOutcome outcome;
  pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  std::string* sinks[2] = {&outcome.stdout_bytes, &outcome.stderr_bytes};
  int open_fds = 2;
  char buf[8192];
  while (open_fds > 0) {
    if (::poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || fds[i].revents == 0) continue;
      ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
      if (n > 0) {
        sinks[i]->append(buf, static_cast<std::size_t>(n));
      } else if (n == 0 || errno != EINTR) {
        ::close(fds[i].fd);
        fds[i].fd = -1;
        --open_fds;
      }
    }
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) {
    outcome.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    outcome.exit_code = 128 + WTERMSIG(status);
  } else {
    outcome.exit_code = 255;
  }
  outcome.duration_ms = elapsed();
  return outcome;
}

void SandboxTarget::write_file(std::string_view path, std::string_view bytes,
                               std::uint32_t mode) {
  auto parts = resolve(path, true);
  if (parts.empty()) throw DriverError("cannot write to the target root");
  ensure_parents(parts);
  fs::path dest = host(parts);
  struct stat st {};
  if (::lstat(dest.c_str(), &st) == 0 && S_ISDIR(st.st_mode)) {
    throw DriverError(show(path) + " is a directory");
  }
  static std::atomic<unsigned> counter{0};
  fs::path tmp = dest.parent_path() /
                 (".fbtmp-" + std::to_string(::getpid()) + "-" +
                  std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DriverError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DriverError("short write to " + tmp.string());
  }
  ::chmod(tmp.c_str(), mode & 07777);
  if (::rename(tmp.c_str(), dest.c_str()) != 0) {
    ::unlink(tmp.c_str());
    throw DriverError("rename onto " + dest.string() + ": " +
                      std::strerror(errno));
  }
}

std::string SandboxTarget::read_file(std::string_view path) {
  fs::path src = host(resolve(path, true));
  struct stat st {};
  if (::lstat(src.c_str(), &st) != 0) {
    throw NotFound("no such file in target: " + show(path));
  }
  if (!S_ISREG(st.st_mode)) {
    throw DriverError(show(path) + " is not a regular file");
  }
  std::ifstream in(src, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

StatResult SandboxTarget::stat(std::string_view path) {
  fs::path p = host(resolve(path, false));
  struct stat st {};
  StatResult result;
  if (::lstat(p.c_str(), &st) != 0) return result;
  result.exists = true;
  result.mode = st.st_mode & 07777;
  if (S_ISDIR(st.st_mode)) {
    result.kind = NodeKind::directory;
  } else if (S_ISLNK(st.st_mode)) {
    result.kind = NodeKind::symlink;
  } else {
    result.kind = NodeKind::file;
    result.size = static_cast<std::uint64_t>(st.st_size);
  }
  return result;
}

void SandboxTarget::make_dir(std::string_view path, std::uint32_t mode) {
  auto parts = resolve(path, true);
  if (parts.empty()) return;
  ensure_parents(parts);
  fs::path dir = host(parts);
  struct stat st {};
  if (::lstat(dir.c_str(), &st) == 0) {
    if (!S_ISDIR(st.st_mode)) {
      throw DriverError(show(path) + " exists and is not a directory");
    }
  } else if (::mkdir(dir.c_str(), 0755) != 0) {
    throw DriverError("mkdir " + dir.string() + ": " + std::strerror(errno));
  }
  ::chmod(dir.c_str(), mode & 07777);
}

void SandboxTarget::make_symlink(std::string_view path,
                                 std::string_view link_target) {
  auto parts = resolve(path, false);
  if (parts.empty()) throw DriverError("cannot replace the target root");
  if (!symlink_stays_inside(join(parts), link_target)) {
    throw ConfinementError("symlink " + show(path) + " -> " +
                           show(link_target) + " leaves the target root");
  }
  ensure_parents(parts);
  fs::path link = host(parts);
  struct stat st {};
  if (::lstat(link.c_str(), &st) == 0) {
    if (S_ISDIR(st.st_mode)) throw DriverError(show(path) + " is a directory");
    ::unlink(link.c_str());
  }
  std::string target_str(link_target);
  if (::symlink(target_str.c_str(), link.c_str()) != 0) {
    throw DriverError("symlink " + link.string() + ": " + std::strerror(errno));
  }
}

std::vector<archive::Entry> SandboxTarget::entries() {
  require_alive();
  std::vector<archive::Entry> out;
  for (auto it = fs::recursive_directory_iterator(root_);
       it != fs::recursive_directory_iterator(); ++it) {
    const fs::path& p = it->path();
    std::string rel = p.lexically_relative(root_).generic_string();
    struct stat st {};
    if (::lstat(p.c_str(), &st) != 0) {
      throw DriverError("lstat " + p.string() + ": " + std::strerror(errno));
    }
    archive::Entry e;
    e.path = rel;
    e.mode = st.st_mode & 07777;
    if (S_ISDIR(st.st_mode)) {
      e.kind = NodeKind::directory;
    } else if (S_ISREG(st.st_mode)) {
      e.kind = NodeKind::file;
      std::ifstream in(p, std::ios::binary);
      std::ostringstream buf;
      buf << in.rdbuf();
      e.content = buf.str();
    } else if (S_ISLNK(st.st_mode)) {
      e.kind = NodeKind::symlink;
      e.link_target = *link_reader()(split_path(rel));
      if (!symlink_stays_inside(rel, e.link_target)) {
        throw ConfinementError("refusing to snapshot symlink /" + rel +
                               " -> " + e.link_target +
                               ": it leaves the target root");
      }
    } else {
      throw DriverError("unsupported file type at /" + rel);
    }
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

}  // namespace

std::vector<std::string> confine(std::string_view path, bool follow_final,
                                 const LinkReader& read_link,
                                 const std::vector<std::string>& base) {
  if (path.empty()) throw DriverError("empty path");
  if (path.find('\0') != std::string_view::npos) {
    throw ConfinementError("path contains a NUL byte: " + show(path));
  }
  std::vector<std::string> resolved;
  if (path.front() != '/') resolved = base;
  auto initial = split_path(path);
  std::deque<std::string> queue(initial.begin(), initial.end());
  int hops = 0;
  while (!queue.empty()) {
    std::string part = std::move(queue.front());
    queue.pop_front();
    if (part == "..") {
      if (resolved.empty()) {
        throw ConfinementError("path '" + show(path) +
                               "' escapes the target root");
      }
      resolved.pop_back();
      continue;
    }
    resolved.push_back(std::move(part));
    if (queue.empty() && !follow_final) break;
    auto link = read_link(resolved);
    if (!link) continue;
    if (++hops > kMaxSymlinkHops) {
      throw DriverError("too many levels of symbolic links in " + show(path));
    }
    if (link->empty() || link->front() == '/') {
      throw ConfinementError("path '" + show(path) + "' crosses symlink /" +
                             join(resolved) + " -> " + *link +
                             ", which leaves the target root");
    }
    resolved.pop_back();
    auto more = split_path(*link);
    queue.insert(queue.begin(), more.begin(), more.end());
  }
  return resolved;
}

bool symlink_stays_inside(std::string_view link_path,
                          std::string_view link_target) {
  if (link_target.empty() || link_target.front() == '/') return false;
  if (link_target.find('\0') != std::string_view::npos) return false;
  auto parts = split_path(link_path);
  if (!parts.empty()) parts.pop_back();
  for (auto& part : split_path(link_target)) {
    if (part == "..") {
      if (parts.empty()) return false;
      parts.pop_back();
    } else {
      parts.push_back(std::move(part));
    }
  }
  return true;
}

void Target::require_alive() const {
  if (state_ != TargetState::alive) {
    throw DeadTarget("target " + id_ + " has been destroyed");
  }
}

std::string Target::snapshot(std::int64_t epoch) {
  require_alive();
  return archive::write_tar(entries(), epoch);
}

Digest Target::snapshot_digest(std::int64_t epoch) {
  return Digest::of(snapshot(epoch));
}

void populate(Target& target, const std::vector<archive::Entry>& entries) {
  for (const auto& e : entries) {
    std::string path = "/" + e.path;
    switch (e.kind) {
      case NodeKind::directory:
        target.make_dir(path, 0755);
        break;
      case NodeKind::file:
        target.write_file(path, e.content, e.mode);
        break;
      case NodeKind::symlink:
        target.make_symlink(path, e.link_target);
        break;
    }
  }
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->kind == NodeKind::directory) target.make_dir("/" + it->path, it->mode);
  }
}

std::unique_ptr<Target> TargetDriver::instantiate(std::string_view archive,
                                                  const Digest& expected) {
  Digest actual = Digest::of(archive);
  if (actual != expected) {
    throw IntegrityError("archive digest mismatch: expected " +
                         expected.hex() + ", got " + actual.hex());
  }
  auto entries = archive::read_tar(archive);
  auto target = create();
  try {
    populate(*target, entries);
  } catch (...) {
    destroy(*target);
    throw;
  }
  return target;
}

void TargetDriver::destroy(Target& target) {
  if (!target.alive()) return;
  release(target);
  target.state_ = TargetState::destroyed;
}

// Sandbox driver.

// Absolute, because commands run with the target root as working directory
// and see root-based PATH entries.
SandboxDriver::SandboxDriver(fs::path state_dir)
    : state_dir_(fs::absolute(state_dir).lexically_normal()) {
  fs::create_directories(state_dir_);
}

std::unique_ptr<Target> SandboxDriver::create() {
  for (int attempt = 0; attempt < 16; ++attempt) {
    std::string id = random_id();
    fs::path dir = state_dir_ / id;
    if (!fs::create_directory(dir)) continue;
    fs::create_directory(dir / "root");
    fs::permissions(dir / "root", fs::perms(0755));
    return std::make_unique<SandboxTarget>(id, dir / "root");
  }
  throw DriverError("could not allocate a target id under " +
                    state_dir_.string());
}

bool SandboxDriver::exists(const std::string& id) const {
  return is_safe_id(id) && fs::is_directory(state_dir_ / id / "root");
}

fs::path SandboxDriver::root_of(const std::string& id) const {
  if (!is_safe_id(id)) throw NotFound("invalid target id '" + id + "'");
  return state_dir_ / id / "root";
}

std::unique_ptr<Target> SandboxDriver::attach(const std::string& id) {
  if (!exists(id)) throw NotFound("no such target '" + id + "'");
  return std::make_unique<SandboxTarget>(id, root_of(id));
}

std::vector<std::string> SandboxDriver::list() const {
  std::vector<std::string> ids;
  if (!fs::is_directory(state_dir_)) return ids;
  for (const auto& entry : fs::directory_iterator(state_dir_)) {
    std::string id = entry.path().filename().string();
    if (exists(id)) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t SandboxDriver::live_count() const { return list().size(); }

void SandboxDriver::release(Target& target) {
  fs::path dir = state_dir_ / target.id();
  std::error_code ec;
  // Restore write permission on directories so removal cannot be blocked
  // by modes the target itself set.
  for (auto it = fs::recursive_directory_iterator(dir, ec);
       !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (it->is_directory(ec) && !it->is_symlink(ec)) {
      ::chmod(it->path().c_str(), 0700);
    }
  }
  fs::remove_all(dir, ec);
  if (ec) throw DriverError("cannot remove " + dir.string() + ": " + ec.message());
}

// Mock driver.

namespace {

ExecOutcome builtin(MemoryTarget& target, const std::vector<std::string>& argv,
                    const std::vector<std::string>& cwd) {
  const std::string& program = argv.front();
  if (program == "true") return {0, "", "", 0};
  if (program == "false") return {1, "", "", 0};
  if (program == "exit") {
    int code = argv.size() > 1 ? std::atoi(argv[1].c_str()) : 0;
    return {code, "", "", 0};
  }
  if (program == "touch") {
    for (std::size_t i = 1; i < argv.size(); ++i) {
      std::string path = absolute_from(argv[i], cwd);
      if (!target.stat(path).exists) target.write_file(path, "", 0644);
    }
    return {0, "", "", 0};
  }
  if (program == "write" && argv.size() == 3) {
    target.write_file(absolute_from(argv[1], cwd), argv[2], 0644);
    return {0, "", "", 0};
  }
  return {127, "", program + ": no scripted response\n", 0};
}

}  // namespace

MockDriver::MockDriver() = default;

std::unique_ptr<Target> MockDriver::create() {
  std::string id = "mem-" + std::to_string(next_id_++);
  ++live_;
  return std::make_unique<MemoryTarget>(id, *this);
}

void MockDriver::script(const std::string& program, Handler handler) {
  std::lock_guard lock(mutex_);
  handlers_[program] = std::move(handler);
}

std::optional<MockDriver::Handler> MockDriver::handler_for(
    const std::string& program) const {
  std::lock_guard lock(mutex_);
  auto it = handlers_.find(program);
  if (it == handlers_.end()) return std::nullopt;
  return it->second;
}

void MockDriver::release(Target& target) {
  static_cast<MemoryTarget&>(target).clear();
  --live_;
}

MemoryTarget::MemoryTarget(std::string id, const MockDriver& driver)
    : Target(std::move(id)), driver_(driver) {}

std::vector<std::string> MemoryTarget::resolve(
    std::string_view path, bool follow_final,
    const std::vector<std::string>& base) {
  require_alive();
  return confine(
      path, follow_final,
      [this](const std::vector<std::string>& parts)
          -> std::optional<std::string> {
        auto it = nodes_.find(join(parts));
        if (it == nodes_.end() || it->second.kind != NodeKind::symlink) {
          return std::nullopt;
        }
        return it->second.link_target;
      },
      base);
}

void MemoryTarget::ensure_parents(const std::vector<std::string>& parts) {
  for (std::size_t i = 1; i < parts.size(); ++i) {
    std::string key = join(parts, i);
    auto it = nodes_.find(key);
    if (it == nodes_.end()) {
      nodes_[key] = archive::Entry{key, NodeKind::directory, 0755, "", ""};
    } else if (it->second.kind != NodeKind::directory) {
      throw DriverError("/" + key + " is not a directory");
    }
  }
}

ExecOutcome MemoryTarget::exec(const std::vector<std::string>& argv,
                               const Env& env, std::string_view cwd) {
  require_alive();
  if (argv.empty()) throw DriverError("exec: empty argv");
  auto cwd_parts = resolve(cwd, true);
  if (!cwd_parts.empty()) {
    auto it = nodes_.find(join(cwd_parts));
    if (it == nodes_.end() || it->second.kind != NodeKind::directory) {
      throw NotFound("exec: working directory " + show(cwd) +
                     " does not exist");
    }
  }
  check_arguments(argv, cwd_parts,
                  [this](const std::vector<std::string>& parts)
                      -> std::optional<std::string> {
                    auto it = nodes_.find(join(parts));
                    if (it == nodes_.end() ||
                        it->second.kind != NodeKind::symlink) {
                      return std::nullopt;
                    }
                    return it->second.link_target;
                  });
  if (auto handler = driver_.handler_for(argv.front())) {
    return (*handler)(*this, argv, env, absolute_from("", cwd_parts));
  }
  return builtin(*this, argv, cwd_parts);
}

void MemoryTarget::write_file(std::string_view path, std::string_view bytes,
                              std::uint32_t mode) {
  auto parts = resolve(path, true);
  if (parts.empty()) throw DriverError("cannot write to the target root");
  ensure_parents(parts);
  std::string key = join(parts);
  auto it = nodes_.find(key);
  if (it != nodes_.end() && it->second.kind == NodeKind::directory) {
    throw DriverError(show(path) + " is a directory");
  }
  nodes_[key] = archive::Entry{key, NodeKind::file, mode & 07777,
                               std::string(bytes), ""};
}

std::string MemoryTarget::read_file(std::string_view path) {
  auto it = nodes_.find(join(resolve(path, true)));
  if (it == nodes_.end()) throw NotFound("no such file in target: " + show(path));
  if (it->second.kind != NodeKind::file) {
    throw DriverError(show(path) + " is not a regular file");
  }
  return it->second.content;
}

StatResult MemoryTarget::stat(std::string_view path) {
  auto parts = resolve(path, false);
  StatResult result;
  if (parts.empty()) {
    result.exists = true;
    result.kind = NodeKind::directory;
    result.mode = 0755;
    return result;
  }
  auto it = nodes_.find(join(parts));
  if (it == nodes_.end()) return result;
  result.exists = true;
  result.kind = it->second.kind;
  result.mode = it->second.mode;
  result.size = it->second.content.size();
  return result;
}

void MemoryTarget::make_dir(std::string_view path, std::uint32_t mode) {
  auto parts = resolve(path, true);
  if (parts.empty()) return;
  ensure_parents(parts);
  std::string key = join(parts);
  auto it = nodes_.find(key);
  if (it != nodes_.end() && it->second.kind != NodeKind::directory) {
    throw DriverError(show(path) + " exists and is not a directory");
  }
  nodes_[key] = archive::Entry{key, NodeKind::directory, mode & 07777, "", ""};
}

void MemoryTarget::make_symlink(std::string_view path,
                                std::string_view link_target) {
  auto parts = resolve(path, false);
  if (parts.empty()) throw DriverError("cannot replace the target root");
  std::string key = join(parts);
  if (!symlink_stays_inside(key, link_target)) {
    throw ConfinementError("symlink " + show(path) + " -> " +
                           show(link_target) + " leaves the target root");
  }
  ensure_parents(parts);
  auto it = nodes_.find(key);
  if (it != nodes_.end() && it->second.kind == NodeKind::directory) {
    throw DriverError(show(path) + " is a directory");
  }
  nodes_[key] = archive::Entry{key, NodeKind::symlink, 0777, "",
                               std::string(link_target)};
}

std::vector<archive::Entry> MemoryTarget::entries() {
  require_alive();
  std::vector<archive::Entry> out;
  out.reserve(nodes_.size());
  for (const auto& [key, node] : nodes_) out.push_back(node);
  return out;
}

}  // namespace forgebox::drivers
