// Builds a package archive for the local package repository from a directory
// tree laid out as it should appear under the target root, and records it in
// <repo>/index.tsv.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "forgebox/archive.hpp"
#include "forgebox/digest.hpp"
#include "forgebox/errors.hpp"
#include "../src/fsutil.hpp"

namespace fs = std::filesystem;
using forgebox::archive::Entry;
using forgebox::archive::EntryKind;

namespace {

std::vector<Entry> collect(const fs::path& root) {
  std::vector<Entry> entries;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::end(it); ++it) {
    const auto& path = it->path();
    Entry e;
    e.path = fs::relative(path, root).generic_string();
    auto status = it->symlink_status();
    auto perms = static_cast<std::uint32_t>(status.permissions()) & 07777;
    if (fs::is_symlink(status)) {
      e.kind = EntryKind::symlink;
      e.mode = 0777;
      e.link_target = fs::read_symlink(path).string();
    } else if (fs::is_directory(status)) {
      e.kind = EntryKind::directory;
      e.mode = perms;
    } else if (fs::is_regular_file(status)) {
      e.mode = perms;
      e.content = forgebox::fsutil::read_file(path);
    } else {
      throw forgebox::Error("unsupported file type: " + path.string());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build a forgebox package archive", "forgebox-mkpkg"};
  std::string source, name, version, repo;
  app.add_option("source", source, "Directory tree to package")->required()->check(CLI::ExistingDirectory);
  app.add_option("name", name, "Package name")->required();
  app.add_option("version", version, "Package version")->required();
  app.add_option("repo", repo, "Package repository directory")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    std::string bytes = forgebox::archive::write_tar(collect(source), 0);
    fs::create_directories(repo);
    std::string file = name + "-" + version + ".pkg";
    forgebox::fsutil::write_atomic(fs::path(repo) / file, bytes);
    std::string hex = forgebox::Digest::of(bytes).hex();

    // Rewrite the index with this package's line replaced or added, sorted.
    std::map<std::pair<std::string, std::string>, std::string> index;
    fs::path index_path = fs::path(repo) / "index.tsv";
    if (fs::exists(index_path)) {
      std::istringstream in(forgebox::fsutil::read_file(index_path));
      for (std::string line; std::getline(in, line);) {
        std::istringstream fields(line);
        std::string n, v, d;
        if (std::getline(fields, n, '\t') && std::getline(fields, v, '\t') &&
            std::getline(fields, d)) {
          index[{n, v}] = d;
        }
      }
    }
    index[{name, version}] = hex;
    std::string text;
    for (const auto& [key, digest] : index) {
      text += key.first + "\t" + key.second + "\t" + digest + "\n";
    }
    forgebox::fsutil::write_atomic(index_path, text);
    std::cout << name << "\t" << version << "\t" << hex << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
