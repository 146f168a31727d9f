#include <doctest.h>

#include <algorithm>

#include "forgebox/archive.hpp"
#include "forgebox/digest.hpp"
#include "forgebox/errors.hpp"
#include "test_support.hpp"

using namespace forgebox::archive;
namespace fs = std::filesystem;

namespace {

Entry file_entry(std::string path, std::string content, std::uint32_t mode = 0644) {
  return {std::move(path), EntryKind::file, mode, std::move(content), ""};
}
Entry dir_entry(std::string path, std::uint32_t mode = 0755) {
  return {std::move(path), EntryKind::directory, mode, "", ""};
}
Entry symlink_entry(std::string path, std::string target) {
  return {std::move(path), EntryKind::symlink, 0777, "", std::move(target)};
}

std::string python(const std::string& script, const fs::path& arg) {
  auto r = testing::shell("python3 -c " + testing::shell_quote(script) + " " +
                          testing::shell_quote(arg.string()));
  REQUIRE(r.exit_code == 0);
  return r.output;
}

// Random small trees with valid, unique paths.
std::vector<Entry> random_tree(std::mt19937_64& gen) {
  std::vector<Entry> out;
  std::vector<std::string> dirs{""};
  int n = static_cast<int>(gen() % 12);
  for (int i = 0; i < n; ++i) {
    std::string parent = dirs[gen() % dirs.size()];
    std::string name = parent + (parent.empty() ? "" : "/") + "n" + std::to_string(i);
    switch (gen() % 3) {
      case 0:
        out.push_back(dir_entry(name, 0700 + static_cast<std::uint32_t>(gen() % 0100)));
        dirs.push_back(name);
        break;
      case 1: {
        std::string content(gen() % 1500, '\0');
        for (auto& c : content) c = static_cast<char>(gen());
        out.push_back(file_entry(name, content, gen() % 2 ? 0644 : 0755));
        break;
      }
      default:
        out.push_back(symlink_entry(name, "target" + std::to_string(gen() % 5)));
    }
  }
  // Parent directories of files must exist as entries.
  return out;
}

std::vector<Entry> sorted(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.path < b.path; });
  return entries;
}

}  // namespace

TEST_CASE("the empty archive is two records of zeros") {
  std::string bytes = write_tar({}, 0);
  CHECK(bytes == std::string(kRecordSize, '\0'));
  testing::TempDir tmp;
  testing::write_text(tmp / "empty.tar", bytes);
  CHECK(forgebox::Digest::of(bytes).hex() == testing::sha256sum_file(tmp / "empty.tar"));
  CHECK(read_tar(bytes).empty());
}

TEST_CASE("python tarfile reads what write_tar produces") {
  testing::TempDir tmp;
  std::string long_dir(90, 'd');
  std::string long_file = long_dir + "/" + std::string(60, 'f');
  std::vector<Entry> entries{file_entry("b.txt", "bee\n", 0600), dir_entry("a", 0750),
                             file_entry("a/x.sh", "#!/bin/sh\n", 0755),
                             symlink_entry("a/ln", "x.sh"), dir_entry(long_dir),
                             file_entry(long_file, "deep")};
  testing::write_text(tmp / "t.tar", write_tar(entries, 1700000000));
  std::string listing = python(R"(
import sys, tarfile
assert open(sys.argv[1], 'rb').read()[257:265] == b'ustar\x0000'
with tarfile.open(sys.argv[1]) as t:
    for m in t.getmembers():
        data = t.extractfile(m).read().decode() if m.isfile() else ''
        print('|'.join([m.name, oct(m.mode), m.type.decode(), str(m.mtime), str(m.uid),
                        str(m.gid), m.uname, m.gname, m.linkname, repr(data)]))
)", tmp / "t.tar");
  std::string want =
      "a|0o750|5|1700000000|0|0||||''\n"
      "a/ln|0o777|2|1700000000|0|0|||x.sh|''\n"
      "a/x.sh|0o755|0|1700000000|0|0||||'#!/bin/sh\\n'\n"
      "b.txt|0o600|0|1700000000|0|0||||'bee\\n'\n" +
      long_dir + "|0o755|5|1700000000|0|0||||''\n" + long_file +
      "|0o644|0|1700000000|0|0||||'deep'\n";
  CHECK(listing == want);
}

TEST_CASE("read_tar reads a tar written by python") {
  testing::TempDir tmp;
  python(R"(
import io, sys, tarfile
with tarfile.open(sys.argv[1], 'w', format=tarfile.USTAR_FORMAT) as t:
    d = tarfile.TarInfo('./etc'); d.type = tarfile.DIRTYPE; d.mode = 0o755; t.addfile(d)
    f = tarfile.TarInfo('./etc/hosts'); body = b'127.0.0.1 localhost\n'; f.size = len(body); f.mode = 0o644
    t.addfile(f, io.BytesIO(body))
    l = tarfile.TarInfo('./etc/alias'); l.type = tarfile.SYMTYPE; l.linkname = 'hosts'; t.addfile(l)
)", tmp / "py.tar");
  auto entries = read_tar(testing::read_text(tmp / "py.tar"));
  REQUIRE(entries.size() == 3);
  CHECK(entries[0] == dir_entry("etc"));
  CHECK(entries[1] == file_entry("etc/hosts", "127.0.0.1 localhost\n"));
  CHECK(entries[2].kind == EntryKind::symlink);
  CHECK(entries[2].link_target == "hosts");
}

TEST_CASE("round trip and order independence on random trees") {
  auto gen = testing::rng(3);
  for (int round = 0; round < 200; ++round) {
    auto entries = random_tree(gen);
    std::string bytes = write_tar(entries, static_cast<std::int64_t>(gen() % 2000000000));
    CHECK(bytes.size() % kRecordSize == 0);
    CHECK(read_tar(bytes) == sorted(entries));
    auto shuffled = entries;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    CHECK(write_tar(shuffled, 0) == write_tar(entries, 0));
  }
}

TEST_CASE("malformed streams are integrity errors") {
  std::string good = write_tar({file_entry("a", "hello")}, 0);
  SUBCASE("header checksum") {
    std::string bad = good;
    bad[0] = 'b';
    CHECK_THROWS_AS(read_tar(bad), forgebox::IntegrityError);
  }
  SUBCASE("truncated content") {
    CHECK_THROWS_AS(read_tar(good.substr(0, 600)), forgebox::IntegrityError);
  }
  SUBCASE("missing end marker") {
    CHECK_THROWS_AS(read_tar(good.substr(0, 1024)), forgebox::IntegrityError);
  }
  SUBCASE("unsafe names written by another tool") {
    testing::TempDir tmp;
    for (std::string name : {"../evil", "/abs", "a/../../b"}) {
      python("import io,sys,tarfile\n"
             "with tarfile.open(sys.argv[1], 'w', format=tarfile.USTAR_FORMAT) as t:\n"
             "    f = tarfile.TarInfo(" + std::string("'") + name + "'); f.size = 1\n"
             "    t.addfile(f, io.BytesIO(b'x'))\n",
             tmp / "evil.tar");
      CHECK_THROWS_AS(read_tar(testing::read_text(tmp / "evil.tar")), forgebox::IntegrityError);
    }
  }
}

TEST_CASE("write_tar rejects duplicates and invalid paths") {
  CHECK_THROWS_AS(write_tar({file_entry("a", "1"), file_entry("a", "2")}, 0), forgebox::Error);
  for (std::string bad : {"", "/a", "a/", "a/../b", "./a", "a//b"}) {
    CHECK_FALSE(is_valid_entry_path(bad));
    CHECK_THROWS_AS(write_tar({file_entry(bad, "x")}, 0), forgebox::Error);
  }
  CHECK(is_valid_entry_path("a/b.c"));
}

TEST_CASE("gzip is deterministic and readable by python") {
  std::string tar = write_tar({file_entry("x", std::string(10000, 'z'))}, 0);
  std::string gz = gzip(tar);
  CHECK(gz == gzip(tar));
  CHECK(is_gzip(gz));
  CHECK_FALSE(is_gzip(tar));
  CHECK(gunzip(gz) == tar);
  testing::TempDir tmp;
  testing::write_text(tmp / "x.tar.gz", gz);
  std::string hex = python(
      "import gzip,hashlib,sys; print(hashlib.sha256(gzip.open(sys.argv[1]).read()).hexdigest())",
      tmp / "x.tar.gz");
  CHECK(hex == forgebox::Digest::of(tar).hex() + "\n");
  CHECK_THROWS_AS(gunzip(gz.substr(0, gz.size() / 2)), forgebox::IntegrityError);
}
