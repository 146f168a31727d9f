#include <doctest.h>

#include "forgebox/errors.hpp"
#include "forgebox/speclang.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <set>

using namespace forgebox::speclang;
using forgebox::Digest;
using forgebox::ImageRef;
using namespace forgebox;

namespace {

const char* kFakesolver = R"(name: fakesolver
depends: [base]
tasks:
  - id: install
    package:
      name: oommf
      version: 1.2.0
  - id: selftest
    test:
      argv: [oommf, --selftest]
)";

template <typename E>
int error_line(const std::string& text) {
  try {
    parse_role(text, "r.yaml");
  } catch (const E& e) {
    return e.line();
  }
  FAIL("expected an error");
  return -1;
}

// Strings that stress YAML quoting.
std::string awkward_string(std::mt19937_64& gen) {
  static const std::vector<std::string> pieces{
      "a", "Z", "0", "0644", " ", "  ", ":", ": ", "#", " #", "- ", "'", "\"", "\\",
      "\n", "\t", "{", "}", "[", "]", ",", "&", "*", "!", "|", ">", "%", "@", "`",
      "yes", "no", "null", "~", "true", "é", "日本", "\x01", "---", "...", "=", "?"};
  std::string out;
  int n = static_cast<int>(gen() % 6);
  for (int i = 0; i < n; ++i) out += pieces[gen() % pieces.size()];
  return out;
}

std::string ident(std::mt19937_64& gen, const char* prefix) {
  return std::string(prefix) + std::to_string(gen() % 50);
}

std::string target_path(std::mt19937_64& gen) {
  std::string out;
  int n = 1 + static_cast<int>(gen() % 3);
  for (int i = 0; i < n; ++i) out += "/p" + std::to_string(gen() % 9) + (gen() % 2 ? ".txt" : "");
  return out;
}

ExecSpec random_exec(std::mt19937_64& gen) {
  ExecSpec e;
  int n = 1 + static_cast<int>(gen() % 3);
  for (int i = 0; i < n; ++i) e.argv.push_back(i == 0 ? "prog" : awkward_string(gen));
  if (gen() % 2) e.cwd = target_path(gen);
  if (gen() % 2) e.env["K" + std::to_string(gen() % 4)] = awkward_string(gen);
  return e;
}

TaskSpec random_task(std::mt19937_64& gen, int index) {
  TaskSpec t;
  t.id = "t" + std::to_string(index);
  std::uint32_t mode = static_cast<std::uint32_t>(gen() % 01000);
  switch (gen() % 7) {
    case 0: t.args = FileArgs{target_path(gen), awkward_string(gen), mode}; break;
    case 1: t.args = DirArgs{target_path(gen), mode}; break;
    case 2: t.args = CopyArgs{"sub/f" + std::to_string(gen() % 5), target_path(gen), mode}; break;
    case 3:
      t.args = FetchUrlArgs{"http://h.example/x?y=" + awkward_string(gen), target_path(gen),
                            Digest::of(std::to_string(gen())), mode};
      break;
    case 4: t.args = PackageArgs{ident(gen, "pkg"), std::to_string(gen() % 9) + ".0"}; break;
    case 5:
      t.args = CommandArgs{random_exec(gen)};
      if (gen() % 2) t.creates = target_path(gen);
      break;
    default: t.args = TestArgs{random_exec(gen)};
  }
  return t;
}

}  // namespace

TEST_CASE("a fixture solver role parses to two tasks") {
  RoleSpec role = parse_role(kFakesolver, "fakesolver.yaml");
  CHECK(role.name == "fakesolver");
  CHECK(role.depends == std::vector<std::string>{"base"});
  REQUIRE(role.tasks.size() == 2);
  CHECK(role.tasks[0].id == "install");
  CHECK(role.tasks[0].directive() == Directive::package);
  CHECK(std::get<PackageArgs>(role.tasks[0].args) == PackageArgs{"oommf", "1.2.0"});
  CHECK(role.tasks[0].line == 4);
  CHECK(role.tasks[1].directive() == Directive::test);
  CHECK(std::get<TestArgs>(role.tasks[1].args).exec.argv ==
        std::vector<std::string>{"oommf", "--selftest"});
  CHECK(std::get<TestArgs>(role.tasks[1].args).exec.cwd == "/");
}

TEST_CASE("the fixture playbook and its roles load") {
  auto dir = testing::fixtures_dir();
  Playbook pb = load_playbook(dir / "micromag.play.yaml");
  CHECK(pb.name == "micromag");
  CHECK(pb.version == "0.1.0");
  CHECK_FALSE(pb.base_image.has_value());
  CHECK(pb.role_selection == std::vector<std::string>{"base", "oommf", "nmag", "magpar", "fidimag"});
  CHECK(pb.build_epoch == 1700000000);
  CHECK(pb.verify_config.characteristics_paths == VerifyConfig::defaults().characteristics_paths);
  CHECK(pb.verify_config.docs_paths == std::vector<std::string>{"/home/user/Desktop/README.md"});

  auto roles = load_roles(dir);
  std::vector<std::string> names;
  for (const auto& r : roles) names.push_back(r.name);
  CHECK(names == std::vector<std::string>{"base", "fakesolver", "fidimag", "magpar", "nmag", "oommf"});
  auto diags = lint(pb, roles);
  CHECK_FALSE(has_errors(diags));
  CHECK(diags.empty());
}

TEST_CASE("playbook fields") {
  Playbook pb = parse_playbook(R"(name: full
version: "2.1"
base_image: virtualmicromagnetics/full
roles: [a, b]
)");
  REQUIRE(pb.base_image.has_value());
  CHECK(pb.base_image->name == "virtualmicromagnetics");
  CHECK(pb.base_image->version == "full");
  CHECK_FALSE(pb.build_epoch.has_value());
  CHECK(pb.verify_config == VerifyConfig::defaults());
  CHECK(VerifyConfig::defaults().characteristics_paths ==
        std::vector<std::string>{"/machine_characteristics.txt",
                                 "/home/user/Desktop/machine_characteristics.txt"});
  CHECK(VerifyConfig::defaults().docs_paths.empty());

  CHECK_THROWS_AS(parse_playbook("name: x\nversion: \"1 2\"\nbase_image: scratch\nroles: [a]\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_playbook("name: x\nversion: 1\nbase_image: scratch\nroles: []\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_playbook("name: x\nversion: 1\nbase_image: scratch\nroles: [a, a]\n"),
                  DuplicateError);
  CHECK_THROWS_AS(parse_playbook("name: x\nversion: 1\nbase_image: scratch\nroles: [a]\nbuild_epoch: -4\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_playbook("name: x\nversion: 1\nbase_image: scratch\nroles: [a]\nextra: 1\n"),
                  SchemaError);
}

TEST_CASE("syntax and schema errors carry the offending line") {
  CHECK(error_line<SyntaxError>("name: r\ntasks:\n\t- id: x\n") == 3);
  CHECK(error_line<SyntaxError>("name: r\ntasks: [\n") >= 2);
  CHECK_THROWS_AS(parse_role("name: a\n---\nname: b\n"), SyntaxError);
  CHECK(error_line<DuplicateError>("name: r\nname: s\ntasks: []\n") == 2);
  CHECK(error_line<SchemaError>(
            "name: r\ntasks:\n  - id: x\n    teleport:\n      to: mars\n") == 4);
  CHECK(error_line<SelfDependError>("name: r\ndepends: [q, r]\ntasks: []\n") >= 2);
  CHECK_THROWS_AS(parse_role("name: r\ndepends: [q, q]\ntasks: []\n"), DuplicateError);
  CHECK_THROWS_AS(
      parse_role("name: r\ntasks:\n  - id: x\n    dir: {path: /a}\n  - id: x\n    dir: {path: /b}\n"),
      DuplicateError);
  // creates is only meaningful on command.
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    dir: {path: /a}\n    creates: /a\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    dir: {path: /a}\n    file: {path: /b, content: c}\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    dir: {path: relative}\n"), SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    dir: {path: /a/../b}\n"), SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    copy: {src: ../up, dest: /a}\n"), SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    file: {path: /a, content: c, mode: \"0999\"}\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    command: {argv: []}\n"), SchemaError);
  CHECK_THROWS_AS(parse_role("name: r\ntasks:\n  - id: x\n    fetch_url: {url: u, dest: /a, sha256: ABC}\n"),
                  SchemaError);
  CHECK_THROWS_AS(parse_role("name: Bad\ntasks: []\n"), SchemaError);
  CHECK_THROWS_AS(parse_role("- just\n- a list\n"), SchemaError);
}

TEST_CASE("lint reports missing roles, unknown dependencies and unguarded commands") {
  Playbook pb = parse_playbook("name: p\nversion: 1\nbase_image: scratch\nroles: [a, ghost]\n", "p.yaml");
  std::vector<RoleSpec> roles{
      parse_role("name: a\ndepends: [nowhere]\ntasks:\n  - id: c\n    command: {argv: [make]}\n"
                 "  - id: g\n    command: {argv: [make]}\n    creates: /out\n",
                 "a.yaml")};
  auto diags = lint(pb, roles);
  REQUIRE(diags.size() == 3);
  CHECK(diags[0].code == "E001");
  CHECK(diags[1].code == "E002");
  CHECK(diags[2].code == "W001");
  CHECK(diags[2].severity == Severity::warning);
  CHECK(diags[2].to_string() ==
        "a.yaml:4: warning W001: command task 'a/c' has no 'creates' guard and will run on every build");
  CHECK(has_errors(diags));
}

TEST_CASE("role names must match their directory") {
  testing::TempDir tmp;
  testing::write_text(tmp / "roles/one/role.yaml", "name: two\ntasks: []\n");
  CHECK_THROWS_AS(load_roles(tmp.path()), SchemaError);
}

TEST_CASE("property: to_yaml then parse is the identity on roles") {
  auto gen = testing::rng(10);
  for (int round = 0; round < 300; ++round) {
    RoleSpec role;
    role.name = ident(gen, "role");
    std::set<std::string> deps;
    int nd = static_cast<int>(gen() % 3);
    for (int i = 0; i < nd; ++i) deps.insert(ident(gen, "dep"));
    role.depends.assign(deps.begin(), deps.end());
    int nt = static_cast<int>(gen() % 6);
    for (int i = 0; i < nt; ++i) role.tasks.push_back(random_task(gen, i));
    std::string yaml = to_yaml(role);
    INFO("round ", round, "\n", yaml);
    RoleSpec back = parse_role(yaml);
    CHECK(back == role);
    CHECK(to_yaml(back) == yaml);
  }
}

TEST_CASE("property: to_yaml then parse is the identity on playbooks") {
  auto gen = testing::rng(11);
  for (int round = 0; round < 200; ++round) {
    Playbook pb;
    pb.name = ident(gen, "pb");
    pb.version = std::to_string(gen() % 5) + "." + std::to_string(gen() % 5) + (gen() % 2 ? "+b1" : "");
    if (gen() % 2) {
      pb.base_image = ImageRef{ident(gen, "img"), "v" + std::to_string(gen() % 3), std::nullopt};
    }
    std::set<std::string> sel;
    int n = 1 + static_cast<int>(gen() % 4);
    for (int i = 0; i < n; ++i) sel.insert(ident(gen, "r"));
    pb.role_selection.assign(sel.begin(), sel.end());
    std::shuffle(pb.role_selection.begin(), pb.role_selection.end(), gen);
    if (gen() % 2) pb.build_epoch = static_cast<std::int64_t>(gen() % 4000000000ULL);
    if (gen() % 2) {
      pb.verify_config.characteristics_paths = {target_path(gen)};
      pb.verify_config.docs_paths = {target_path(gen), "/d/" + awkward_string(gen).substr(0, 0) + "x"};
    }
    std::string yaml = to_yaml(pb);
    INFO(yaml);
    CHECK(parse_playbook(yaml) == pb);
  }
}
