#include "forgebox/gates.hpp"

#include "forgebox/errors.hpp"

namespace forgebox::gates {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& item : items) out += (out.empty() ? "" : "; ") + item;
  return out;
}

CriterionResult check_characteristics(const imagestore::ImageManifest& m,
                                      drivers::Target& target) {
  CriterionResult r{"C2", false, ""};
  const auto& paths = m.verify_config.characteristics_paths;
  if (paths.empty()) {
    r.evidence = "no characteristics paths configured";
    return r;
  }
  std::vector<std::string> problems;
  for (const auto& path : paths) {
    try {
      if (!target.stat(path).exists) {
        problems.push_back(path + " is missing");
        continue;
      }
      auto fields = imagestore::parse_characteristics(target.read_file(path));
      std::string name, version;
      for (const auto& [k, v] : fields) {
        if (k == "name") name = v;
        if (k == "version") version = v;
      }
      if (name != m.name || version != m.version) {
        problems.push_back(path + " describes " + name + "/" + version +
                           ", manifest says " + m.name + "/" + m.version);
      }
    } catch (const Error& e) {
      problems.push_back(path + ": " + e.what());
    }
  }
  r.passed = problems.empty();
  r.evidence = r.passed ? "build information for " + m.name + "/" + m.version +
                              " found at " + std::to_string(paths.size()) +
                              " path(s)"
                        : join(problems);
  return r;
}

CriterionResult check_docs(const imagestore::ImageManifest& m,
                           drivers::Target& target) {
  CriterionResult r{"C4", false, ""};
  const auto& paths = m.verify_config.docs_paths;
  if (paths.empty()) {
    r.evidence = "no documentation paths configured";
    return r;
  }
  std::vector<std::string> problems;
  for (const auto& path : paths) {
    try {
      auto st = target.stat(path);
      if (!st.exists) {
        problems.push_back(path + " is missing");
      } else if (st.kind != drivers::NodeKind::file) {
        problems.push_back(path + " is not a regular file");
      } else if (st.size == 0) {
        problems.push_back(path + " is empty");
      }
    } catch (const Error& e) {
      problems.push_back(path + ": " + e.what());
    }
  }
  r.passed = problems.empty();
  r.evidence = r.passed ? std::to_string(paths.size()) +
                              " documentation file(s) present"
                        : join(problems);
  return r;
}

}  // namespace

GateDecision gate_build(const engine::BuildReport& report) {
  if (report.outcome == engine::Outcome::success) return {true, "build succeeded"};
  std::string reason = "build failed";
  if (report.failed_step && *report.failed_step < report.results.size()) {
    const auto& r = report.results[*report.failed_step];
    reason += " at step " + std::to_string(*report.failed_step) + " (" +
              r.role + "/" + r.task_id + "): " + r.message;
  }
  return {false, reason};
}

GateReport run_tests(const imagestore::ImageManifest& manifest,
                     drivers::Target& target) {
  GateReport report;
  for (const auto& test : manifest.tests) {
    TestRun run{test.role, test.task_id, 0, false, ""};
    try {
      auto outcome = target.exec(test.exec.argv, test.exec.env, test.exec.cwd);
      run.exit_code = outcome.exit_code;
      run.detail = outcome.stderr_bytes;
    } catch (const Error& e) {
      run.exit_code = -1;
      run.detail = e.what();
    }
    run.passed = run.exit_code == 0;
    report.all_passed = report.all_passed && run.passed;
    report.tests.push_back(std::move(run));
  }
  return report;
}

std::string ChecklistReport::to_text() const {
  std::string out;
  for (const auto& c : criteria) {
    out += c.id + (c.passed ? " PASS" : " FAIL") + " — " + c.evidence + "\n";
  }
  return out;
}

ChecklistReport run_release_checklist(const imagestore::ImageArtifact& image,
                                      drivers::TargetDriver& driver) {
  ChecklistReport report;
  std::unique_ptr<drivers::Target> target;
  CriterionResult c1{"C1", false, ""};
  try {
    target = driver.instantiate(image.archive, image.manifest.archive_digest);
    c1.passed = true;
    c1.evidence = "instantiated target " + target->id() + " from " +
                  image.manifest.archive_digest.hex().substr(0, 12);
  } catch (const std::exception& e) {
    c1.evidence = std::string("instantiation failed: ") + e.what();
  }
  report.criteria.push_back(c1);

  const auto& m = image.manifest;
  struct Reaper {
    drivers::TargetDriver& driver;
    std::unique_ptr<drivers::Target>& target;
    ~Reaper() {
      try {
        if (target) driver.destroy(*target);
      } catch (const std::exception&) {
      }
    }
  } reaper{driver, target};
  if (target) {
    report.criteria.push_back(check_characteristics(m, *target));
    GateReport tests = run_tests(m, *target);
    CriterionResult c3{"C3", tests.all_passed, ""};
    if (tests.tests.empty()) {
      c3.evidence = "no tests registered";
    } else if (tests.all_passed) {
      c3.evidence = std::to_string(tests.tests.size()) + " test(s) passed";
    } else {
      std::vector<std::string> failures;
      for (const auto& t : tests.tests) {
        if (!t.passed) {
          failures.push_back(t.role + "/" + t.task_id + " exited " +
                             std::to_string(t.exit_code));
        }
      }
      c3.evidence = join(failures);
    }
    report.criteria.push_back(c3);
    report.criteria.push_back(check_docs(m, *target));
  } else {
    for (const char* id : {"C2", "C3", "C4"}) {
      report.criteria.push_back({id, false, "no target: C1 failed"});
    }
  }
  report.overall = true;
  for (const auto& c : report.criteria) report.overall = report.overall && c.passed;
  return report;
}

}  // namespace forgebox::gates
