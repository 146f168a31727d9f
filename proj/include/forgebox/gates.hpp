#pragma once

// Quality gates: nothing is packaged from a failed build, and released
// images are checked against the four-point release checklist:
//   C1  the image instantiates without error
//   C2  version and build information is present at every characteristics path
//   C3  every registered test passes inside the instantiated target
//   C4  documentation is present at every docs path

#include <string>
#include <vector>

#include "forgebox/drivers.hpp"
#include "forgebox/engine.hpp"
#include "forgebox/imagestore.hpp"

namespace forgebox::gates {

struct GateDecision {
  bool passed = false;
  std::string reason;
};

// Passes iff the build succeeded; the reason names the failed step.
GateDecision gate_build(const engine::BuildReport& report);

struct TestRun {
  std::string role;
  std::string task_id;
  int exit_code = 0;
  bool passed = false;
  std::string detail;
};

// all_passed <=> every exit code is 0.
struct GateReport {
  std::vector<TestRun> tests;
  bool all_passed = true;
};

GateReport run_tests(const imagestore::ImageManifest& manifest,
                     drivers::Target& target);

struct CriterionResult {
  std::string id;
  bool passed = false;
  std::string evidence;
};

// Exactly four entries, C1..C4, all evaluated; overall is their conjunction.
struct ChecklistReport {
  std::vector<CriterionResult> criteria;
  bool overall = false;

  // One `C<k> PASS|FAIL — <evidence>` line per criterion.
  std::string to_text() const;
};

// Runs on a private target which is destroyed afterwards whatever happens.
// Integrity failures are reported as C1 failures, never thrown.
ChecklistReport run_release_checklist(const imagestore::ImageArtifact& image,
                                      drivers::TargetDriver& driver);

}  // namespace forgebox::gates
