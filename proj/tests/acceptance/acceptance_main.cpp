// Acceptance runner used by ctest: one result line per criterion.
//
//   f2d2_acceptance <criterion>... [--config FILE --run-dir DIR [--rerun-dir DIR]]
#include "f2d2/harness/acceptance.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> ids;
  std::filesystem::path config, run_dir, rerun_dir;
  app.add_option("criteria", ids, "Criteria to run")->required()->check(CLI::Range(1, 8));
  app.add_option("--config", config);
  app.add_option("--run-dir", run_dir);
  app.add_option("--rerun-dir", rerun_dir);
  CLI11_PARSE(app, argc, argv);
  return f2d2::acceptance::run_criteria(ids, config, run_dir, rerun_dir, std::cout);
}
