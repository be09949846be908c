#pragma once

// The `dfkd` command line: pretrain-teacher, distill, analyze, verify and
// make-data. Exit codes: 0 success, 1 verification or run failure, 2 config
// error, 3 data error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dfkd/config.hpp"

namespace dfkd::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3 };

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Output root: DFKD_OUTPUT_ROOT, then cfg.output_dir, then ./runs.
std::filesystem::path output_root(const ExperimentConfig& cfg);

// Creates <root>/<UTC timestamp>-<config hash>, adding a numeric suffix
// rather than reusing an existing directory.
std::filesystem::path create_run_dir(const std::filesystem::path& root, const ExperimentConfig& cfg);

}  // namespace dfkd::cli
