#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "retain/data.hpp"

namespace retain {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Entry point of `retain generate|train|evaluate|interpret`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads `key = value` lines (blank lines and # comments skipped) and turns
/// them into `--key=value` arguments.
std::vector<std::string> config_arguments(const std::filesystem::path& path);

/// Every *.csv of a directory (sorted by name) or the listed files.
std::vector<PatientSeries> load_patients(const std::vector<std::string>& paths,
                                         const GridOptions& grid);

}  // namespace retain
