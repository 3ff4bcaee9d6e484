#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace volwmc::reports {

// Tags accepted by emit_report: fig2 .. fig14 (there is no fig8).
const std::vector<std::string>& report_tags();

// Writes the long-format CSV behind one figure, computed from the artifacts of
// a finished run directory. Throws ConfigError for an unknown tag and
// CorruptFileError / ConfigError when a required artifact is missing.
void emit_report(const std::filesystem::path& run_dir, const std::string& tag, std::ostream& out);
void emit_report(const std::filesystem::path& run_dir, const std::string& tag, const std::filesystem::path& file);

} // namespace volwmc::reports
