#pragma once

#include <filesystem>
#include <string>

#include "timeshoot/linalg.hpp"

namespace timeshoot {

/// Plain-text matrix: a header line "# rows cols", then one comma-separated
/// row per line. Blank lines are ignored. Non-finite entries are rejected.
Matrix parse_matrix_csv(const std::string& text, const std::string& source = "<memory>");
Matrix load_matrix_csv(const std::filesystem::path& path);
void save_matrix_csv(const std::filesystem::path& path, const Matrix& m);
std::string format_matrix_csv(const Matrix& m);

}  // namespace timeshoot
