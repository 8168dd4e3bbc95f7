#include "timeshoot/matrix_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "timeshoot/errors.hpp"

namespace timeshoot {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& what) {
  throw ConfigError(source + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Matrix parse_matrix_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  long rows = -1;
  long cols = -1;
  std::vector<std::vector<double>> data;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (rows < 0) {
      std::istringstream header(line);
      std::string hash;
      if (!(header >> hash >> rows >> cols) || hash != "#" || rows < 1 || cols < 1) {
        fail(source, line_no, "expected header '# rows cols'");
      }
      continue;
    }
    if (line.front() == '#') continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (start <= line.size()) {
      const auto comma = line.find(',', start);
      const std::string cell = trim(std::string_view(line).substr(
          start, comma == std::string::npos ? std::string::npos : comma - start));
      double value = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      const std::string where = "row " + std::to_string(data.size()) + ", column " +
                                std::to_string(row.size());
      if (cell == "nan" || cell == "NaN" || cell == "inf" || cell == "-inf") {
        fail(source, line_no, "non-finite entry at " + where);
      }
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        fail(source, line_no, "cannot parse '" + cell + "' at " + where);
      }
      if (!std::isfinite(value)) fail(source, line_no, "non-finite entry at " + where);
      row.push_back(value);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (static_cast<long>(row.size()) != cols) {
      fail(source, line_no, "expected " + std::to_string(cols) + " columns, found " +
                                std::to_string(row.size()));
    }
    data.push_back(std::move(row));
  }
  if (rows < 0) fail(source, line_no, "missing header '# rows cols'");
  if (static_cast<long>(data.size()) != rows) {
    fail(source, line_no, "expected " + std::to_string(rows) + " rows, found " +
                              std::to_string(data.size()));
  }
  Matrix m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) m(r, c) = data[r][c];
  }
  return m;
}

Matrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open matrix file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_matrix_csv(text.str(), path.string());
}

std::string format_matrix_csv(const Matrix& m) {
  std::ostringstream out;
  out.precision(17);
  out << "# " << m.rows() << ' ' << m.cols() << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
  return out.str();
}

void save_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write matrix file " + path.string());
  out << format_matrix_csv(m);
}

}  // namespace timeshoot
