#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace timeshoot {

/// 64-bit FNV-1a of `text`, as 16 lowercase hex digits.
std::string config_hash(std::string_view text);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

/// Writes "# config_hash=<hash>" and a header row, then data rows.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> columns, std::string_view hash);

  CsvWriter& cell(std::string_view text);
  CsvWriter& cell(double value);
  CsvWriter& cell(std::int64_t value);
  CsvWriter& cell(int value) { return cell(static_cast<std::int64_t>(value)); }
  /// Ends the current row; throws if the cell count does not match the header.
  void end_row();

 private:
  std::ostream& out_;
  std::size_t columns_;
  std::size_t filled_ = 0;
};

struct CsvTable {
  std::vector<std::string> comments;  // lines starting with '#', without the '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

CsvTable read_csv(std::istream& in);

}  // namespace timeshoot
