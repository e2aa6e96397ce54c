#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mlqmc {

/// %.17g; non-finite values as inf, -inf, nan.
std::string format_real(double x);

/// Comma-separated table with a header row.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const noexcept { return header_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  std::string str() const;

  /// Index of a header column; throws when absent.
  std::size_t column(const std::string& name) const;

  static CsvTable parse(const std::string& text);
  static CsvTable read(const std::filesystem::path& file);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes to a temporary sibling file and renames it over `file`.
void write_file_atomic(const std::filesystem::path& file, const std::string& content);

}  // namespace mlqmc
