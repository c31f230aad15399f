#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ftattr {

std::string read_text_file(const std::filesystem::path& path);
// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

// Splits one CSV record; double quotes may enclose fields and "" escapes a quote.
std::vector<std::string> split_csv_line(std::string_view line);

// Header + rows; the header row is returned separately.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(std::string_view name) const;
};
CsvTable read_csv_table(const std::filesystem::path& path);

// Runs fn(i) for i in [0, count) on up to `workers` threads. Callers write
// results by index, so the outcome does not depend on scheduling. The first
// exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace ftattr
