#include "sbthermo/detail/csv.hpp"

#include <charconv>
#include <sstream>

#include "sbthermo/detail/binary_io.hpp"
#include "sbthermo/error.hpp"

namespace sbthermo::detail {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                  const std::vector<std::string>& columns) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  const std::string where = path.string() + ":";
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (!have_header) {
      bool ok = cells.size() == columns.size();
      for (std::size_t i = 0; ok && i < cells.size(); ++i) ok = cells[i] == columns[i];
      if (!ok) {
        std::string expected;
        for (const auto& c : columns) expected += (expected.empty() ? "" : ",") + c;
        fail(ErrorCode::kFormat, where + std::to_string(line_no) + ": expected header '" +
                                     expected + "'");
      }
      have_header = true;
      continue;
    }
    if (cells.size() != columns.size())
      fail(ErrorCode::kFormat, where + std::to_string(line_no) + ": expected " +
                                   std::to_string(columns.size()) + " fields");
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto cell = cells[i];
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), row[i]);
      if (ec != std::errc() || end != cell.data() + cell.size() || cell.empty())
        fail(ErrorCode::kFormat, where + std::to_string(line_no) + ": bad number '" +
                                     std::string(cell) + "' in column " + columns[i]);
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) fail(ErrorCode::kFormat, where + " empty file");
  return rows;
}

std::string format_double(double value) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

}  // namespace sbthermo::detail
