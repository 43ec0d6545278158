#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sbthermo::detail {

// Numeric CSV with a mandatory header row whose column names must equal
// `columns` (surrounding whitespace ignored). Blank lines are skipped.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                  const std::vector<std::string>& columns);

// Shortest round-trip text for a double.
std::string format_double(double value);

}  // namespace sbthermo::detail
