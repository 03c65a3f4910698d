#pragma once

#include <string>
#include <vector>

namespace slowfast {

/// Writes content to a temporary sibling file and renames it over path.
void atomic_write(const std::string& path, const std::string& content);

/// 17 significant digits in the classic locale (so the decimal mark is always a dot).
std::string format_number(double v);

/// Comma-separated table with a header row.
std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows);

}  // namespace slowfast
