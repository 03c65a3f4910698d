#include "slowfast/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <locale>
#include <sstream>

#include "slowfast/error.hpp"

namespace slowfast {

void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::numeric, "cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) fail(ErrorCode::numeric, "write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) fail(ErrorCode::numeric, "rename to " + path + " failed: " + ec.message());
}

std::string format_number(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  return os.str();
}

std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) fail(ErrorCode::argument, "to_csv: row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_number(row[i]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace slowfast
