#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nlab {

// Writes to a sibling temp file, then renames over `path`. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Shortest text that round-trips through strtod, at most 17 significant digits.
std::string format_double(double v);

}  // namespace nlab
