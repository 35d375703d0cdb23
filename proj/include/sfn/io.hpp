#pragma once

#include <filesystem>
#include <string>

namespace sfn {

// Writes to a sibling temporary file and renames it over path, so readers
// never observe a partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// Shortest round-trip-safe text for a double ("nan", "inf", "-inf" for
// non-finite values). Used wherever byte-identical output matters.
std::string format_double(double x);

}  // namespace sfn
