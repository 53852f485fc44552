#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "f3va/linalg.hpp"

namespace f3va {

/// Rounds to 9 significant digits, the precision of every serialized float.
double round9(double x);
/// "%.9g" formatting.
std::string format9(double x);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes, as 16 hex digits.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace f3va
