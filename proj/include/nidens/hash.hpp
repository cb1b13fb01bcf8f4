#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nidens {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: temp file then rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace nidens
