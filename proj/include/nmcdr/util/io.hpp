#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nmcdr::io {

/// Writes under a temporary sibling name and renames into place, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace nmcdr::io
