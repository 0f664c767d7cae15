#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ttpmap {

std::string read_file(const std::filesystem::path& path);

// Writes through a sibling temporary file and renames it into place, so
// readers never observe a partially written document.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace ttpmap
