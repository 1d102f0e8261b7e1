#pragma once

#include <filesystem>
#include <string>

namespace cdu {

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Reads a whole file. Throws IntegrityError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

}  // namespace cdu
