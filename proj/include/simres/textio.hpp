#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace simres {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Writes the whole file or throws IoError naming the path.
void write_text_file(const std::filesystem::path& path, std::string_view content);
void write_binary_file(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace simres
