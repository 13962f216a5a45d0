#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lsa {

/// Whole-file helpers; throw lsa::Error when the file cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

/// Shortest round-trip representation is not needed; 17 significant digits is.
std::string format_double(double value);

}  // namespace lsa
