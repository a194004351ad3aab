// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gaitssl::io {

/// Shortest decimal text that parses back to the same value.
std::string format_number(double value);
std::string format_number(float value);

double parse_double(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep);
std::string_view trim(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Lines without terminators; a trailing CR is stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace gaitssl::io
