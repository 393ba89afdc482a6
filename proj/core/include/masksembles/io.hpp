#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace masksembles {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Strict parsers: the whole token must be consumed. Throw IoError.
double parse_double(std::string_view token);
std::int64_t parse_int(std::string_view token);
std::uint64_t parse_uint(std::string_view token);

/// Splits on `delimiter`, keeping empty fields.
std::vector<std::string> split(std::string_view line, char delimiter);

/// Splits on runs of ASCII whitespace.
std::vector<std::string> split_whitespace(std::string_view line);

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never observe a half-written file.
void write_file_atomic(const std::string& path, std::string_view contents);

std::string read_file(const std::string& path);

/// Bit pattern of a double as 16 lowercase hex digits, and back.
std::string double_to_hex(double value);
double hex_to_double(std::string_view hex);

}  // namespace masksembles
