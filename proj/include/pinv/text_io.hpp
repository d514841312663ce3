#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pinv {

// Splits one CSV line on ','; no quoting (the formats here never need it).
std::vector<std::string_view> split_csv_line(std::string_view line);

// Strict numeric parsing; the whole field must be consumed.
bool parse_double(std::string_view field, double& out);
bool parse_int64(std::string_view field, std::int64_t& out);

// Shortest decimal form that round-trips exactly.
std::string format_double(double x);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_doubles(std::span<const double> values);

}  // namespace pinv
