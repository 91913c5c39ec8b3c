#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace qualpipe::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool starts_with(std::string_view s, std::string_view prefix);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Number of UTF-8 code points; invalid lead bytes count as one each.
std::size_t utf8_length(std::string_view s);

// Whitespace-delimited word count.
std::size_t word_count(std::string_view s);

// "1234567" -> "1,234,567"
std::string with_thousands(std::uint64_t value);

// Fixed-point rendering with `decimals` places and thousands separators
// in the integer part, e.g. 1662.3 -> "1,662.30".
std::string money(double value, int decimals = 2);

// One decimal, trailing ".0" removed: 29.13 -> "29.1", 20.0 -> "20".
std::string percent_1dp(double value);

// Lowercase hex SHA-256 of the input.
std::string sha256_hex(std::string_view data);

// ISO-8601 UTC rendering of unix seconds, e.g. 2019-01-01T00:00:00Z.
std::string iso8601_utc(std::int64_t unix_seconds);

// Removes a leading ```lang fence and trailing ``` fence when present.
std::string strip_code_fences(std::string_view s);

// "five" for 5; digits above ten.
std::string number_word(std::size_t n);

// Minimal RFC 4180 field quoting.
std::string csv_field(std::string_view s);
// Parses RFC 4180 records; quoted fields may span lines.
std::vector<std::vector<std::string>> parse_csv(std::string_view data);

}  // namespace qualpipe::text
