#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Helpers for the flat `namespace.key=value` configuration text.
namespace tdrd::kv {

using Entries = std::map<std::string, std::string>;

// Parses lines of `key=value`; blank lines and `#` comments are skipped.
// Throws ParseError with the line number on malformed lines or duplicates.
Entries parse(const std::string& text);
std::string format(const Entries& entries);

bool to_bool(const std::string& key, const std::string& value);
int to_int(const std::string& key, const std::string& value);
std::uint64_t to_u64(const std::string& key, const std::string& value);
double to_double(const std::string& key, const std::string& value);
std::vector<int> to_int_list(const std::string& key, const std::string& value);
std::vector<double> to_double_list(const std::string& key, const std::string& value);

std::string from_bool(bool v);
// Shortest text that parses back to exactly `v`.
std::string from_double(double v);
std::string from_int_list(const std::vector<int>& v);
std::string from_double_list(const std::vector<double>& v);

}  // namespace tdrd::kv
