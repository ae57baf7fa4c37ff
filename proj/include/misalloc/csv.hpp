#pragma once

#include <optional>
#include <string>
#include <vector>

namespace misalloc {

std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Shortest round-trip decimal for a double.
std::string fmt(double x);
std::string fmt(const std::optional<double>& x);
std::string csv_field(const std::string& s);

}  // namespace misalloc
