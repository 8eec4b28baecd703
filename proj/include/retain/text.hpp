#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace retain {

/// Shortest round-trippable decimal form of a double ("%.17g").
std::string format_exact(double v);
/// Fixed significant digits ("%.<digits>g").
std::string format_number(double v, int digits = 10);

std::vector<std::string> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

/// Strict numeric parsing; false on any trailing garbage.
bool parse_double(std::string_view s, double& out);

}  // namespace retain
