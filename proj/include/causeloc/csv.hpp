#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace causeloc::csv {

// Minimal RFC 4180 helpers: fields containing comma, quote or newline are
// quoted with doubled quotes.
std::string escape(std::string_view field);
std::string join_row(const std::vector<std::string>& fields);
std::vector<std::string> split_row(std::string_view line);

// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

std::vector<std::vector<std::string>> read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace causeloc::csv
