#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flsim {

// File access failures, kept distinct from parse/logic errors so callers
// (and the CLI exit code) can tell them apart.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shortest representation that round-trips a double exactly ("%.17g" style
// via std::to_chars), so rerunning an experiment reproduces output files
// byte for byte and parsing them back loses nothing.
std::string format_double(double v);

// Strict numeric parsing; the whole field must be consumed.
double parse_double_field(std::string_view field, const std::string& context);
long long parse_int_field(std::string_view field, const std::string& context);
std::uint64_t parse_uint64_field(std::string_view field, const std::string& context);

std::vector<std::string> split_fields(std::string_view line, char sep);

// Strips trailing '\r' (files may arrive with CRLF endings).
std::string strip_cr(std::string line);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace flsim
