#pragma once

// Round-trip exact text encoding of doubles (hex floats) for checkpoints and a
// shortest-round-trip decimal formatter for CSV output.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "ccv/linalg.hpp"

namespace ccv::io {

std::string hex(double v);
double parse_double(std::string_view s);

// Shortest decimal representation that parses back to the same double.
std::string decimal(double v);

// "<tag> <count> v0 v1 ..." on one line.
void write_vector(std::ostream& os, std::string_view tag, std::span<const double> v);
Vector read_vector(std::istream& is, std::string_view tag);

void write_scalar(std::ostream& os, std::string_view tag, double v);
double read_scalar(std::istream& is, std::string_view tag);

void write_count(std::ostream& os, std::string_view tag, std::uint64_t v);
std::uint64_t read_count(std::istream& is, std::string_view tag);

// Reads one whitespace-delimited token and throws std::runtime_error unless it equals `tag`.
void expect(std::istream& is, std::string_view tag);

}  // namespace ccv::io
