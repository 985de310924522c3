#include "ccv/serialize.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <system_error>

namespace ccv::io {

std::string hex(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const bool is_hex = s.find_first_of("pP") != std::string_view::npos;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v,
                                   is_hex ? std::chars_format::hex : std::chars_format::general);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

std::string decimal(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void expect(std::istream& is, std::string_view tag) {
  std::string tok;
  if (!(is >> tok) || tok != tag) {
    throw std::runtime_error("checkpoint: expected '" + std::string(tag) + "', found '" + tok + "'");
  }
}

void write_vector(std::ostream& os, std::string_view tag, std::span<const double> v) {
  os << tag << ' ' << v.size();
  for (double x : v) os << ' ' << hex(x);
  os << '\n';
}

Vector read_vector(std::istream& is, std::string_view tag) {
  expect(is, tag);
  std::size_t n = 0;
  if (!(is >> n)) throw std::runtime_error("checkpoint: bad length for '" + std::string(tag) + "'");
  Vector v(n);
  std::string tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated '" + std::string(tag) + "'");
    v[i] = parse_double(tok);
  }
  return v;
}

void write_scalar(std::ostream& os, std::string_view tag, double v) { os << tag << ' ' << hex(v) << '\n'; }

double read_scalar(std::istream& is, std::string_view tag) {
  expect(is, tag);
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated '" + std::string(tag) + "'");
  return parse_double(tok);
}

void write_count(std::ostream& os, std::string_view tag, std::uint64_t v) { os << tag << ' ' << v << '\n'; }

std::uint64_t read_count(std::istream& is, std::string_view tag) {
  expect(is, tag);
  std::uint64_t v = 0;
  if (!(is >> v)) throw std::runtime_error("checkpoint: bad count for '" + std::string(tag) + "'");
  return v;
}

}  // namespace ccv::io
