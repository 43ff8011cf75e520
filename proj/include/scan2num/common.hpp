#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace scan2num {

// Error categories map 1:1 onto CLI exit codes (usage=1, io=2, numeric=3, data=4).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest decimal form that round-trips the exact double value.
// Shortest round-trip digits, %g-style presentation: plain to_chars would
// render 0.0005 as 5e-04, which reads badly in logs and config echoes.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general);
  if (ec != std::errc()) throw NumericError("format_double: conversion failed");
  return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("expected a number for " + what + ", got '" + s + "'");
  }
}

inline int64_t parse_int(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("expected an integer for " + what + ", got '" + s + "'");
  }
}

}  // namespace scan2num
