#pragma once

#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace evoqa {

/// Exact rational number used for weights, scores and aggregates.
using Rational = boost::multiprecision::cpp_rational;

/// Parses "7", "-2.25", "8.5e-1" or "3/4" exactly. Throws std::invalid_argument.
Rational parse_rational(std::string_view text);

/// Converts a double through its shortest round-trip decimal text, so a
/// value read from JSON as 8.1 becomes exactly 81/10. Throws on NaN/inf.
Rational rational_from_double(double value);

double to_double(const Rational& value);

/// Exact "num/den" (or "num" when integral) form; inverse of parse_rational.
std::string to_exact_string(const Rational& value);

/// Decimal rendering with `digits` fractional digits, rounded half away from zero.
std::string format_fixed(const Rational& value, int digits);

}  // namespace evoqa
