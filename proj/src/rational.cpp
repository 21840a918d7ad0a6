#include "evoqa/rational.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace evoqa {

namespace {

using boost::multiprecision::cpp_int;

cpp_int pow10(unsigned exponent) {
  cpp_int result = 1;
  for (unsigned i = 0; i < exponent; ++i) {
    result *= 10;
  }
  return result;
}

// cpp_int treats a leading zero as an octal prefix.
cpp_int decimal_int(std::string_view digits) {
  const auto first = digits.find_first_not_of('0');
  return first == std::string_view::npos ? cpp_int(0) : cpp_int(std::string(digits.substr(first)));
}

bool all_digits(std::string_view s) {
  if (s.empty()) {
    return false;
  }
  for (char c : s) {
    if (c < '0' || c > '9') {
      return false;
    }
  }
  return true;
}

Rational parse_decimal(std::string_view text) {
  bool negative = false;
  if (!text.empty() && (text.front() == '-' || text.front() == '+')) {
    negative = text.front() == '-';
    text.remove_prefix(1);
  }

  long exponent = 0;
  if (auto pos = text.find_first_of("eE"); pos != std::string_view::npos) {
    std::string_view exp_part = text.substr(pos + 1);
    text = text.substr(0, pos);
    bool exp_negative = false;
    if (!exp_part.empty() && (exp_part.front() == '-' || exp_part.front() == '+')) {
      exp_negative = exp_part.front() == '-';
      exp_part.remove_prefix(1);
    }
    if (!all_digits(exp_part) || exp_part.size() > 4) {
      throw std::invalid_argument("bad exponent");
    }
    exponent = std::stol(std::string(exp_part));
    if (exp_negative) {
      exponent = -exponent;
    }
  }

  std::string_view int_part = text;
  std::string_view frac_part;
  if (auto dot = text.find('.'); dot != std::string_view::npos) {
    int_part = text.substr(0, dot);
    frac_part = text.substr(dot + 1);
  }
  if (int_part.empty() && frac_part.empty()) {
    throw std::invalid_argument("empty number");
  }
  if ((!int_part.empty() && !all_digits(int_part)) ||
      (!frac_part.empty() && !all_digits(frac_part))) {
    throw std::invalid_argument("not a decimal number");
  }

  const cpp_int digits = decimal_int(std::string(int_part) + std::string(frac_part));
  exponent -= static_cast<long>(frac_part.size());

  Rational value = exponent >= 0 ? Rational(digits * pow10(static_cast<unsigned>(exponent)))
                                 : Rational(digits, pow10(static_cast<unsigned>(-exponent)));
  return negative ? Rational(-value) : value;
}

}  // namespace

Rational parse_rational(std::string_view text) {
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    std::string_view num = text.substr(0, slash);
    std::string_view den = text.substr(slash + 1);
    bool negative = false;
    if (!num.empty() && num.front() == '-') {
      negative = true;
      num.remove_prefix(1);
    }
    if (!all_digits(num) || !all_digits(den)) {
      throw std::invalid_argument("malformed fraction: " + std::string(text));
    }
    const cpp_int d = decimal_int(den);
    if (d == 0) {
      throw std::invalid_argument("zero denominator: " + std::string(text));
    }
    const cpp_int n = decimal_int(num);
    return Rational(negative ? cpp_int(-n) : n, d);
  }
  try {
    return parse_decimal(text);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("malformed number: " + std::string(text));
  }
}

Rational rational_from_double(double value) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("non-finite number");
  }
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) {
    throw std::invalid_argument("unformattable number");
  }
  return parse_decimal(std::string_view(buf.data(), static_cast<std::size_t>(end - buf.data())));
}

double to_double(const Rational& value) { return value.convert_to<double>(); }

std::string to_exact_string(const Rational& value) {
  const cpp_int& num = boost::multiprecision::numerator(value);
  const cpp_int& den = boost::multiprecision::denominator(value);
  if (den == 1) {
    return num.str();
  }
  return num.str() + "/" + den.str();
}

std::string format_fixed(const Rational& value, int digits) {
  if (digits < 0) {
    throw std::invalid_argument("negative digit count");
  }
  const bool negative = value < 0;
  Rational magnitude = negative ? Rational(-value) : value;
  const cpp_int scale = pow10(static_cast<unsigned>(digits));
  Rational scaled = magnitude * scale;
  cpp_int num = boost::multiprecision::numerator(scaled);
  cpp_int den = boost::multiprecision::denominator(scaled);
  cpp_int q = num / den;
  cpp_int r = num % den;
  if (r * 2 >= den) {
    ++q;
  }
  std::string body = q.str();
  if (digits > 0) {
    if (body.size() <= static_cast<std::size_t>(digits)) {
      body.insert(0, static_cast<std::size_t>(digits) - body.size() + 1, '0');
    }
    body.insert(body.size() - static_cast<std::size_t>(digits), ".");
  }
  if (negative && q != 0) {
    body.insert(0, "-");
  }
  return body;
}

}  // namespace evoqa
