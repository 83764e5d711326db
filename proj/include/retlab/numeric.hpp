#pragma once

// Exact rationals (GMP), compensated summation and locale-independent
// number formatting shared by every module.

#include <gmpxx.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "retlab/error.hpp"

namespace retlab {

using BigInt = mpz_class;
using Rational = mpq_class;

inline Rational canonical(Rational r) {
  r.canonicalize();
  return r;
}

/// Parses "7", "-3/10", "0.125", "1e-3", "2.5E+2" into an exact rational.
inline Rational parse_rational(std::string_view text) {
  auto fail = [&] {
    throw Error(ErrorCode::invalid_argument,
                "not a rational number: '" + std::string(text) + "'");
  };
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) fail();

  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    Rational r;
    std::string s(text);
    if (r.set_str(s, 10) != 0) fail();
    if (r.get_den() == 0) fail();
    r.canonicalize();
    return r;
  }

  bool negative = false;
  std::size_t pos = 0;
  if (text[pos] == '+' || text[pos] == '-') {
    negative = text[pos] == '-';
    ++pos;
  }
  std::string digits;
  long exponent = 0;
  bool seen_digit = false;
  bool seen_point = false;
  for (; pos < text.size(); ++pos) {
    char c = text[pos];
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
      seen_digit = true;
      if (seen_point) --exponent;
    } else if (c == '.' && !seen_point) {
      seen_point = true;
    } else {
      break;
    }
  }
  if (!seen_digit) fail();
  if (pos < text.size()) {
    if (text[pos] != 'e' && text[pos] != 'E') fail();
    ++pos;
    long e = 0;
    auto first = text.data() + pos;
    auto last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, e);
    if (ec != std::errc() || ptr != last) fail();
    exponent += e;
  }
  BigInt numerator(digits, 10);
  if (negative) numerator = -numerator;
  BigInt scale;
  mpz_ui_pow_ui(scale.get_mpz_t(), 10, static_cast<unsigned long>(std::labs(exponent)));
  Rational r = exponent >= 0 ? Rational(numerator * scale) : Rational(numerator, scale);
  r.canonicalize();
  return r;
}

/// Shortest round-trip decimal rendering, independent of the C locale.
inline std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ptr);
}

/// The decimal a human would have typed for `value` (0.9 -> 9/10).
inline Rational rational_from_double(double value) {
  require(std::isfinite(value), ErrorCode::invalid_argument, "non-finite number");
  return parse_rational(format_double(value));
}

inline std::string to_string(const Rational& r) { return r.get_str(10); }

/// Natural log of a positive big integer without overflow.
inline double log_of(const BigInt& z) {
  long exp2 = 0;
  double mantissa = mpz_get_d_2exp(&exp2, z.get_mpz_t());
  return std::log(mantissa) + static_cast<double>(exp2) * std::log(2.0);
}

/// Natural log of a positive rational; does not underflow for tiny values.
inline double log_of(const Rational& r) {
  require(sgn(r) > 0, ErrorCode::invalid_argument, "log of non-positive rational");
  return log_of(BigInt(r.get_num())) - log_of(BigInt(r.get_den()));
}

inline double to_double(const Rational& r) {
  if (sgn(r) == 0) return 0.0;
  double d = r.get_d();
  if (d != 0.0 && std::isfinite(d)) return d;
  double l = log_of(Rational(abs(r)));
  return sgn(r) < 0 ? -std::exp(l) : std::exp(l);
}

inline BigInt lcm(const BigInt& a, const BigInt& b) {
  BigInt r;
  mpz_lcm(r.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return r;
}

inline BigInt pow(const BigInt& base, unsigned long exponent) {
  BigInt r;
  mpz_pow_ui(r.get_mpz_t(), base.get_mpz_t(), exponent);
  return r;
}

inline Rational pow(const Rational& base, unsigned long exponent) {
  Rational r;
  mpz_pow_ui(r.get_num_mpz_t(), base.get_num_mpz_t(), exponent);
  mpz_pow_ui(r.get_den_mpz_t(), base.get_den_mpz_t(), exponent);
  return r;
}

/// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) {
      compensation_ += (sum_ - t) + x;
    } else {
      compensation_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  [[nodiscard]] double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

/// Least-squares slope of ys against xs.
inline double least_squares_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size() && xs.size() >= 2, ErrorCode::invalid_argument,
          "slope needs two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace retlab
