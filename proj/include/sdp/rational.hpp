#pragma once

#include <compare>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace sdp {

// Exact rational in lowest terms with a positive denominator.
class Rational {
 public:
  constexpr Rational() = default;
  constexpr Rational(std::int64_t value) : num_(value), den_(1) {}  // NOLINT(implicit)
  Rational(std::int64_t num, std::int64_t den) {
    if (den == 0) throw std::domain_error("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num, den);
    num_ = num / g;
    den_ = den / g;
  }

  constexpr std::int64_t num() const noexcept { return num_; }
  constexpr std::int64_t den() const noexcept { return den_; }
  constexpr bool is_integer() const noexcept { return den_ == 1; }

  friend Rational operator+(const Rational& l, const Rational& r) {
    return {l.num_ * r.den_ + r.num_ * l.den_, l.den_ * r.den_};
  }
  friend Rational operator-(const Rational& l, const Rational& r) {
    return {l.num_ * r.den_ - r.num_ * l.den_, l.den_ * r.den_};
  }
  friend Rational operator/(const Rational& l, const Rational& r) {
    if (r.num_ == 0) throw std::domain_error("rational division by zero");
    return {l.num_ * r.den_, l.den_ * r.num_};
  }

  friend constexpr bool operator==(const Rational&, const Rational&) = default;
  friend std::strong_ordering operator<=>(const Rational& l, const Rational& r) {
    return l.num_ * r.den_ <=> r.num_ * l.den_;
  }

  std::string str() const {
    return is_integer() ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }
  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.str(); }

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace sdp
