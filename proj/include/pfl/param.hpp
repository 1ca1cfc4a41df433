#pragma once

// Flat parameter-vector arithmetic. Every model, update and magnitude vector
// in the simulator is a ParamVector of the experiment's dimension d.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace pfl {

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  ParamVector(std::initializer_list<double> init) : values_(init) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double c);

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Entries are exactly +1 or -1.
class SignVector {
 public:
  SignVector() = default;
  explicit SignVector(std::size_t dim) : signs_(dim, 1) {}
  SignVector(std::initializer_list<int> init);
  explicit SignVector(std::vector<std::int8_t> signs);

  std::size_t size() const noexcept { return signs_.size(); }
  int operator[](std::size_t i) const { return signs_[i]; }
  void set(std::size_t i, int sign);
  void flip(std::size_t i) { signs_[i] = static_cast<std::int8_t>(-signs_[i]); }

  bool operator==(const SignVector&) const = default;

 private:
  std::vector<std::int8_t> signs_;
};

ParamVector add(const ParamVector& a, const ParamVector& b);
ParamVector sub(const ParamVector& a, const ParamVector& b);
ParamVector scale(const ParamVector& a, double c);

/// out[j] = k[j] * s[j]; k must be non-negative.
ParamVector hadamard_sign(const ParamVector& k, const SignVector& s);

double dot(const ParamVector& a, const ParamVector& b);
double l2_norm(const ParamVector& a);
double squared_distance(const ParamVector& a, const ParamVector& b);
/// Cosine similarity; 0 when either vector is zero.
double cosine(const ParamVector& a, const ParamVector& b);

/// sign(0) is +1.
SignVector sign_of(const ParamVector& a);
double sign_match_fraction(const ParamVector& a, const SignVector& s);
/// Number of positions where the two sign vectors differ.
std::size_t count_flips(const SignVector& a, const SignVector& b);

bool all_finite(const ParamVector& a);
ParamVector mean_of(std::span<const ParamVector> vs);

void require_same_size(std::size_t a, std::size_t b, const char* what);

}  // namespace pfl
