#include "pfl/param.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pfl {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_same_size(size(), other.size(), "ParamVector::operator+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_same_size(size(), other.size(), "ParamVector::operator-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double c) {
  for (double& v : values_) v *= c;
  return *this;
}

SignVector::SignVector(std::initializer_list<int> init) {
  signs_.reserve(init.size());
  for (int v : init) {
    if (v != 1 && v != -1) throw std::invalid_argument("SignVector entries must be +1 or -1");
    signs_.push_back(static_cast<std::int8_t>(v));
  }
}

SignVector::SignVector(std::vector<std::int8_t> signs) : signs_(std::move(signs)) {
  for (auto v : signs_) {
    if (v != 1 && v != -1) throw std::invalid_argument("SignVector entries must be +1 or -1");
  }
}

void SignVector::set(std::size_t i, int sign) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("SignVector entries must be +1 or -1");
  signs_[i] = static_cast<std::int8_t>(sign);
}

ParamVector add(const ParamVector& a, const ParamVector& b) {
  ParamVector out = a;
  out += b;
  return out;
}

ParamVector sub(const ParamVector& a, const ParamVector& b) {
  ParamVector out = a;
  out -= b;
  return out;
}

ParamVector scale(const ParamVector& a, double c) {
  ParamVector out = a;
  out *= c;
  return out;
}

ParamVector hadamard_sign(const ParamVector& k, const SignVector& s) {
  require_same_size(k.size(), s.size(), "hadamard_sign");
  ParamVector out(k.size());
  for (std::size_t j = 0; j < k.size(); ++j) {
    if (!(k[j] >= 0.0)) throw std::invalid_argument("hadamard_sign: magnitude entries must be >= 0");
    out[j] = k[j] * s[j];
  }
  return out;
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "dot");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

double l2_norm(const ParamVector& a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  if (std::isfinite(acc)) return std::sqrt(acc);
  // Squares overflowed; rescale by the largest magnitude.
  double big = 0.0;
  for (double v : a) big = std::max(big, std::abs(v));
  if (!std::isfinite(big) || big == 0.0) return big;
  acc = 0.0;
  for (double v : a) {
    const double r = v / big;
    acc += r * r;
  }
  return big * std::sqrt(acc);
}

double squared_distance(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "squared_distance");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

double cosine(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "cosine");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] / na) * (b[j] / nb);
  return std::clamp(acc, -1.0, 1.0);
}

SignVector sign_of(const ParamVector& a) {
  std::vector<std::int8_t> signs(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) signs[j] = a[j] < 0.0 ? -1 : 1;
  return SignVector(std::move(signs));
}

double sign_match_fraction(const ParamVector& a, const SignVector& s) {
  require_same_size(a.size(), s.size(), "sign_match_fraction");
  if (a.empty()) return 1.0;
  std::size_t matches = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const int sj = a[j] < 0.0 ? -1 : 1;
    if (sj == s[j]) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(a.size());
}

std::size_t count_flips(const SignVector& a, const SignVector& b) {
  require_same_size(a.size(), b.size(), "count_flips");
  std::size_t flips = 0;
  for (std::size_t j = 0; j < a.size(); ++j) flips += (a[j] != b[j]) ? 1 : 0;
  return flips;
}

bool all_finite(const ParamVector& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

ParamVector mean_of(std::span<const ParamVector> vs) {
  if (vs.empty()) throw std::invalid_argument("mean_of: no vectors");
  ParamVector out(vs.front().size());
  for (const auto& v : vs) out += v;
  out *= 1.0 / static_cast<double>(vs.size());
  return out;
}

}  // namespace pfl
