#pragma once

// Shared helpers for the unit tests: seeded generators and small oracles
// written without the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mtm/tensor.hpp"

namespace mtm::test {

inline std::vector<double> uniform(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor<double> random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  return Tensor<double>({rows, cols}, uniform(rng, rows * cols));
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor<double>& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine_direct(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = std::max(std::sqrt(dot(a, a)), 1e-8);
  const double nb = std::max(std::sqrt(dot(b, b)), 1e-8);
  return dot(a, b) / (na * nb);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) m = std::max(m, std::abs(a[r][c] - b[r][c]));
  return m;
}

}  // namespace mtm::test
