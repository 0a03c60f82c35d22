#pragma once

// Straight-line reference computations over plain nested vectors. Nothing
// here calls the library's ops; parameters are only read.

#include <cmath>
#include <span>
#include <vector>

#include "mtm/encoder.hpp"
#include "support.hpp"

namespace mtm::oracle {

using test::Matrix;
using Vec = std::vector<double>;

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One LSTM direction; rows of the result are aligned with input positions.
inline Matrix lstm(const ParamSet<double>& params, const LstmLayout& l, const Matrix& x, bool reverse) {
  const std::size_t H = l.hidden_size, D = l.input_size, L = x.size();
  const auto& wx = params[l.input_weights].value;
  const auto& wh = params[l.recurrent_weights].value;
  const auto& b = params[l.bias].value;
  Matrix out(L, Vec(H));
  Vec h(H, 0.0), c(H, 0.0);
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = reverse ? L - 1 - step : step;
    Vec z(4 * H);
    for (std::size_t g = 0; g < 4 * H; ++g) {
      double s = b[g];
      for (std::size_t d = 0; d < D; ++d) s += x[t][d] * wx[d * 4 * H + g];
      for (std::size_t k = 0; k < H; ++k) s += h[k] * wh[k * 4 * H + g];
      z[g] = s;
    }
    for (std::size_t k = 0; k < H; ++k) {
      const double i = sigm(z[k]);
      const double f = sigm(z[H + k]);
      const double g = std::tanh(z[2 * H + k]);
      const double o = sigm(z[3 * H + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
    out[t] = h;
  }
  return out;
}

inline Matrix pool(const Matrix& s, std::size_t ps) {
  Matrix out;
  for (std::size_t i = 0; i + ps <= s.size(); ++i) {
    Vec v(s[0].size(), 0.0);
    for (std::size_t j = i; j < i + ps; ++j)
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += s[j][k] / static_cast<double>(ps);
    out.push_back(v);
  }
  return out;
}

// One direction of attentive matching: for every comment row, the
// cosine-weighted average of the target rows, then p reweighted cosines.
inline Matrix match_direction(const Matrix& comment, const Matrix& target, const Matrix& w) {
  Matrix out;
  for (const Vec& ci : comment) {
    Vec alpha;
    double total = 0.0;
    for (const Vec& tj : target) {
      alpha.push_back(test::cosine_direct(ci, tj));
      total += alpha.back();
    }
    Vec attended(ci.size(), 0.0);
    for (std::size_t j = 0; j < target.size(); ++j) {
      for (std::size_t k = 0; k < ci.size(); ++k) {
        if (std::abs(total) < 1e-6) attended[k] += target[j][k] / static_cast<double>(target.size());
        else attended[k] += alpha[j] * target[j][k] / total;
      }
    }
    Vec row;
    for (const Vec& wk : w) {
      Vec a(ci.size()), b(ci.size());
      for (std::size_t k = 0; k < ci.size(); ++k) {
        a[k] = ci[k] * wk[k];
        b[k] = attended[k] * wk[k];
      }
      row.push_back(test::cosine_direct(a, b));
    }
    out.push_back(row);
  }
  return out;
}

inline Matrix match(const Matrix& comment_fwd, const Matrix& comment_bwd, const Matrix& target_fwd,
                    const Matrix& target_bwd, const Matrix& w_fwd, const Matrix& w_bwd) {
  const Matrix f = match_direction(comment_fwd, target_fwd, w_fwd);
  const Matrix b = match_direction(comment_bwd, target_bwd, w_bwd);
  Matrix out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    out[i] = f[i];
    out[i].insert(out[i].end(), b[i].begin(), b[i].end());
  }
  return out;
}

inline Matrix rows_of(std::span<const double> flat, std::size_t rows, std::size_t cols) {
  Matrix m(rows, Vec(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = flat[r * cols + c];
  return m;
}

}  // namespace mtm::oracle
