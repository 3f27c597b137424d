#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "vixen/image.hpp"
#include "vixen/matrix.hpp"
#include "vixen/random.hpp"

namespace vixen::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = uniform(rng, lo, hi);
  return m;
}

inline Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w);
  for (double& v : img.pixels) v = uniform01(rng);
  return img;
}

/// Central-difference derivative of f with respect to every entry of x.
inline Matrix finite_difference(Matrix& x, const std::function<double()>& f, double step = 1e-6) {
  Matrix grad(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.values()[i];
    x.values()[i] = saved + step;
    const double up = f();
    x.values()[i] = saved - step;
    const double down = f();
    x.values()[i] = saved;
    grad.values()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// max |a-b| / max(1e-8, max(|a|, |b|)) over the whole matrix.
inline double relative_error(const Matrix& a, const Matrix& b) {
  double num = 0.0;
  double den = 1e-8;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a.values()[i] - b.values()[i]));
    den = std::max({den, std::abs(a.values()[i]), std::abs(b.values()[i])});
  }
  return num / den;
}

inline std::string data_path(const std::string& name) { return std::string(VIXEN_TEST_DATA_DIR) + "/" + name; }

}  // namespace vixen::testing
