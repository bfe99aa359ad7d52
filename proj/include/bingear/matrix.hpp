#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bingear/error.hpp"

namespace bingear {

// Row-major dense matrix; one row per graph node. Training runs in float;
// the gradient checks instantiate the same code in double.
template <typename Real>
class BasicMatrix {
 public:
  using value_type = Real;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<Real> flat() noexcept { return data_; }
  std::span<const Real> flat() const noexcept { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  template <typename Other>
  BasicMatrix<Other> cast() const {
    BasicMatrix<Other> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.flat().begin(),
                   [](Real v) { return static_cast<Other>(v); });
    return out;
  }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using Matrix = BasicMatrix<float>;

// Dot product with eight independent partial sums so the loop vectorizes
// without relaxed floating-point flags.
template <typename Real>
inline Real dot(std::span<const Real> a, std::span<const Real> b) noexcept {
  const std::size_t n = std::min(a.size(), b.size());
  Real acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[j + k] * b[j + k];
  }
  Real tail = 0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

inline float dot(std::span<const float> a, std::span<const float> b) noexcept {
  return dot<float>(a, b);
}
inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return dot<double>(a, b);
}

template <typename Real>
inline void axpy(Real alpha, std::span<const Real> x, std::span<Real> y) noexcept {
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += alpha * x[j];
}

}  // namespace bingear
