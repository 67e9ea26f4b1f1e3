#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace odenet::detail {

// In-place lower Cholesky factor of a symmetric n x n row-major matrix.
// A pivot at or below `relative_tolerance * max(diag)` is reported as the
// index of the first failing column.
class Cholesky {
 public:
  Cholesky(std::vector<double> a, std::size_t n, double relative_tolerance = 1e-12)
      : l_(std::move(a)), n_(n) {
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n_; ++i) max_diag = std::max(max_diag, l_[i * n_ + i]);
    const double threshold = relative_tolerance * max_diag;
    for (std::size_t j = 0; j < n_; ++j) {
      double pivot = l_[j * n_ + j];
      for (std::size_t k = 0; k < j; ++k) pivot -= l_[j * n_ + k] * l_[j * n_ + k];
      if (!(pivot > threshold)) {
        failed_at_ = j;
        return;
      }
      const double d = std::sqrt(pivot);
      l_[j * n_ + j] = d;
      for (std::size_t i = j + 1; i < n_; ++i) {
        double v = l_[i * n_ + j];
        for (std::size_t k = 0; k < j; ++k) v -= l_[i * n_ + k] * l_[j * n_ + k];
        l_[i * n_ + j] = v / d;
      }
    }
  }

  bool ok() const noexcept { return !failed_at_.has_value(); }
  std::optional<std::size_t> failed_at() const noexcept { return failed_at_; }

  // Solve L L^T x = b in place.
  void solve(std::span<double> b) const {
    for (std::size_t i = 0; i < n_; ++i) {
      double v = b[i];
      for (std::size_t k = 0; k < i; ++k) v -= l_[i * n_ + k] * b[k];
      b[i] = v / l_[i * n_ + i];
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      double v = b[ii];
      for (std::size_t k = ii + 1; k < n_; ++k) v -= l_[k * n_ + ii] * b[k];
      b[ii] = v / l_[ii * n_ + ii];
    }
  }

 private:
  std::vector<double> l_;
  std::size_t n_;
  std::optional<std::size_t> failed_at_;
};

}  // namespace odenet::detail
