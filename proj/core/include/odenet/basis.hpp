#pragma once

// Basis-function expansions of depth-dependent weights.
//
// A weight function is theta(t) = sum_k phi_k(t) * coeffs[k, :] on [0, T].
// Coefficients are stored as a Tensor whose leading axis has length K; the
// trailing axes describe one call's parameter tensor and are treated as a
// flat vector of width P by every operation here.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odenet/tensor.hpp"

namespace odenet {

enum class BasisFamily { PiecewiseConstant, PiecewiseLinear };

std::string_view to_string(BasisFamily family);
/// Accepts "piecewise_constant"/"constant" and "piecewise_linear"/"linear".
std::optional<BasisFamily> parse_basis_family(std::string_view name);

struct BasisSpec {
  BasisFamily family = BasisFamily::PiecewiseConstant;
  std::size_t k = 1;
  double t_final = 1.0;

  /// Throws ConfigError unless k >= 1 and t_final > 0.
  void validate() const;
  friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

std::string describe(const BasisSpec& spec);

/// Nonzero entries of (phi_1(t), ..., phi_K(t)); at most two for both families.
struct BasisSupport {
  std::array<std::size_t, 2> index{};
  std::array<double, 2> weight{};
  std::size_t count = 0;
};

BasisSupport basis_support(const BasisSpec& spec, double t);

/// Dense (phi_1(t), ..., phi_K(t)). Throws DomainError for t outside [0, T].
std::vector<double> basis_eval(const BasisSpec& spec, double t);

/// Points t_k with theta(t_k) = coeffs[k]: cell centres for piecewise
/// constant, element boundaries for piecewise linear (T/2 when K = 1).
std::vector<double> control_points(const BasisSpec& spec);

/// Element boundaries where the basis may be non-smooth, including 0 and T.
std::vector<double> breakpoints(const BasisSpec& spec);

class WeightFunction {
 public:
  WeightFunction(BasisSpec spec, Tensor coeffs);

  const BasisSpec& spec() const noexcept { return spec_; }
  const Tensor& coeffs() const noexcept { return coeffs_; }
  /// Flattened width of one evaluation.
  std::size_t width() const noexcept { return coeffs_.row_size(); }
  /// Shape of one evaluation (coefficient shape without the leading K).
  Shape value_shape() const;

  Tensor operator()(double t) const;

 private:
  BasisSpec spec_;
  Tensor coeffs_;
};

/// Row-major K_target x K_source matrix mapping source to target coefficients.
struct TransferMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Apply a transfer matrix to every coefficient column of `coeffs`.
Tensor apply_transfer(const TransferMatrix& m, const Tensor& coeffs);

TransferMatrix interpolation_matrix(const BasisSpec& source, const BasisSpec& target);
TransferMatrix projection_matrix(const BasisSpec& source, const BasisSpec& target);

/// Evaluate the source function at the target's control points.
WeightFunction interpolate(const WeightFunction& wf, const BasisSpec& target);

/// L2-optimal change of basis computed with per-sub-cell Gauss-Legendre
/// quadrature. The sub-cells are the union of both partitions' breakpoints.
WeightFunction project(const WeightFunction& wf, const BasisSpec& target);

/// Inner product of two basis-expanded scalar functions under the same
/// quadrature used by project().
double quadrature_inner_product(const BasisSpec& a, std::span<const double> ca,
                                const BasisSpec& b, std::span<const double> cb);

struct StateSample {
  double t = 0.0;
  std::vector<double> value;
};

class StatePointCloud {
 public:
  StatePointCloud() = default;

  void add(double t, std::vector<double> value);
  const std::vector<StateSample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t width() const noexcept;

 private:
  std::vector<StateSample> samples_;
};

/// Least-squares fit of the cloud onto `target`. Returns a K x P_s tensor.
/// Throws CoverageError if the design matrix is rank deficient.
Tensor project_pointcloud(const StatePointCloud& cloud, const BasisSpec& target);

}  // namespace odenet
