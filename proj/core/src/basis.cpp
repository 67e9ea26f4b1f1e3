#include "odenet/basis.hpp"

#include <algorithm>
#include <cmath>

#include "cholesky.hpp"
#include "odenet/errors.hpp"

namespace odenet {
namespace {

// 4-point Gauss-Legendre rule on [-1, 1], exact for polynomials of degree 7.
constexpr std::array<double, 4> kGaussNodes = {
    -0.86113631159405257522, -0.33998104358485626480, 0.33998104358485626480,
    0.86113631159405257522};
constexpr std::array<double, 4> kGaussWeights = {
    0.34785484513745385737, 0.65214515486254614263, 0.65214515486254614263,
    0.34785484513745385737};

// Points within this fraction of a cell of a boundary snap onto it, so that
// stage times such as n * (T / N) land in the intended cell.
constexpr double kSnap = 1e-10;

double checked_time(const BasisSpec& spec, double t) {
  const double slack = 1e-12 * spec.t_final;
  if (!(t >= -slack && t <= spec.t_final + slack)) {
    throw DomainError("t = " + std::to_string(t) + " outside [0, " +
                      std::to_string(spec.t_final) + "]");
  }
  return std::clamp(t, 0.0, spec.t_final);
}

void require_same_final_time(const BasisSpec& a, const BasisSpec& b) {
  if (std::abs(a.t_final - b.t_final) > 1e-12 * std::max(a.t_final, b.t_final)) {
    throw ConfigError("basis final times differ: " + describe(a) + " vs " + describe(b));
  }
}

std::vector<double> merged_breakpoints(const BasisSpec& a, const BasisSpec& b) {
  std::vector<double> pts = breakpoints(a);
  const auto pb = breakpoints(b);
  pts.insert(pts.end(), pb.begin(), pb.end());
  std::sort(pts.begin(), pts.end());
  const double tol = 1e-12 * a.t_final;
  std::vector<double> out;
  for (double p : pts) {
    if (out.empty() || p - out.back() > tol) out.push_back(p);
  }
  return out;
}

template <class Fn>
void for_each_quadrature_point(const std::vector<double>& cells, Fn&& fn) {
  for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
    const double lo = cells[c];
    const double hi = cells[c + 1];
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
      fn(mid + half * kGaussNodes[q], half * kGaussWeights[q]);
    }
  }
}

}  // namespace

std::string_view to_string(BasisFamily family) {
  switch (family) {
    case BasisFamily::PiecewiseConstant:
      return "piecewise_constant";
    case BasisFamily::PiecewiseLinear:
      return "piecewise_linear";
  }
  return "unknown";
}

std::optional<BasisFamily> parse_basis_family(std::string_view name) {
  if (name == "piecewise_constant" || name == "constant") return BasisFamily::PiecewiseConstant;
  if (name == "piecewise_linear" || name == "linear") return BasisFamily::PiecewiseLinear;
  return std::nullopt;
}

void BasisSpec::validate() const {
  if (k < 1) throw ConfigError("basis needs at least one function");
  if (!(t_final > 0.0) || !std::isfinite(t_final)) {
    throw ConfigError("basis final time must be positive, got " + std::to_string(t_final));
  }
}

std::string describe(const BasisSpec& spec) {
  return std::string(to_string(spec.family)) + "(K=" + std::to_string(spec.k) +
         ", T=" + std::to_string(spec.t_final) + ")";
}

BasisSupport basis_support(const BasisSpec& spec, double t) {
  t = checked_time(spec, t);
  BasisSupport out;
  const std::size_t k = spec.k;
  if (k == 1) {
    out.index[0] = 0;
    out.weight[0] = 1.0;
    out.count = 1;
    return out;
  }
  if (spec.family == BasisFamily::PiecewiseConstant) {
    // Half-open cells [(j)dt, (j+1)dt); t = T belongs to the last cell.
    const double s = t * static_cast<double>(k) / spec.t_final;
    double cell = std::floor(s);
    if (cell + 1.0 - s < kSnap) cell += 1.0;
    out.index[0] = std::min(static_cast<std::size_t>(cell), k - 1);
    out.weight[0] = 1.0;
    out.count = 1;
    return out;
  }
  const double s = t * static_cast<double>(k - 1) / spec.t_final;
  const std::size_t e = std::min(static_cast<std::size_t>(std::floor(s)), k - 2);
  const double w = std::clamp(s - static_cast<double>(e), 0.0, 1.0);
  out.index = {e, e + 1};
  out.weight = {1.0 - w, w};
  out.count = 2;
  return out;
}

std::vector<double> basis_eval(const BasisSpec& spec, double t) {
  const BasisSupport sup = basis_support(spec, t);
  std::vector<double> phi(spec.k, 0.0);
  for (std::size_t i = 0; i < sup.count; ++i) phi[sup.index[i]] += sup.weight[i];
  return phi;
}

std::vector<double> control_points(const BasisSpec& spec) {
  const std::size_t k = spec.k;
  const double t_final = spec.t_final;
  std::vector<double> pts(k);
  if (spec.family == BasisFamily::PiecewiseConstant) {
    for (std::size_t i = 0; i < k; ++i) {
      pts[i] = t_final * (static_cast<double>(i) + 0.5) / static_cast<double>(k);
    }
  } else if (k == 1) {
    pts[0] = 0.5 * t_final;
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      pts[i] = t_final * static_cast<double>(i) / static_cast<double>(k - 1);
    }
  }
  return pts;
}

std::vector<double> breakpoints(const BasisSpec& spec) {
  const std::size_t cells =
      spec.family == BasisFamily::PiecewiseConstant ? spec.k : std::max<std::size_t>(spec.k - 1, 1);
  std::vector<double> pts(cells + 1);
  for (std::size_t i = 0; i <= cells; ++i) {
    pts[i] = spec.t_final * static_cast<double>(i) / static_cast<double>(cells);
  }
  pts.back() = spec.t_final;
  return pts;
}

WeightFunction::WeightFunction(BasisSpec spec, Tensor coeffs)
    : spec_(spec), coeffs_(std::move(coeffs)) {
  spec_.validate();
  if (coeffs_.rank() < 1 || coeffs_.dim(0) != spec_.k) {
    throw ShapeError("coefficients " + shape_string(coeffs_.shape()) + " do not have K=" +
                     std::to_string(spec_.k) + " rows");
  }
}

Shape WeightFunction::value_shape() const {
  return Shape(coeffs_.shape().begin() + 1, coeffs_.shape().end());
}

Tensor WeightFunction::operator()(double t) const {
  const BasisSupport sup = basis_support(spec_, t);
  Tensor out(value_shape());
  auto dst = out.data();
  for (std::size_t i = 0; i < sup.count; ++i) {
    const auto src = coeffs_.row(sup.index[i]);
    const double w = sup.weight[i];
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += w * src[p];
  }
  return out;
}

Tensor apply_transfer(const TransferMatrix& m, const Tensor& coeffs) {
  if (coeffs.rank() < 1 || coeffs.dim(0) != m.cols) {
    throw ShapeError("transfer matrix expects " + std::to_string(m.cols) + " rows, got " +
                     shape_string(coeffs.shape()));
  }
  Shape shape = coeffs.shape();
  shape[0] = m.rows;
  Tensor out(shape);
  const std::size_t width = coeffs.row_size();
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto dst = out.data().subspan(i * width, width);
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double a = m(i, j);
      if (a == 0.0) continue;
      const auto src = coeffs.row(j);
      for (std::size_t p = 0; p < width; ++p) dst[p] += a * src[p];
    }
  }
  return out;
}

TransferMatrix interpolation_matrix(const BasisSpec& source, const BasisSpec& target) {
  source.validate();
  target.validate();
  require_same_final_time(source, target);
  TransferMatrix m{target.k, source.k, std::vector<double>(target.k * source.k, 0.0)};
  const auto pts = control_points(target);
  for (std::size_t i = 0; i < target.k; ++i) {
    const BasisSupport sup = basis_support(source, pts[i]);
    for (std::size_t s = 0; s < sup.count; ++s) m.data[i * source.k + sup.index[s]] += sup.weight[s];
  }
  return m;
}

TransferMatrix projection_matrix(const BasisSpec& source, const BasisSpec& target) {
  source.validate();
  target.validate();
  require_same_final_time(source, target);
  const std::size_t k1 = source.k;
  const std::size_t k2 = target.k;
  std::vector<double> hessian(k2 * k2, 0.0);
  std::vector<double> rhs(k2 * k1, 0.0);
  for_each_quadrature_point(merged_breakpoints(source, target), [&](double t, double w) {
    const BasisSupport p2 = basis_support(target, t);
    const BasisSupport p1 = basis_support(source, t);
    for (std::size_t a = 0; a < p2.count; ++a) {
      const double wa = w * p2.weight[a];
      for (std::size_t b = 0; b < p2.count; ++b) {
        hessian[p2.index[a] * k2 + p2.index[b]] += wa * p2.weight[b];
      }
      for (std::size_t b = 0; b < p1.count; ++b) {
        rhs[p2.index[a] * k1 + p1.index[b]] += wa * p1.weight[b];
      }
    }
  });

  const detail::Cholesky chol(std::move(hessian), k2);
  if (!chol.ok()) {
    throw ConditioningError("projection Hessian onto " + describe(target) +
                            " is singular at basis index " + std::to_string(*chol.failed_at()));
  }
  TransferMatrix m{k2, k1, std::vector<double>(k2 * k1, 0.0)};
  std::vector<double> column(k2);
  for (std::size_t j = 0; j < k1; ++j) {
    for (std::size_t i = 0; i < k2; ++i) column[i] = rhs[i * k1 + j];
    chol.solve(column);
    for (std::size_t i = 0; i < k2; ++i) m.data[i * k1 + j] = column[i];
  }
  return m;
}

WeightFunction interpolate(const WeightFunction& wf, const BasisSpec& target) {
  return WeightFunction(target, apply_transfer(interpolation_matrix(wf.spec(), target), wf.coeffs()));
}

WeightFunction project(const WeightFunction& wf, const BasisSpec& target) {
  return WeightFunction(target, apply_transfer(projection_matrix(wf.spec(), target), wf.coeffs()));
}

double quadrature_inner_product(const BasisSpec& a, std::span<const double> ca,
                                const BasisSpec& b, std::span<const double> cb) {
  require_same_final_time(a, b);
  if (ca.size() != a.k || cb.size() != b.k) throw ShapeError("coefficient count does not match K");
  double total = 0.0;
  for_each_quadrature_point(merged_breakpoints(a, b), [&](double t, double w) {
    const BasisSupport pa = basis_support(a, t);
    const BasisSupport pb = basis_support(b, t);
    double fa = 0.0;
    double fb = 0.0;
    for (std::size_t i = 0; i < pa.count; ++i) fa += pa.weight[i] * ca[pa.index[i]];
    for (std::size_t i = 0; i < pb.count; ++i) fb += pb.weight[i] * cb[pb.index[i]];
    total += w * fa * fb;
  });
  return total;
}

void StatePointCloud::add(double t, std::vector<double> value) {
  if (!samples_.empty() && value.size() != samples_.front().value.size()) {
    throw ShapeError("state sample width " + std::to_string(value.size()) + " differs from " +
                     std::to_string(samples_.front().value.size()));
  }
  samples_.push_back(StateSample{t, std::move(value)});
}

std::size_t StatePointCloud::width() const noexcept {
  return samples_.empty() ? 0 : samples_.front().value.size();
}

Tensor project_pointcloud(const StatePointCloud& cloud, const BasisSpec& target) {
  target.validate();
  if (cloud.size() == 0) throw CoverageError(0, "empty state point cloud");
  const std::size_t k = target.k;
  const std::size_t width = cloud.width();

  std::vector<double> normal(k * k, 0.0);
  Tensor rhs(Shape{k, width});
  for (const StateSample& s : cloud.samples()) {
    const BasisSupport sup = basis_support(target, s.t);
    for (std::size_t a = 0; a < sup.count; ++a) {
      const std::size_t ia = sup.index[a];
      for (std::size_t b = 0; b < sup.count; ++b) {
        normal[ia * k + sup.index[b]] += sup.weight[a] * sup.weight[b];
      }
      auto dst = rhs.row(ia);
      for (std::size_t p = 0; p < width; ++p) dst[p] += sup.weight[a] * s.value[p];
    }
  }

  const detail::Cholesky chol(std::move(normal), k);
  if (!chol.ok()) {
    const std::size_t idx = *chol.failed_at();
    throw CoverageError(idx, "state samples do not cover basis index " + std::to_string(idx) +
                                 " of " + describe(target));
  }
  Tensor out(Shape{k, width});
  std::vector<double> column(k);
  for (std::size_t p = 0; p < width; ++p) {
    for (std::size_t i = 0; i < k; ++i) column[i] = rhs.at(i, p);
    chol.solve(column);
    for (std::size_t i = 0; i < k; ++i) out.at(i, p) = column[i];
  }
  return out;
}

}  // namespace odenet
