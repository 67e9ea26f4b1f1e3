#pragma once

// Stateful ODE-block: x' = R_x(theta_g(t), theta_s(t), x) integrated with an
// explicit RK scheme, where theta_g holds trainable basis coefficients and
// theta_s holds normalization statistics. In training mode every unit call
// also emits an updated statistics sample; the samples form a point cloud
// that is fitted back onto the state basis after integration.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/basis.hpp"
#include "odenet/integrate.hpp"
#include "odenet/tensor.hpp"

namespace odenet {

enum class Mode { Train, Infer };

/// How a tensor is initialized and regularized.
enum class ParamRole { Kernel, Bias, Scale, Shift, Mean, Variance };

struct TensorSlot {
  std::string name;
  Shape shape;
  ParamRole role;
};

struct UnitOutput {
  ad::Var dxdt;
  /// Concatenated updated state (Train mode only), in state_layout() order.
  std::optional<std::vector<double>> state_sample;
};

/// Interface for the residual function R evaluated at one time point.
class ResidualUnit {
 public:
  virtual ~ResidualUnit() = default;

  virtual std::size_t width() const = 0;
  virtual std::vector<TensorSlot> gradient_layout() const = 0;
  virtual std::vector<TensorSlot> state_layout() const = 0;

  /// theta_g in gradient_layout() order, theta_s in state_layout() order.
  virtual UnitOutput forward(std::span<const ad::Var> theta_g, std::span<const Tensor> theta_s,
                             const ad::Var& x, Mode mode) const = 0;
};

/// BN -> ReLU -> Dense -> BN -> ReLU -> Dense on [batch, width] inputs.
class DenseResidualUnit final : public ResidualUnit {
 public:
  DenseResidualUnit(std::size_t width, double bn_momentum, double bn_eps);

  std::size_t width() const override { return width_; }
  std::vector<TensorSlot> gradient_layout() const override;
  std::vector<TensorSlot> state_layout() const override;
  UnitOutput forward(std::span<const ad::Var> theta_g, std::span<const Tensor> theta_s,
                     const ad::Var& x, Mode mode) const override;

 private:
  std::size_t width_;
  double momentum_;
  double eps_;
};

struct BlockConfig {
  std::size_t width = 16;
  SchemeId scheme = SchemeId::RK4;
  std::size_t n_steps = 1;
  double t_final = 1.0;
  BasisSpec basis_g;
  BasisSpec basis_s;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  /// Throws ConfigError on non-positive sizes or mismatched final times.
  void validate() const;
};

class StatefulOdeBlock {
 public:
  /// Uses a DenseResidualUnit when `unit` is null.
  explicit StatefulOdeBlock(BlockConfig config, std::shared_ptr<const ResidualUnit> unit = nullptr);

  const BlockConfig& config() const noexcept { return config_; }
  const ResidualUnit& unit() const noexcept { return *unit_; }
  const ButcherTableau& tableau() const noexcept { return tableau_; }

  /// Coefficient tensors: unit layout shapes with a leading K axis.
  std::vector<TensorSlot> coefficient_layout_g() const;
  std::vector<TensorSlot> coefficient_layout_s() const;

  struct TrainOutput {
    ad::Var x_out;
    std::vector<Tensor> new_state;  // coefficient_layout_s() order
    StatePointCloud cloud;
    std::size_t unit_evals = 0;
  };

  struct InferOutput {
    ad::Var x_out;
    std::size_t unit_evals = 0;
  };

  TrainOutput forward_train(const ad::Var& x, std::span<const ad::Var> coeffs_g,
                            std::span<const Tensor> coeffs_s) const;
  InferOutput forward_infer(const ad::Var& x, std::span<const ad::Var> coeffs_g,
                            std::span<const Tensor> coeffs_s) const;

  /// Replacement state coefficients, shape-checked, with variance rows
  /// clamped to at least bn_eps.
  std::vector<Tensor> apply_state_update(std::span<const Tensor> current,
                                         std::vector<Tensor> updated) const;

 private:
  template <class OnSample>
  ad::Var run(const ad::Var& x, std::span<const ad::Var> coeffs_g, std::span<const Tensor> coeffs_s,
              Mode mode, std::size_t& unit_evals, OnSample&& on_sample) const;

  BlockConfig config_;
  std::shared_ptr<const ResidualUnit> unit_;
  ButcherTableau tableau_;
};

/// Concatenated widths of each state slot, in layout order.
std::vector<std::size_t> slot_widths(const std::vector<TensorSlot>& layout);

}  // namespace odenet
