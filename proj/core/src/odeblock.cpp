#include "odenet/odeblock.hpp"

#include <algorithm>
#include <map>

#include "odenet/errors.hpp"

namespace odenet {

namespace {

ad::Var dense(const ad::Var& x, const ad::Var& kernel, const ad::Var& bias) {
  return ad::add_rowwise(ad::matmul(x, kernel), bias);
}

void append(std::vector<double>& out, std::span<const double> stored,
            std::span<const double> batch, double momentum) {
  for (std::size_t j = 0; j < stored.size(); ++j) {
    out.push_back(momentum * stored[j] + (1.0 - momentum) * batch[j]);
  }
}

}  // namespace

DenseResidualUnit::DenseResidualUnit(std::size_t width, double bn_momentum, double bn_eps)
    : width_(width), momentum_(bn_momentum), eps_(bn_eps) {
  if (width_ == 0) throw ConfigError("residual unit width must be positive");
}

std::vector<TensorSlot> DenseResidualUnit::gradient_layout() const {
  const Shape vec{width_};
  const Shape mat{width_, width_};
  return {
      {"bn1/scale", vec, ParamRole::Scale},     {"bn1/bias", vec, ParamRole::Shift},
      {"dense1/kernel", mat, ParamRole::Kernel}, {"dense1/bias", vec, ParamRole::Bias},
      {"bn2/scale", vec, ParamRole::Scale},     {"bn2/bias", vec, ParamRole::Shift},
      {"dense2/kernel", mat, ParamRole::Kernel}, {"dense2/bias", vec, ParamRole::Bias},
  };
}

std::vector<TensorSlot> DenseResidualUnit::state_layout() const {
  const Shape vec{width_};
  return {
      {"bn1/mean", vec, ParamRole::Mean},
      {"bn1/var", vec, ParamRole::Variance},
      {"bn2/mean", vec, ParamRole::Mean},
      {"bn2/var", vec, ParamRole::Variance},
  };
}

UnitOutput DenseResidualUnit::forward(std::span<const ad::Var> g, std::span<const Tensor> s,
                                      const ad::Var& x, Mode mode) const {
  if (g.size() != 8 || s.size() != 4) throw ShapeError("dense residual unit: wrong parameter count");
  if (x.value().rank() != 2 || x.shape()[1] != width_) {
    throw ShapeError("dense residual unit: input " + shape_string(x.shape()) +
                     " vs width " + std::to_string(width_));
  }
  ad::Tape& tape = x.tape();
  UnitOutput out;
  std::vector<double> sample;

  auto bn = [&](const ad::Var& h, const ad::Var& scale, const ad::Var& bias, const Tensor& mean,
                const Tensor& var) {
    if (mode == Mode::Infer) {
      return ad::normalize(h, tape.constant(mean), tape.constant(var), scale, bias, eps_);
    }
    const ad::Var m = ad::batch_mean(h);
    const ad::Var v = ad::batch_var(h);
    append(sample, mean.data(), m.value().data(), momentum_);
    append(sample, var.data(), v.value().data(), momentum_);
    return ad::normalize(h, m, v, scale, bias, eps_);
  };

  ad::Var h = ad::relu(bn(x, g[0], g[1], s[0], s[1]));
  h = dense(h, g[2], g[3]);
  h = ad::relu(bn(h, g[4], g[5], s[2], s[3]));
  out.dxdt = dense(h, g[6], g[7]);
  if (mode == Mode::Train) out.state_sample = std::move(sample);
  return out;
}

void BlockConfig::validate() const {
  if (width == 0) throw ConfigError("block width must be positive");
  if (n_steps == 0) throw ConfigError("block needs at least one step");
  if (!(t_final > 0.0)) throw ConfigError("block final time must be positive");
  basis_g.validate();
  basis_s.validate();
  if (basis_g.t_final != t_final || basis_s.t_final != t_final) {
    throw ConfigError("basis final time differs from block final time");
  }
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("bn momentum must be in [0, 1)");
  if (!(bn_eps > 0.0)) throw ConfigError("bn eps must be positive");
}

StatefulOdeBlock::StatefulOdeBlock(BlockConfig config, std::shared_ptr<const ResidualUnit> unit)
    : config_(std::move(config)), unit_(std::move(unit)), tableau_(make_tableau(config_.scheme)) {
  config_.validate();
  if (!unit_) {
    unit_ = std::make_shared<DenseResidualUnit>(config_.width, config_.bn_momentum, config_.bn_eps);
  }
  if (unit_->width() != config_.width) throw ConfigError("residual unit width differs from block");
}

std::vector<TensorSlot> StatefulOdeBlock::coefficient_layout_g() const {
  auto layout = unit_->gradient_layout();
  for (auto& slot : layout) slot.shape.insert(slot.shape.begin(), config_.basis_g.k);
  return layout;
}

std::vector<TensorSlot> StatefulOdeBlock::coefficient_layout_s() const {
  auto layout = unit_->state_layout();
  for (auto& slot : layout) slot.shape.insert(slot.shape.begin(), config_.basis_s.k);
  return layout;
}

template <class OnSample>
ad::Var StatefulOdeBlock::run(const ad::Var& x, std::span<const ad::Var> coeffs_g,
                              std::span<const Tensor> coeffs_s, Mode mode,
                              std::size_t& unit_evals, OnSample&& on_sample) const {
  const auto layout_g = coefficient_layout_g();
  const auto layout_s = coefficient_layout_s();
  if (coeffs_g.size() != layout_g.size() || coeffs_s.size() != layout_s.size()) {
    throw ShapeError("block expects " + std::to_string(layout_g.size()) + " gradient and " +
                     std::to_string(layout_s.size()) + " state tensors");
  }
  for (std::size_t i = 0; i < layout_g.size(); ++i) {
    if (coeffs_g[i].shape() != layout_g[i].shape) {
      throw ShapeError("coefficients " + layout_g[i].name + ": " +
                       shape_string(coeffs_g[i].shape()) + " vs " +
                       shape_string(layout_g[i].shape));
    }
  }
  std::vector<WeightFunction> state_fns;
  state_fns.reserve(coeffs_s.size());
  for (std::size_t i = 0; i < layout_s.size(); ++i) {
    if (coeffs_s[i].shape() != layout_s[i].shape) {
      throw ShapeError("state coefficients " + layout_s[i].name + ": " +
                       shape_string(coeffs_s[i].shape()) + " vs " +
                       shape_string(layout_s[i].shape));
    }
    state_fns.emplace_back(config_.basis_s, coeffs_s[i]);
  }

  // Stage times repeat (RK4 visits t + dt/2 twice and shares step ends), so
  // the weight evaluations are memoized per time.
  std::map<double, std::vector<ad::Var>> theta_g_at;
  std::map<double, std::vector<Tensor>> theta_s_at;

  const Rhs<ad::Var> rhs = [&](double t, const ad::Var& xi) {
    auto g_it = theta_g_at.find(t);
    if (g_it == theta_g_at.end()) {
      const BasisSupport sup = basis_support(config_.basis_g, t);
      std::vector<ad::Var> theta;
      theta.reserve(coeffs_g.size());
      for (const ad::Var& c : coeffs_g) theta.push_back(ad::basis_combine(c, sup));
      g_it = theta_g_at.emplace(t, std::move(theta)).first;
    }
    auto s_it = theta_s_at.find(t);
    if (s_it == theta_s_at.end()) {
      std::vector<Tensor> theta;
      theta.reserve(state_fns.size());
      for (const WeightFunction& f : state_fns) theta.push_back(f(t));
      s_it = theta_s_at.emplace(t, std::move(theta)).first;
    }
    UnitOutput out = unit_->forward(g_it->second, s_it->second, xi, mode);
    ++unit_evals;
    if (out.state_sample) on_sample(t, std::move(*out.state_sample));
    return out.dxdt;
  };
  return integrate<ad::Var>(rhs, tableau_, x, config_.t_final, config_.n_steps);
}

StatefulOdeBlock::TrainOutput StatefulOdeBlock::forward_train(
    const ad::Var& x, std::span<const ad::Var> coeffs_g, std::span<const Tensor> coeffs_s) const {
  TrainOutput out;
  out.x_out = run(x, coeffs_g, coeffs_s, Mode::Train, out.unit_evals,
                  [&](double t, std::vector<double> sample) { out.cloud.add(t, std::move(sample)); });

  const Tensor fitted = project_pointcloud(out.cloud, config_.basis_s);
  const std::size_t k = config_.basis_s.k;
  std::size_t offset = 0;
  for (const TensorSlot& slot : coefficient_layout_s()) {
    Tensor coeffs(slot.shape);
    const std::size_t w = coeffs.row_size();
    for (std::size_t r = 0; r < k; ++r) {
      const auto src = fitted.row(r).subspan(offset, w);
      std::copy(src.begin(), src.end(), coeffs.row(r).begin());
    }
    offset += w;
    out.new_state.push_back(std::move(coeffs));
  }
  std::vector<Tensor> current(coeffs_s.begin(), coeffs_s.end());
  out.new_state = apply_state_update(current, std::move(out.new_state));
  return out;
}

StatefulOdeBlock::InferOutput StatefulOdeBlock::forward_infer(
    const ad::Var& x, std::span<const ad::Var> coeffs_g, std::span<const Tensor> coeffs_s) const {
  InferOutput out;
  out.x_out = run(x, coeffs_g, coeffs_s, Mode::Infer, out.unit_evals, [](double, std::vector<double>) {});
  return out;
}

std::vector<Tensor> StatefulOdeBlock::apply_state_update(std::span<const Tensor> current,
                                                         std::vector<Tensor> updated) const {
  const auto layout = coefficient_layout_s();
  if (updated.size() != layout.size() || current.size() != layout.size()) {
    throw ShapeError("state update has " + std::to_string(updated.size()) + " tensors, expected " +
                     std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (updated[i].shape() != layout[i].shape || current[i].shape() != layout[i].shape) {
      throw ShapeError("state update " + layout[i].name + ": " + shape_string(updated[i].shape()) +
                       " vs " + shape_string(layout[i].shape));
    }
    if (layout[i].role == ParamRole::Variance) {
      for (double& v : updated[i].data()) v = std::max(v, config_.bn_eps);
    }
  }
  return updated;
}

std::vector<std::size_t> slot_widths(const std::vector<TensorSlot>& layout) {
  std::vector<std::size_t> out;
  for (const auto& s : layout) out.push_back(shape_size(s.shape));
  return out;
}

}  // namespace odenet
