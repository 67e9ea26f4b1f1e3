#include "odenet/model.hpp"

#include <cmath>
#include <random>

#include "odenet/dataset.hpp"
#include "odenet/errors.hpp"

namespace odenet {
namespace {

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b) + "/"; }

ad::Var dense(const ad::Var& x, const ad::Var& kernel, const ad::Var& bias) {
  return ad::add_rowwise(ad::matmul(x, kernel), bias);
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (blocks.empty()) throw ConfigError("model needs at least one ODE block");
  for (const auto& b : blocks) b.validate();
}

std::vector<ParamSlot> model_layout(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSlot> g;
  std::vector<ParamSlot> s;
  const std::size_t d0 = config.blocks.front().width;
  g.push_back({"stem/kernel", {config.input_dim, d0}, ParamRole::Kernel, std::nullopt, false});
  g.push_back({"stem/bias", {d0}, ParamRole::Bias, std::nullopt, false});
  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    const BlockConfig& bc = config.blocks[b];
    if (b > 0 && config.blocks[b - 1].width != bc.width) {
      const std::string p = "stitch" + std::to_string(b) + "/";
      g.push_back({p + "kernel", {config.blocks[b - 1].width, bc.width}, ParamRole::Kernel,
                   std::nullopt, false});
      g.push_back({p + "bias", {bc.width}, ParamRole::Bias, std::nullopt, false});
    }
    const StatefulOdeBlock block(bc);
    for (auto& slot : block.coefficient_layout_g()) {
      g.push_back({block_prefix(b) + slot.name, slot.shape, slot.role, b, false});
    }
    for (auto& slot : block.coefficient_layout_s()) {
      s.push_back({block_prefix(b) + slot.name, slot.shape, slot.role, b, true});
    }
  }
  const std::size_t dl = config.blocks.back().width;
  g.push_back({"head/kernel", {dl, config.num_classes}, ParamRole::Kernel, std::nullopt, false});
  g.push_back({"head/bias", {config.num_classes}, ParamRole::Bias, std::nullopt, false});
  g.insert(g.end(), s.begin(), s.end());
  return g;
}

Model::Model(ModelConfig config, ad::ParamStore params_g, ad::ParamStore params_s)
    : config_(std::move(config)), params_g_(std::move(params_g)), params_s_(std::move(params_s)) {
  std::size_t n_g = 0;
  std::size_t n_s = 0;
  for (const ParamSlot& slot : model_layout(config_)) {
    const ad::ParamStore& store = slot.state ? params_s_ : params_g_;
    const std::size_t expected_index = slot.state ? n_s++ : n_g++;
    if (!store.contains(slot.name) || store.index_of(slot.name) != expected_index) {
      throw ConfigError("parameter '" + slot.name + "' missing or out of order");
    }
    if (store[slot.name].shape() != slot.shape) {
      throw ShapeError("parameter '" + slot.name + "' has shape " +
                       shape_string(store[slot.name].shape()) + ", expected " +
                       shape_string(slot.shape));
    }
  }
  if (n_g != params_g_.size() || n_s != params_s_.size()) {
    throw ConfigError("parameter store has entries not described by the model config");
  }
  blocks_.reserve(config_.blocks.size());
  for (const auto& bc : config_.blocks) blocks_.emplace_back(bc);
}

std::vector<std::string> Model::block_param_names(std::size_t b, bool state) const {
  const StatefulOdeBlock& block = blocks_.at(b);
  std::vector<std::string> names;
  for (const auto& slot : state ? block.coefficient_layout_s() : block.coefficient_layout_g()) {
    names.push_back(block_prefix(b) + slot.name);
  }
  return names;
}

std::size_t Model::parameter_count() const {
  return params_g_.total_elements() + params_s_.total_elements();
}

std::size_t Model::basis_borne_parameter_count() const {
  std::size_t n = 0;
  for (const ParamSlot& slot : model_layout(config_)) {
    if (slot.block) n += shape_size(slot.shape);
  }
  return n;
}

bool operator==(const Model& a, const Model& b) {
  if (a.params_g_ != b.params_g_ || a.params_s_ != b.params_s_) return false;
  const auto& ca = a.config_;
  const auto& cb = b.config_;
  if (ca.input_dim != cb.input_dim || ca.num_classes != cb.num_classes ||
      ca.blocks.size() != cb.blocks.size()) {
    return false;
  }
  for (std::size_t i = 0; i < ca.blocks.size(); ++i) {
    const auto& x = ca.blocks[i];
    const auto& y = cb.blocks[i];
    if (x.width != y.width || x.scheme != y.scheme || x.n_steps != y.n_steps ||
        x.t_final != y.t_final || !(x.basis_g == y.basis_g) || !(x.basis_s == y.basis_s) ||
        x.bn_momentum != y.bn_momentum || x.bn_eps != y.bn_eps) {
      return false;
    }
  }
  return true;
}

Model init_params(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ad::ParamStore g;
  ad::ParamStore s;
  for (const ParamSlot& slot : model_layout(config)) {
    Tensor t(slot.shape);
    switch (slot.role) {
      case ParamRole::Kernel: {
        // Fan-in is the first axis of one kernel (after the basis axis).
        const std::size_t fan_in = slot.block ? slot.shape[1] : slot.shape[0];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (double& v : t.data()) v = dist(rng);
        break;
      }
      case ParamRole::Scale:
      case ParamRole::Variance:
        for (double& v : t.data()) v = 1.0;
        break;
      case ParamRole::Bias:
      case ParamRole::Shift:
      case ParamRole::Mean:
        break;
    }
    (slot.state ? s : g).add(slot.name, std::move(t));
  }
  return Model(config, std::move(g), std::move(s));
}

ForwardResult model_forward(const Model& model, const ad::ParamVars& p, const ad::Var& x,
                            Mode mode) {
  const ModelConfig& cfg = model.config();
  if (x.value().rank() != 2 || x.shape()[1] != cfg.input_dim) {
    throw ShapeError("model input " + shape_string(x.shape()) + " vs input_dim " +
                     std::to_string(cfg.input_dim));
  }
  ForwardResult out;
  ad::Var h = dense(x, p["stem/kernel"], p["stem/bias"]);
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    if (b > 0 && cfg.blocks[b - 1].width != cfg.blocks[b].width) {
      const std::string prefix = "stitch" + std::to_string(b) + "/";
      h = dense(h, p[prefix + "kernel"], p[prefix + "bias"]);
    }
    const StatefulOdeBlock& block = model.blocks()[b];
    std::vector<ad::Var> coeffs_g;
    for (const auto& name : model.block_param_names(b, false)) coeffs_g.push_back(p[name]);
    std::vector<Tensor> coeffs_s;
    for (const auto& name : model.block_param_names(b, true)) {
      coeffs_s.push_back(model.params_s()[name]);
    }
    if (mode == Mode::Train) {
      auto r = block.forward_train(h, coeffs_g, coeffs_s);
      h = r.x_out;
      out.unit_evals += r.unit_evals;
      out.new_state.push_back(std::move(r.new_state));
    } else {
      auto r = block.forward_infer(h, coeffs_g, coeffs_s);
      h = r.x_out;
      out.unit_evals += r.unit_evals;
    }
  }
  out.logits = dense(h, p["head/kernel"], p["head/bias"]);
  return out;
}

void apply_state_updates(Model& model, const std::vector<std::vector<Tensor>>& new_state) {
  if (new_state.size() != model.blocks().size()) {
    throw ShapeError("state update for " + std::to_string(new_state.size()) + " blocks, model has " +
                     std::to_string(model.blocks().size()));
  }
  for (std::size_t b = 0; b < new_state.size(); ++b) {
    const auto names = model.block_param_names(b, true);
    std::vector<Tensor> current;
    for (const auto& name : names) current.push_back(model.params_s()[name]);
    auto updated = model.blocks()[b].apply_state_update(current, new_state[b]);
    for (std::size_t i = 0; i < names.size(); ++i) {
      model.mutable_params_s()[names[i]] = std::move(updated[i]);
    }
  }
}

Tensor predict_logits(const Model& model, const Tensor& features, std::size_t* unit_evals) {
  ad::Tape tape(false);
  const ad::ParamVars vars(tape, model.params_g(), false);
  const ForwardResult r = model_forward(model, vars, tape.constant(features), Mode::Infer);
  if (unit_evals) *unit_evals = r.unit_evals;
  return r.logits.value();
}

EvalResult evaluate_model(const Model& model, const Dataset& data, std::size_t batch_size) {
  EvalResult out;
  if (data.size() == 0) return out;
  if (batch_size == 0) batch_size = data.size();
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= model.config().num_classes) {
      throw ShapeError("label " + std::to_string(l) + " outside the model's " +
                       std::to_string(model.config().num_classes) + " classes");
    }
  }
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const Dataset batch = data.slice(begin, begin + batch_size);
    std::size_t evals = 0;
    const Tensor logits = predict_logits(model, batch.features, &evals);
    out.unit_evals += evals;
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::size_t best = 0;
      double zmax = logits.at(i, 0);
      for (std::size_t j = 1; j < c; ++j) {
        if (logits.at(i, j) > zmax) {
          zmax = logits.at(i, j);
          best = j;
        }
      }
      if (static_cast<int>(best) == batch.labels[i]) ++correct;
      double denom = 0.0;
      for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits.at(i, j) - zmax);
      loss_sum += -(logits.at(i, static_cast<std::size_t>(batch.labels[i])) - zmax - std::log(denom));
    }
  }
  out.samples = data.size();
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  out.loss = loss_sum / static_cast<double>(data.size());
  return out;
}

}  // namespace odenet
