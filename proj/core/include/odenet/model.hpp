#pragma once

// Classifier assembly: dense stem -> stateful ODE-blocks (with dense stitch
// layers between width changes) -> dense head.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "odenet/autodiff.hpp"
#include "odenet/odeblock.hpp"

namespace odenet {

struct Dataset;

struct ModelConfig {
  std::size_t input_dim = 2;
  std::size_t num_classes = 2;
  std::vector<BlockConfig> blocks;

  void validate() const;
};

/// One named tensor of a model and where it lives.
struct ParamSlot {
  std::string name;
  Shape shape;
  ParamRole role;
  std::optional<std::size_t> block;  // set for basis-borne coefficients
  bool state = false;
};

/// Every parameter of a model built from `config`, gradient tensors first.
std::vector<ParamSlot> model_layout(const ModelConfig& config);

class Model {
 public:
  /// Validates that both stores match model_layout(config) exactly.
  Model(ModelConfig config, ad::ParamStore params_g, ad::ParamStore params_s);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<StatefulOdeBlock>& blocks() const noexcept { return blocks_; }
  const ad::ParamStore& params_g() const noexcept { return params_g_; }
  const ad::ParamStore& params_s() const noexcept { return params_s_; }
  ad::ParamStore& mutable_params_g() noexcept { return params_g_; }
  ad::ParamStore& mutable_params_s() noexcept { return params_s_; }

  /// Names of the gradient/state coefficients of block `b`, layout order.
  std::vector<std::string> block_param_names(std::size_t b, bool state) const;

  /// Total stored numbers (gradient and state).
  std::size_t parameter_count() const;
  /// Stored numbers that carry a leading basis axis.
  std::size_t basis_borne_parameter_count() const;

  friend bool operator==(const Model& a, const Model& b);

 private:
  ModelConfig config_;
  std::vector<StatefulOdeBlock> blocks_;
  ad::ParamStore params_g_;
  ad::ParamStore params_s_;
};

/// He-normal kernels, zero biases, unit BN scale, zero BN shift, state mean
/// 0 and variance 1. Every basis row is drawn independently.
Model init_params(const ModelConfig& config, std::uint64_t seed);

struct ForwardResult {
  ad::Var logits;
  /// Per block, new state coefficients (Train mode only).
  std::vector<std::vector<Tensor>> new_state;
  std::size_t unit_evals = 0;
};

ForwardResult model_forward(const Model& model, const ad::ParamVars& params_g,
                            const ad::Var& x, Mode mode);

/// Write Train-mode state results back into the model.
void apply_state_updates(Model& model, const std::vector<std::vector<Tensor>>& new_state);

/// Infer-mode logits without gradient recording.
Tensor predict_logits(const Model& model, const Tensor& features, std::size_t* unit_evals = nullptr);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
  std::size_t unit_evals = 0;
};

EvalResult evaluate_model(const Model& model, const Dataset& data, std::size_t batch_size = 1024);

}  // namespace odenet
