#pragma once

// SGD with momentum plus multi-level refinement: at configured epochs every
// block's bases are interpolated onto next(K) and its step count doubled.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "odenet/checkpoint.hpp"
#include "odenet/dataset.hpp"
#include "odenet/model.hpp"

namespace odenet {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  /// Epochs (1-based) at whose start the rate is multiplied by lr_decay.
  std::vector<std::size_t> lr_decay_epochs;
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epochs (1-based) at whose start the model is refined.
  std::vector<std::size_t> refinement_epochs;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Decay at 50% and 75% of training, refinement at 25%, 50% and 75%.
/// `refinements` limits how many of the three refinement points are used.
TrainConfig default_schedule(std::size_t epochs, std::size_t refinements = 3);

/// Learning rate in effect during `epoch` (1-based).
double learning_rate_at(const TrainConfig& config, std::size_t epoch);

struct OptState {
  ad::ParamStore velocity;
  std::vector<bool> decay;  // weight decay applies (dense kernels only)
};

OptState make_opt_state(const Model& model);

/// v <- momentum v + g + wd w (wd where opt.decay is set); w <- w - lr v.
void sgd_momentum_step(ad::ParamStore& params, const ad::ParamStore& grads, OptState& opt, double lr,
                       double momentum, double weight_decay);

/// 2K for piecewise-constant bases, 2K - 1 for piecewise-linear (K = 1 -> 2).
std::size_t next_k(BasisFamily family, std::size_t k);

/// Interpolate every block's coefficients onto next(K) and double its steps.
/// The represented weight functions are unchanged.
Model refine(const Model& model);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t k = 0;
  std::size_t n_t = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;  // NaN without a validation set
  double lr = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> metrics;
  std::vector<RefinementRecord> refinements;
  /// Set when training stopped on a non-finite step; `model` is the last
  /// finite state.
  std::optional<std::string> divergence;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Loss of one Train-mode step and its gradient; applies nothing.
struct StepOutcome {
  double loss = 0.0;
  ad::ParamStore grads;
  std::vector<std::vector<Tensor>> new_state;
};
StepOutcome training_step(const Model& model, const Dataset& batch);

TrainResult train(Model model, const Dataset& train_data, const Dataset* validation,
                  const TrainConfig& config, const EpochCallback& on_epoch = nullptr);

inline constexpr std::string_view kMetricsCsvHeader = "epoch,k,n_t,train_loss,val_accuracy,lr";

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics);

}  // namespace odenet
