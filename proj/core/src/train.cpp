#include "odenet/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "odenet/compress.hpp"
#include "odenet/errors.hpp"

namespace odenet {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for batch statistics");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  auto check_epochs = [&](const std::vector<std::size_t>& list, const char* what) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i] < 1 || list[i] > epochs) {
        throw ConfigError(std::string(what) + " must lie in [1, epochs]");
      }
      if (i > 0 && list[i] <= list[i - 1]) {
        throw ConfigError(std::string(what) + " must be strictly increasing");
      }
    }
  };
  check_epochs(refinement_epochs, "refinement_epochs");
  check_epochs(lr_decay_epochs, "lr_decay_epochs");
}

TrainConfig default_schedule(std::size_t epochs, std::size_t refinements) {
  TrainConfig c;
  c.epochs = epochs;
  auto at = [&](std::size_t quarter) { return 1 + epochs * quarter / 4; };
  for (std::size_t q : {2, 3}) {
    if (at(q) <= epochs && (c.lr_decay_epochs.empty() || at(q) > c.lr_decay_epochs.back())) {
      c.lr_decay_epochs.push_back(at(q));
    }
  }
  for (std::size_t q = 1; q <= std::min<std::size_t>(refinements, 3); ++q) {
    if (at(q) <= epochs && (c.refinement_epochs.empty() || at(q) > c.refinement_epochs.back())) {
      c.refinement_epochs.push_back(at(q));
    }
  }
  return c;
}

double learning_rate_at(const TrainConfig& config, std::size_t epoch) {
  double lr = config.learning_rate;
  for (std::size_t e : config.lr_decay_epochs) {
    if (epoch >= e) lr *= config.lr_decay;
  }
  return lr;
}

OptState make_opt_state(const Model& model) {
  OptState opt;
  for (const ParamSlot& slot : model_layout(model.config())) {
    if (slot.state) continue;
    opt.velocity.add(slot.name, Tensor(slot.shape));
    opt.decay.push_back(slot.role == ParamRole::Kernel);
  }
  return opt;
}

void sgd_momentum_step(ad::ParamStore& params, const ad::ParamStore& grads, OptState& opt, double lr,
                       double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != opt.velocity.size() ||
      opt.decay.size() != params.size()) {
    throw ShapeError("sgd: parameter, gradient and velocity counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params.at(i);
    const Tensor& g = grads.at(i);
    Tensor& v = opt.velocity.at(i);
    if (w.shape() != g.shape() || w.shape() != v.shape()) {
      throw ShapeError("sgd: " + params.name(i) + " has shape " + shape_string(w.shape()) +
                       ", gradient " + shape_string(g.shape()) + ", velocity " +
                       shape_string(v.shape()));
    }
    const double wd = opt.decay[i] ? weight_decay : 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) {
      v[e] = momentum * v[e] + g[e] + wd * w[e];
      w[e] -= lr * v[e];
    }
  }
}

std::size_t next_k(BasisFamily family, std::size_t k) {
  if (family == BasisFamily::PiecewiseConstant) return 2 * k;
  return k == 1 ? 2 : 2 * k - 1;
}

Model refine(const Model& model) {
  std::vector<BasisSpec> targets_g;
  std::vector<BasisSpec> targets_s;
  std::vector<std::size_t> steps;
  for (const BlockConfig& b : model.config().blocks) {
    BasisSpec g = b.basis_g;
    BasisSpec s = b.basis_s;
    g.k = next_k(g.family, g.k);
    s.k = next_k(s.family, s.k);
    targets_g.push_back(g);
    targets_s.push_back(s);
    steps.push_back(2 * b.n_steps);
  }
  return rebase_model(model, targets_g, targets_s, TransferMethod::Interpolate, steps);
}

StepOutcome training_step(const Model& model, const Dataset& batch) {
  StepOutcome out;
  const ad::ScalarFn loss_fn = [&](ad::Tape& tape, const ad::ParamVars& vars) {
    ForwardResult r = model_forward(model, vars, tape.constant(batch.features), Mode::Train);
    out.new_state = std::move(r.new_state);
    return ad::softmax_cross_entropy(r.logits, batch.labels);
  };
  ad::ValueAndGrad vg = ad::value_and_grad(loss_fn, model.params_g());
  out.loss = vg.value;
  out.grads = std::move(vg.grads);
  return out;
}

namespace {

bool all_finite(const ad::ParamStore& store) {
  return std::all_of(store.begin(), store.end(), [](const auto& e) { return e.second.all_finite(); });
}

}  // namespace

TrainResult train(Model model, const Dataset& train_data, const Dataset* validation,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_data.size() < 2) throw ConfigError("training set needs at least two samples");
  if (train_data.input_dim() != model.config().input_dim) {
    throw ShapeError("training data has " + std::to_string(train_data.input_dim()) +
                     " features, model expects " + std::to_string(model.config().input_dim));
  }
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{model, {}, {}, std::nullopt};
  OptState opt = make_opt_state(model);
  std::size_t next_refinement = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (next_refinement < config.refinement_epochs.size() &&
        config.refinement_epochs[next_refinement] == epoch) {
      model = refine(model);
      opt = make_opt_state(model);
      RefinementRecord rec{epoch, {}, {}};
      for (const BlockConfig& b : model.config().blocks) {
        rec.k.push_back(b.basis_g.k);
        rec.n_t.push_back(b.n_steps);
      }
      result.refinements.push_back(std::move(rec));
      ++next_refinement;
    }
    const double lr = learning_rate_at(config, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      // A single trailing sample has no batch variance; drop it.
      if (end - begin < 2) break;
      const Dataset batch =
          train_data.gather(std::span<const std::size_t>(order).subspan(begin, end - begin));
      StepOutcome step;
      try {
        step = training_step(model, batch);
      } catch (const DivergenceError& e) {
        result.model = model;
        result.divergence = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
        return result;
      }
      if (!std::isfinite(step.loss) || !all_finite(step.grads)) {
        result.model = model;
        result.divergence = "epoch " + std::to_string(epoch) + ": non-finite loss or gradient";
        return result;
      }
      Model next = model;
      sgd_momentum_step(next.mutable_params_g(), step.grads, opt, lr, config.momentum,
                        config.weight_decay);
      apply_state_updates(next, step.new_state);
      if (!all_finite(next.params_g()) || !all_finite(next.params_s())) {
        result.model = model;
        result.divergence = "epoch " + std::to_string(epoch) + ": non-finite parameters after update";
        return result;
      }
      model = std::move(next);
      loss_sum += step.loss * static_cast<double>(batch.size());
      seen += batch.size();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.k = model.config().blocks.front().basis_g.k;
    m.n_t = model.config().blocks.front().n_steps;
    m.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    m.val_accuracy = validation ? evaluate_model(model, *validation).accuracy
                                : std::numeric_limits<double>::quiet_NaN();
    m.lr = lr;
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.model = std::move(model);
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics) {
  out << kMetricsCsvHeader << '\n';
  const auto prec = out.precision(10);
  for (const EpochMetrics& m : metrics) {
    out << m.epoch << ',' << m.k << ',' << m.n_t << ',' << m.train_loss << ',' << m.val_accuracy
        << ',' << m.lr << '\n';
  }
  out.precision(prec);
}

}  // namespace odenet
