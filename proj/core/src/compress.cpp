#include "odenet/compress.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "odenet/errors.hpp"

namespace odenet {

std::string_view to_string(TransferMethod method) {
  return method == TransferMethod::Interpolate ? "interpolate" : "project";
}

std::optional<TransferMethod> parse_transfer_method(std::string_view name) {
  if (name == "interpolate" || name == "interpolation") return TransferMethod::Interpolate;
  if (name == "project" || name == "projection") return TransferMethod::Project;
  return std::nullopt;
}

Tensor change_basis(const Tensor& coeffs, const BasisSpec& source, const BasisSpec& target,
                    TransferMethod method) {
  if (source == target) return coeffs;
  const TransferMatrix m = method == TransferMethod::Interpolate ? interpolation_matrix(source, target)
                                                                 : projection_matrix(source, target);
  return apply_transfer(m, coeffs);
}

Model rebase_model(const Model& model, const std::vector<BasisSpec>& targets_g,
                   const std::vector<BasisSpec>& targets_s, TransferMethod method,
                   const std::vector<std::size_t>& n_steps) {
  const ModelConfig& src = model.config();
  const std::size_t nb = src.blocks.size();
  if (targets_g.size() != nb || targets_s.size() != nb || (!n_steps.empty() && n_steps.size() != nb)) {
    throw ConfigError("rebase needs one target per block");
  }
  ModelConfig dst = src;
  for (std::size_t b = 0; b < nb; ++b) {
    dst.blocks[b].basis_g = targets_g[b];
    dst.blocks[b].basis_s = targets_s[b];
    if (!n_steps.empty()) dst.blocks[b].n_steps = n_steps[b];
  }
  dst.validate();

  ad::ParamStore g;
  ad::ParamStore s;
  for (const ParamSlot& slot : model_layout(src)) {
    const Tensor& t = slot.state ? model.params_s()[slot.name] : model.params_g()[slot.name];
    if (!slot.block) {
      g.add(slot.name, t);
      continue;
    }
    const BlockConfig& from = src.blocks[*slot.block];
    const BlockConfig& to = dst.blocks[*slot.block];
    if (slot.state) {
      Tensor moved = change_basis(t, from.basis_s, to.basis_s, method);
      if (slot.role == ParamRole::Variance) {
        // A change of basis can undershoot near zero; keep variances usable.
        for (double& v : moved.data()) v = std::max(v, to.bn_eps);
      }
      s.add(slot.name, std::move(moved));
    } else {
      g.add(slot.name, change_basis(t, from.basis_g, to.basis_g, method));
    }
  }
  return Model(std::move(dst), std::move(g), std::move(s));
}

Checkpoint compress_checkpoint(const Checkpoint& ckpt, std::size_t target_k, BasisFamily target_family,
                               TransferMethod method) {
  const ModelConfig& cfg = ckpt.model.config();
  std::vector<BasisSpec> targets_g;
  std::vector<BasisSpec> targets_s;
  for (const BlockConfig& b : cfg.blocks) {
    const BasisSpec target{target_family, target_k, b.t_final};
    target.validate();
    targets_g.push_back(target);
    targets_s.push_back(target);
  }
  Checkpoint out{rebase_model(ckpt.model, targets_g, targets_s, method), ckpt.meta};
  out.meta.provenance.push_back({checkpoint_hash(ckpt), std::string(to_string(method)),
                                 "k=" + std::to_string(target_k) + " family=" +
                                     std::string(to_string(target_family))});
  return out;
}

ShortenResult shorten_graph(const Checkpoint& ckpt, std::size_t new_n_t) {
  if (new_n_t < 1) throw ConfigError("shorten_graph: need at least one step");
  ModelConfig cfg = ckpt.model.config();
  ShortenResult result{ckpt, {}};
  bool changed = false;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    BlockConfig& block = cfg.blocks[b];
    changed = changed || block.n_steps != new_n_t;
    block.n_steps = new_n_t;
    for (const BasisSpec* basis : {&block.basis_g, &block.basis_s}) {
      if (basis->family == BasisFamily::PiecewiseConstant && new_n_t < basis->k) {
        result.warnings.push_back("block " + std::to_string(b) + ": " + std::to_string(new_n_t) +
                                  " steps for " + std::to_string(basis->k) +
                                  " piecewise-constant cells; integration skips coefficients");
        break;
      }
    }
  }
  if (!changed) return result;
  result.ckpt = Checkpoint{Model(cfg, ckpt.model.params_g(), ckpt.model.params_s()), ckpt.meta};
  result.ckpt.meta.provenance.push_back(
      {checkpoint_hash(ckpt), "shorten", "n_t=" + std::to_string(new_n_t)});
  return result;
}

std::vector<SweepRow> sweep(const Checkpoint& ckpt, const Dataset& data, const SweepOptions& options) {
  if (options.k_list.empty() || options.n_t_list.empty() || options.methods.empty()) {
    throw ConfigError("sweep needs non-empty k, n_t and method lists");
  }
  if (data.input_dim() != ckpt.model.config().input_dim) {
    throw ShapeError("dataset has " + std::to_string(data.input_dim()) + " features, model expects " +
                     std::to_string(ckpt.model.config().input_dim));
  }
  const BasisFamily source_family = ckpt.model.config().blocks.front().basis_g.family;
  const BasisFamily family = options.family.value_or(source_family);
  const std::size_t repeats = std::max<std::size_t>(1, options.timing_repeats);

  std::vector<SweepRow> rows;
  for (std::size_t k : options.k_list) {
    for (std::size_t n_t : options.n_t_list) {
      for (TransferMethod method : options.methods) {
        SweepRow row;
        row.k = k;
        row.n_t = n_t;
        row.method = method;
        row.family = family;
        try {
          const Checkpoint compressed = compress_checkpoint(ckpt, k, family, method);
          const Checkpoint shortened = shorten_graph(compressed, n_t).ckpt;
          row.param_count = shortened.model.parameter_count();
          std::vector<double> times;
          EvalResult eval;
          for (std::size_t r = 0; r < repeats; ++r) {
            const auto start = std::chrono::steady_clock::now();
            eval = evaluate_model(shortened.model, data, options.batch_size);
            const auto stop = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
          }
          std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
          row.eval_ms = times[times.size() / 2];
          row.accuracy = eval.accuracy;
          row.loss = eval.loss;
          row.unit_evals = eval.unit_evals;
        } catch (const std::exception& e) {
          const double nan = std::numeric_limits<double>::quiet_NaN();
          row.accuracy = row.loss = row.eval_ms = nan;
          row.error = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepCsvHeader << '\n';
  const auto prec = out.precision(10);
  for (const SweepRow& r : rows) {
    out << r.k << ',' << r.n_t << ',' << to_string(r.method) << ',' << to_string(r.family) << ','
        << r.param_count << ',' << r.accuracy << ',' << r.loss << ',' << r.eval_ms << '\n';
  }
  out.precision(prec);
}

}  // namespace odenet
