#pragma once

// Change of basis on trained checkpoints, graph shortening, and the
// compression sweep harness. Nothing here takes training data except sweep,
// which only evaluates.

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "odenet/basis.hpp"
#include "odenet/checkpoint.hpp"
#include "odenet/dataset.hpp"
#include "odenet/model.hpp"

namespace odenet {

enum class TransferMethod { Interpolate, Project };

std::string_view to_string(TransferMethod method);
std::optional<TransferMethod> parse_transfer_method(std::string_view name);

/// Coefficient tensor with leading basis axis moved from `source` to `target`.
Tensor change_basis(const Tensor& coeffs, const BasisSpec& source, const BasisSpec& target,
                    TransferMethod method);

/// Rebuild `model` with new per-block bases (and optionally step counts).
/// Every gradient and state coefficient is transformed; other tensors are
/// copied.
Model rebase_model(const Model& model, const std::vector<BasisSpec>& targets_g,
                   const std::vector<BasisSpec>& targets_s, TransferMethod method,
                   const std::vector<std::size_t>& n_steps = {});

/// Every block's gradient and state bases become (target_family, target_k).
/// Appends a provenance record naming the source hash and method.
Checkpoint compress_checkpoint(const Checkpoint& ckpt, std::size_t target_k,
                               BasisFamily target_family, TransferMethod method);

struct ShortenResult {
  Checkpoint ckpt;
  std::vector<std::string> warnings;
};

/// Set every block's step count to `new_n_t`; parameters are untouched.
/// Warns when a piecewise-constant basis has more cells than steps, since
/// integration then skips coefficients.
ShortenResult shorten_graph(const Checkpoint& ckpt, std::size_t new_n_t);

struct SweepOptions {
  std::vector<std::size_t> k_list;
  std::vector<std::size_t> n_t_list;
  std::vector<TransferMethod> methods;
  std::optional<BasisFamily> family;  // default: keep each block's family
  std::size_t timing_repeats = 5;
  std::size_t batch_size = 1024;
};

struct SweepRow {
  std::size_t k = 0;
  std::size_t n_t = 0;
  TransferMethod method = TransferMethod::Project;
  BasisFamily family = BasisFamily::PiecewiseConstant;
  std::size_t param_count = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  double eval_ms = 0.0;
  std::size_t unit_evals = 0;
  std::optional<std::string> error;  // set for failed cells
};

/// Rows ordered by k, then n_t, then method, as listed in `options`.
std::vector<SweepRow> sweep(const Checkpoint& ckpt, const Dataset& data, const SweepOptions& options);

inline constexpr std::string_view kSweepCsvHeader =
    "k,n_t,method,family,param_count,accuracy,loss,eval_ms";

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace odenet
