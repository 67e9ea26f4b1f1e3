// odenet: train, compress, evaluate and sweep basis-function ODE-Nets.
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
// configuration error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odenet/checkpoint.hpp"
#include "odenet/compress.hpp"
#include "odenet/config.hpp"
#include "odenet/errors.hpp"
#include "odenet/integrate.hpp"
#include "odenet/train.hpp"

namespace fs = std::filesystem;
using namespace odenet;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct UsageError : Error {
  using Error::Error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct DatasetArgs {
  std::string name;
  std::size_t limit = 0;
  std::size_t n = 1000;
  double noise = 0.0;
  std::string data_dir = "data/mnist-subset";
};

void add_dataset_options(CLI::App* cmd, DatasetArgs& d) {
  cmd->add_option("--dataset", d.name, "two_spirals, circles, blobs, or mnist (IDX files)")->required();
  cmd->add_option("--limit", d.limit, "evaluate only the first N samples (0 = all)");
  cmd->add_option("--n", d.n, "synthetic test-set size");
  cmd->add_option("--noise", d.noise, "synthetic noise level");
  cmd->add_option("--data-dir", d.data_dir, "directory holding t10k-images/labels IDX files");
}

Dataset eval_dataset(const DatasetArgs& d, const ModelConfig& model, std::uint64_t seed) {
  DatasetSpec spec;
  if (d.name == "mnist" || d.name == "idx") {
    spec.kind = "idx";
    spec.test_images = (fs::path(d.data_dir) / "t10k-images-idx3-ubyte").string();
    spec.test_labels = (fs::path(d.data_dir) / "t10k-labels-idx1-ubyte").string();
    spec.pool2x2 = model.input_dim == 196;
  } else if (parse_synthetic_kind(d.name)) {
    spec.kind = d.name;
    spec.n_test = d.n;
    spec.noise = d.noise;
  } else {
    throw UsageError("unknown dataset '" + d.name + "'");
  }
  Dataset data = load_eval_dataset(spec, seed, d.limit);
  if (data.input_dim() != model.input_dim) {
    throw UsageError("dataset '" + d.name + "' has " + std::to_string(data.input_dim()) +
                     " features, checkpoint expects " + std::to_string(model.input_dim));
  }
  if (data.num_classes != model.num_classes) {
    throw UsageError("dataset '" + d.name + "' has " + std::to_string(data.num_classes) +
                     " classes, checkpoint expects " + std::to_string(model.num_classes));
  }
  return data;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what, T (*conv)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(conv(item));
    } catch (const std::exception&) {
      throw UsageError(std::string("bad entry '") + item + "' in " + what);
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + " must not be empty");
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size() || s.front() == '-') throw std::invalid_argument(s);
  return static_cast<std::size_t>(v);
}

TransferMethod to_method(const std::string& s) {
  const auto m = parse_transfer_method(s);
  if (!m) throw std::invalid_argument(s);
  return *m;
}

BasisFamily family_or_throw(const std::string& s) {
  const auto f = parse_basis_family(s);
  if (!f) throw UsageError("unknown basis family '" + s + "'");
  return *f;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw Error("cannot write " + path.string());
}

Checkpoint load_or_usage(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string metrics;
};

int run_train(const TrainArgs& a, const Common& common) {
  if (!fs::exists(a.config)) throw UsageError("config file not found: " + a.config);
  RunConfig rc = load_run_config(a.config);
  if (common.seed) set_seed(rc, *common.seed);
  const fs::path base = fs::path(a.config).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  const fs::path ckpt_path = a.out.empty() ? resolve(rc.checkpoint_path) : fs::path(a.out);
  const fs::path metrics_path = a.metrics.empty() ? resolve(rc.metrics_path) : fs::path(a.metrics);

  const DataSplit data = load_datasets(rc.dataset, rc.seed);
  if (data.train.input_dim() != rc.model.input_dim) {
    throw UsageError("dataset features do not match the model input size");
  }
  Model model = init_params(rc.model, rc.seed);
  const auto start = std::chrono::steady_clock::now();
  TrainResult result = train(std::move(model), data.train, &data.test, rc.train, [&](const EpochMetrics& m) {
    if (!common.quiet) {
      std::cerr << "epoch " << m.epoch << " k=" << m.k << " n_t=" << m.n_t << " loss=" << m.train_loss
                << " val_acc=" << m.val_accuracy << " lr=" << m.lr << '\n';
    }
  });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Checkpoint ckpt{std::move(result.model), {}};
  ckpt.meta.epochs = result.metrics.size();
  ckpt.meta.seed = rc.seed;
  ckpt.meta.refinements = result.refinements;
  save_checkpoint(ckpt, ckpt_path);
  std::ostringstream csv;
  write_metrics_csv(csv, result.metrics);
  write_text(metrics_path, csv.str());

  if (result.divergence) {
    std::cerr << "odenet: training diverged (" << *result.divergence
              << "); last finite model written to " << ckpt_path.string() << '\n';
    return kRuntimeFailure;
  }
  const EvalResult eval = evaluate_model(ckpt.model, data.test);
  std::cout << "accuracy,loss,param_count,train_seconds\n"
            << eval.accuracy << ',' << eval.loss << ',' << ckpt.model.parameter_count() << ','
            << seconds << '\n';
  return kOk;
}

// --- compress --------------------------------------------------------------

struct CompressArgs {
  std::string in;
  std::string out;
  std::optional<std::size_t> k;
  std::string family;
  std::string method = "project";
  std::optional<std::size_t> n_t;
};

int run_compress(const CompressArgs& a, const Common& common) {
  const auto method = parse_transfer_method(a.method);
  if (!method) throw UsageError("unknown method '" + a.method + "' (interpolate or project)");
  std::optional<BasisFamily> family;
  if (!a.family.empty()) family = family_or_throw(a.family);
  if (a.k && *a.k == 0) throw UsageError("--k must be positive");
  if (a.n_t && *a.n_t == 0) throw UsageError("--n-t must be positive");

  Checkpoint ckpt = load_or_usage(a.in);
  const BasisSpec& src = ckpt.model.config().blocks.front().basis_g;
  const std::size_t k = a.k.value_or(src.k);
  const BasisFamily fam = family.value_or(src.family);
  Checkpoint out = compress_checkpoint(ckpt, k, fam, *method);
  if (a.n_t) {
    ShortenResult shortened = shorten_graph(out, *a.n_t);
    if (!common.quiet) {
      for (const auto& w : shortened.warnings) std::cerr << "odenet: warning: " << w << '\n';
    }
    out = std::move(shortened.ckpt);
  }
  save_checkpoint(out, a.out);
  std::cout << "source_params,target_params,source_basis_params,target_basis_params\n"
            << ckpt.model.parameter_count() << ',' << out.model.parameter_count() << ','
            << ckpt.model.basis_borne_parameter_count() << ',' << out.model.basis_borne_parameter_count()
            << '\n';
  return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  DatasetArgs data;
};

int run_eval(const EvalArgs& a, const Common& common) {
  const Checkpoint ckpt = load_or_usage(a.checkpoint);
  const Dataset data = eval_dataset(a.data, ckpt.model.config(), common.seed.value_or(ckpt.meta.seed));
  const auto start = std::chrono::steady_clock::now();
  const EvalResult r = evaluate_model(ckpt.model, data);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  std::cout << "accuracy,loss,param_count,eval_ms,samples\n"
            << r.accuracy << ',' << r.loss << ',' << ckpt.model.parameter_count() << ',' << ms << ','
            << r.samples << '\n';
  return kOk;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string checkpoint;
  DatasetArgs data;
  std::string k_list;
  std::string n_t_list;
  std::string methods = "project";
  std::string family;
  std::string out;
  std::size_t repeats = 5;
};

int run_sweep(const SweepArgs& a, const Common& common) {
  SweepOptions opts;
  opts.k_list = parse_list<std::size_t>(a.k_list, "--k-list", to_size);
  opts.methods = parse_list<TransferMethod>(a.methods, "--methods", to_method);
  if (!a.family.empty()) opts.family = family_or_throw(a.family);
  opts.timing_repeats = a.repeats;
  if (std::count(opts.k_list.begin(), opts.k_list.end(), 0u) > 0) throw UsageError("--k-list entries must be positive");

  const Checkpoint ckpt = load_or_usage(a.checkpoint);
  if (a.n_t_list.empty()) {
    opts.n_t_list = {ckpt.model.config().blocks.front().n_steps};
  } else {
    opts.n_t_list = parse_list<std::size_t>(a.n_t_list, "--n-t-list", to_size);
    if (std::count(opts.n_t_list.begin(), opts.n_t_list.end(), 0u) > 0) {
      throw UsageError("--n-t-list entries must be positive");
    }
  }
  const Dataset data = eval_dataset(a.data, ckpt.model.config(), common.seed.value_or(ckpt.meta.seed));
  const std::vector<SweepRow> rows = sweep(ckpt, data, opts);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(a.out, csv.str());
  }
  if (!common.quiet) {
    for (const SweepRow& r : rows) {
      if (r.error) std::cerr << "odenet: k=" << r.k << " n_t=" << r.n_t << " failed: " << *r.error << '\n';
    }
  }
  return kOk;
}

// --- convergence -----------------------------------------------------------

struct ConvergenceArgs {
  std::string scheme = "rk4";
  std::string n_t_list = "8,16,32,64";
};

int run_convergence(const ConvergenceArgs& a, const Common&) {
  const auto id = parse_scheme(a.scheme);
  if (!id) throw UsageError("unknown scheme '" + a.scheme + "' (euler, midpoint or rk4)");
  const std::vector<std::size_t> steps = parse_list<std::size_t>(a.n_t_list, "--n-t-list", to_size);
  if (steps.size() < 2) throw UsageError("--n-t-list needs at least two entries");
  const ButcherTableau tab = make_tableau(*id);
  const Rhs<double> f = [](double, const double& y) { return y; };

  std::vector<double> log_n;
  std::vector<double> log_err;
  std::cout << "n_t,error,order\n";
  double prev_err = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] == 0) throw UsageError("--n-t-list entries must be positive");
    const double err = std::abs(integrate<double>(f, tab, 1.0, 1.0, steps[i]) - std::exp(1.0));
    std::cout << steps[i] << ',' << err << ',';
    if (i > 0) {
      std::cout << std::log(prev_err / err) / std::log(static_cast<double>(steps[i]) / steps[i - 1]);
    }
    std::cout << '\n';
    prev_err = err;
    log_n.push_back(std::log(static_cast<double>(steps[i])));
    log_err.push_back(std::log(err));
  }
  // Least-squares slope of log(error) against log(N_T), sign flipped.
  const double mx = std::accumulate(log_n.begin(), log_n.end(), 0.0) / log_n.size();
  const double my = std::accumulate(log_err.begin(), log_err.end(), 0.0) / log_err.size();
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    sxy += (log_n[i] - mx) * (log_err[i] - my);
    sxx += (log_n[i] - mx) * (log_n[i] - mx);
  }
  std::cout << "slope," << -sxy / sxx << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Basis-function ODE-Nets: training, data-free compression and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "override every seed");
  app.add_flag("--quiet", common.quiet, "suppress progress output");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON run config");
  train_cmd->add_option("config", train_args.config, "run config (JSON)")->required();
  train_cmd->add_option("--out,-o", train_args.out, "checkpoint path (default from config)");
  train_cmd->add_option("--metrics", train_args.metrics, "metrics CSV path (default from config)");

  CompressArgs compress_args;
  auto* compress_cmd = app.add_subcommand("compress", "change basis and/or step count, no data needed");
  compress_cmd->add_option("checkpoint", compress_args.in, "source checkpoint")->required();
  compress_cmd->add_option("--k", compress_args.k, "target number of basis functions");
  compress_cmd->add_option("--family", compress_args.family, "piecewise_constant or piecewise_linear");
  compress_cmd->add_option("--method", compress_args.method, "interpolate or project");
  compress_cmd->add_option("--n-t", compress_args.n_t, "new number of integration steps");
  compress_cmd->add_option("--out,-o", compress_args.out, "output checkpoint")->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval_args.checkpoint, "checkpoint")->required();
  add_dataset_options(eval_cmd, eval_args.data);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "compression-accuracy sweep to CSV");
  sweep_cmd->add_option("checkpoint", sweep_args.checkpoint, "checkpoint")->required();
  add_dataset_options(sweep_cmd, sweep_args.data);
  sweep_cmd->add_option("--k-list", sweep_args.k_list, "comma-separated target K values")->required();
  sweep_cmd->add_option("--n-t-list", sweep_args.n_t_list, "comma-separated step counts (default: source)");
  sweep_cmd->add_option("--methods", sweep_args.methods, "comma-separated: interpolate, project");
  sweep_cmd->add_option("--family", sweep_args.family, "target family (default: source)");
  sweep_cmd->add_option("--repeats", sweep_args.repeats, "timing repetitions per row");
  sweep_cmd->add_option("--out,-o", sweep_args.out, "output CSV (default stdout)");

  ConvergenceArgs conv_args;
  auto* conv_cmd = app.add_subcommand("convergence", "measured order of accuracy on y' = y");
  conv_cmd->add_option("--scheme", conv_args.scheme, "euler, midpoint or rk4");
  conv_cmd->add_option("--n-t-list", conv_args.n_t_list, "comma-separated step counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*train_cmd) return run_train(train_args, common);
    if (*compress_cmd) return run_compress(compress_args, common);
    if (*eval_cmd) return run_eval(eval_args, common);
    if (*sweep_cmd) return run_sweep(sweep_args, common);
    if (*conv_cmd) return run_convergence(conv_args, common);
  } catch (const UsageError& e) {
    std::cerr << "odenet: " << e.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "odenet: " << e.what() << '\n';
    return kUsageError;
  } catch (const FormatError& e) {
    std::cerr << "odenet: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "odenet: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}
