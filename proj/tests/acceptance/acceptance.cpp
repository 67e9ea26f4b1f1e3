// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Trained two-spirals models are shared between criteria 6-9 and 11.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "odenet/basis.hpp"
#include "odenet/checkpoint.hpp"
#include "odenet/compress.hpp"
#include "odenet/config.hpp"
#include "odenet/integrate.hpp"
#include "odenet/odeblock.hpp"
#include "odenet/train.hpp"
#include "reference_resnet.hpp"
#include "test_util.hpp"

using namespace odenet;
using testutil::block_config;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kSeeds = 5;

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + num(x);
  return "[" + s + "]";
}

// Collects sub-check failures and measured values for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 4) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool passed() const { return !failed_; }
  std::string detail() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + std::string("failed: ") + f;
    return s;
  }

 private:
  std::vector<std::string> notes_;
  std::vector<std::string> failures_;
  bool failed_ = false;
};

class Suite {
 public:
  void run(int id, const std::string& title, double limit_seconds, const std::function<void(Checks&)>& body) {
    Checks c;
    const auto start = std::chrono::steady_clock::now();
    try {
      body(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit_seconds > 0) c.expect(secs < limit_seconds, "runtime " + num(secs) + " s over " + num(limit_seconds) + " s");
    failed_ += !c.passed();
    std::cout << (c.passed() ? "[PASS]" : "[FAIL]") << " criterion " << id << " " << title << ": " << c.detail()
              << " (" << num(secs, 3) << " s)" << std::endl;
  }
  int failed() const { return failed_; }

 private:
  int failed_ = 0;
};

Tensor random_coeffs(std::size_t k, std::size_t p, std::uint64_t seed) { return random_tensor({k, p}, seed); }

const std::vector<BasisSpec>& basis_zoo() {
  static const std::vector<BasisSpec> zoo = {
      {BasisFamily::PiecewiseConstant, 1, 1.7}, {BasisFamily::PiecewiseConstant, 3, 1.7},
      {BasisFamily::PiecewiseConstant, 8, 1.7}, {BasisFamily::PiecewiseLinear, 1, 1.7},
      {BasisFamily::PiecewiseLinear, 2, 1.7},   {BasisFamily::PiecewiseLinear, 5, 1.7},
      {BasisFamily::PiecewiseLinear, 9, 1.7}};
  return zoo;
}

double max_diff_on_grid(const WeightFunction& a, const WeightFunction& b, double t_final) {
  double m = 0.0;
  for (int i = 0; i <= 200; ++i) m = std::max(m, max_abs_diff(a(t_final * i / 200.0), b(t_final * i / 200.0)));
  return m;
}

// ---------------------------------------------------------------------------

void basis_algebra(Checks& c) {
  double pou = 0.0, idem = 0.0, lin = 0.0, orth = 0.0, interp = 0.0, round_trip = 0.0;
  for (const BasisSpec& b : basis_zoo()) {
    for (int i = 0; i <= 340; ++i) {
      const auto phi = basis_eval(b, b.t_final * i / 340.0);
      pou = std::max(pou, std::abs(std::accumulate(phi.begin(), phi.end(), 0.0) - 1.0));
    }
  }
  std::uint64_t seed = 1;
  for (const BasisSpec& src : basis_zoo()) {
    for (const BasisSpec& dst : basis_zoo()) {
      const WeightFunction f(src, random_coeffs(src.k, 3, ++seed));
      const WeightFunction g(src, random_coeffs(src.k, 3, ++seed));
      const WeightFunction pf = project(f, dst);
      idem = std::max(idem, max_abs_diff(project(pf, dst).coeffs(), pf.coeffs()));

      Tensor combo(f.coeffs().shape());
      for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = 2.5 * f.coeffs()[i] - 0.75 * g.coeffs()[i];
      const Tensor lhs = project(WeightFunction(src, combo), dst).coeffs();
      const Tensor pg = project(g, dst).coeffs();
      for (std::size_t i = 0; i < lhs.size(); ++i) {
        lin = std::max(lin, std::abs(lhs[i] - (2.5 * pf.coeffs()[i] - 0.75 * pg[i])));
      }

      for (std::size_t col = 0; col < 3; ++col) {
        std::vector<double> cf(src.k), cp(dst.k);
        for (std::size_t r = 0; r < src.k; ++r) cf[r] = f.coeffs().row(r)[col];
        for (std::size_t r = 0; r < dst.k; ++r) cp[r] = pf.coeffs().row(r)[col];
        for (std::size_t j = 0; j < dst.k; ++j) {
          std::vector<double> e(dst.k, 0.0);
          e[j] = 1.0;
          orth = std::max(orth, std::abs(quadrature_inner_product(src, cf, dst, e) -
                                         quadrature_inner_product(dst, cp, dst, e)));
        }
      }

      const WeightFunction fi = interpolate(f, dst);
      for (double t : control_points(dst)) interp = std::max(interp, max_abs_diff(f(t), fi(t)));
    }
    if (src.family == BasisFamily::PiecewiseConstant) {
      const WeightFunction f(src, random_coeffs(src.k, 4, ++seed));
      const BasisSpec fine{src.family, 2 * src.k, src.t_final};
      const WeightFunction up = interpolate(f, fine);
      interp = std::max(interp, max_diff_on_grid(f, up, src.t_final));
      round_trip = std::max(round_trip, max_abs_diff(project(up, src).coeffs(), f.coeffs()));
    }
  }
  const std::vector<std::pair<std::string, double>> errs = {
      {"partition of unity", pou},  {"idempotence", idem},     {"linearity", lin},
      {"orthogonality", orth},      {"interpolation", interp}, {"pc K->2K->K", round_trip}};
  for (const auto& [name, e] : errs) {
    c.note(name + " " + num(e, 2));
    c.expect(e <= 1e-9, name + " error " + num(e, 3));
  }
}

void projection_oracle(Checks& c) {
  // Step function 1,2,3,4 on quarters of [0,1]; the oracle integrates it
  // exactly over each half and divides by the cell width.
  const BasisSpec pc4{BasisFamily::PiecewiseConstant, 4, 1.0};
  const BasisSpec pc2{BasisFamily::PiecewiseConstant, 2, 1.0};
  const std::vector<double> steps{1, 2, 3, 4};
  std::vector<double> oracle1;
  for (int cell = 0; cell < 2; ++cell) {
    double integral = 0.0;
    for (int q = 0; q < 4; ++q) {
      const double lo = std::max(q * 0.25, cell * 0.5), hi = std::min((q + 1) * 0.25, (cell + 1) * 0.5);
      if (hi > lo) integral += steps[q] * (hi - lo);
    }
    oracle1.push_back(integral / 0.5);
  }
  // f(t) = t, written as hats with control values 0, 0.5, 1.
  const BasisSpec pl3{BasisFamily::PiecewiseLinear, 3, 1.0};
  std::vector<double> oracle2;
  for (int cell = 0; cell < 2; ++cell) {
    const double a = cell * 0.5, b = a + 0.5;
    oracle2.push_back((b * b - a * a) / 2 / (b - a));
  }

  const Tensor got1 = project(WeightFunction(pc4, Tensor({4, 1}, steps)), pc2).coeffs();
  const Tensor got2 = project(WeightFunction(pl3, Tensor({3, 1}, {0.0, 0.5, 1.0})), pc2).coeffs();
  const Tensor via_matrix = apply_transfer(projection_matrix(pc4, pc2), Tensor({4, 1}, steps));
  double err = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    err = std::max({err, std::abs(got1[i] - oracle1[i]), std::abs(got2[i] - oracle2[i]),
                    std::abs(via_matrix[i] - oracle1[i])});
  }
  c.note("step -> {" + num(got1[0], 12) + ", " + num(got1[1], 12) + "}");
  c.note("linear -> {" + num(got2[0], 12) + ", " + num(got2[1], 12) + "}");
  c.note("max error " + num(err, 2));
  c.expect(std::abs(oracle1[0] - 1.5) < 1e-15 && std::abs(oracle1[1] - 3.5) < 1e-15, "step oracle");
  c.expect(std::abs(oracle2[0] - 0.25) < 1e-15 && std::abs(oracle2[1] - 0.75) < 1e-15, "linear oracle");
  c.expect(err <= 1e-12, "projection differs from oracle by " + num(err, 3));
}

void rk_order(Checks& c) {
  const Rhs<double> growth = [](double, const double& y) { return y; };
  for (auto id : {SchemeId::Euler, SchemeId::Midpoint, SchemeId::RK4}) {
    const auto tab = make_tableau(id);
    std::vector<double> lx, ly;
    for (std::size_t n = 8; n <= 64; n *= 2) {
      lx.push_back(std::log2(static_cast<double>(n)));
      ly.push_back(std::log2(std::abs(integrate(growth, tab, 1.0, 1.0, n) - std::exp(1.0))));
    }
    const double mx = mean(lx), my = mean(ly);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = -sxy / sxx;
    c.note(std::string(to_string(id)) + " " + num(slope, 4));
    c.expect(std::abs(slope - tab.order) <= 0.2, std::string(to_string(id)) + " slope " + num(slope));
  }
}

struct Coeffs {
  std::vector<Tensor> g;
  std::vector<Tensor> s;
};

Coeffs block_coeffs(const StatefulOdeBlock& block, std::uint64_t seed) {
  Coeffs c;
  std::uint64_t k = seed * 100;
  for (const auto& slot : block.coefficient_layout_g()) {
    Tensor t = random_tensor(slot.shape, ++k, slot.role == ParamRole::Kernel ? 0.4 : 0.2);
    if (slot.role == ParamRole::Scale) {
      for (double& v : t.data()) v += 1.0;
    }
    c.g.push_back(std::move(t));
  }
  for (const auto& slot : block.coefficient_layout_s()) {
    Tensor t = random_tensor(slot.shape, ++k, 0.3);
    if (slot.role == ParamRole::Variance) {
      for (double& v : t.data()) v = 0.5 + v * v;
    }
    c.s.push_back(std::move(t));
  }
  return c;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  const auto s = t.row(r);
  return {s.begin(), s.end()};
}

double max_diff(std::span<const double> a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<ad::Var> as_vars(ad::Tape& tape, const std::vector<Tensor>& ts) {
  std::vector<ad::Var> out;
  for (const Tensor& t : ts) out.push_back(tape.variable(t));
  return out;
}

void resnet_equivalence(Checks& c) {
  const std::size_t d = 8, n_t = 4, batch = 16;
  const auto cfg = block_config(d, SchemeId::Euler, n_t, BasisFamily::PiecewiseConstant, n_t, double(n_t));
  const StatefulOdeBlock block(cfg);
  const Coeffs k = block_coeffs(block, 7);
  const Tensor x0 = random_tensor({batch, d}, 11);
  const Tensor dout = random_tensor({batch, d}, 12);

  ad::Tape tape;
  const auto g = as_vars(tape, k.g);
  const auto out = block.forward_train(tape.variable(x0), g, k.s);
  tape.backward(ad::sum(ad::mul(out.x_out, tape.constant(dout))));

  std::vector<refnet::Layer> layers;
  for (std::size_t n = 0; n < n_t; ++n) {
    refnet::Layer L;
    L.d = d;
    L.bn1_scale = row_of(k.g[0], n);
    L.bn1_bias = row_of(k.g[1], n);
    L.w1 = row_of(k.g[2], n);
    L.b1 = row_of(k.g[3], n);
    L.bn2_scale = row_of(k.g[4], n);
    L.bn2_bias = row_of(k.g[5], n);
    L.w2 = row_of(k.g[6], n);
    L.b2 = row_of(k.g[7], n);
    L.mean1 = row_of(k.s[0], n);
    L.var1 = row_of(k.s[1], n);
    L.mean2 = row_of(k.s[2], n);
    L.var2 = row_of(k.s[3], n);
    layers.push_back(std::move(L));
  }
  const auto ref = refnet::forward(layers, x0.values(), batch, cfg.bn_momentum, cfg.bn_eps);
  const auto ref_grads = refnet::backward(layers, ref, dout.values(), batch);

  const double out_err = max_diff(out.x_out.value().data(), ref.x_out);
  double grad_err = 0.0, state_err = 0.0;
  for (std::size_t n = 0; n < n_t; ++n) {
    const refnet::LayerGrads& G = ref_grads[n];
    const std::vector<const std::vector<double>*> want{&G.bn1_scale, &G.bn1_bias, &G.w1, &G.b1,
                                                       &G.bn2_scale, &G.bn2_bias, &G.w2, &G.b2};
    for (std::size_t i = 0; i < g.size(); ++i) grad_err = std::max(grad_err, max_diff(tape.grad(g[i]).row(n), *want[i]));
    const refnet::Layer& U = ref.updated[n];
    for (const auto& [slot, vals] : {std::pair{0, &U.mean1}, {1, &U.var1}, {2, &U.mean2}, {3, &U.var2}}) {
      state_err = std::max(state_err, max_diff(out.new_state[slot].row(n), *vals));
    }
  }
  c.note("outputs " + num(out_err, 2) + ", gradients " + num(grad_err, 2) + ", running stats " + num(state_err, 2));
  c.expect(out_err <= 1e-8, "outputs");
  c.expect(grad_err <= 1e-8, "gradients");
  c.expect(state_err <= 1e-8, "running statistics");
  c.expect(out.unit_evals == n_t, "unit evaluations");
}

void gradient_suite(Checks& c) {
  constexpr double kTol = 1e-4;
  const auto w = [](ad::Tape& t, const ad::Var& y, std::uint64_t seed) {
    return ad::sum(ad::mul(y, t.constant(random_tensor(y.shape(), seed))));
  };
  const Tensor pos = [] {
    Tensor t = random_tensor({4}, 9);
    for (double& v : t.data()) v = 0.5 + v * v;
    return t;
  }();
  const std::vector<int> labels{0, 2, 1, 2, 0};
  const BasisSupport support = basis_support({BasisFamily::PiecewiseLinear, 3, 1.0}, 0.37);

  struct Primitive {
    std::string name;
    ad::ParamStore params;
    ad::ScalarFn f;
  };
  auto store = [](std::initializer_list<std::pair<const char*, Tensor>> items) {
    ad::ParamStore s;
    for (const auto& [n, t] : items) s.add(n, t);
    return s;
  };
  const std::vector<Primitive> prims = {
      {"add", store({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({3, 4}, 2)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::add(p["a"], p["b"]), 3); }},
      {"sub", store({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({3, 4}, 2)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::sub(p["a"], p["b"]), 3); }},
      {"mul", store({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({3, 4}, 2)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::mul(p["a"], p["b"]), 3); }},
      {"scale", store({{"a", random_tensor({3, 4}, 1)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::scale(p["a"], -1.7), 3); }},
      {"matmul", store({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({4, 2}, 2)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::matmul(p["a"], p["b"]), 3); }},
      {"add_rowwise", store({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({4}, 2)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::add_rowwise(p["a"], p["b"]), 3); }},
      {"mul_rowwise", store({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({4}, 2)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::mul_rowwise(p["a"], p["b"]), 3); }},
      {"relu", store({{"a", random_tensor({3, 4}, 1)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::relu(p["a"]), 3); }},
      {"batch_mean", store({{"a", random_tensor({5, 4}, 1)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::batch_mean(p["a"]), 3); }},
      {"batch_var", store({{"a", random_tensor({5, 4}, 1)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::batch_var(p["a"]), 3); }},
      {"normalize",
       store({{"x", random_tensor({5, 4}, 1)}, {"m", random_tensor({4}, 2)}, {"v", pos},
              {"s", random_tensor({4}, 4)}, {"b", random_tensor({4}, 5)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) {
         return w(t, ad::normalize(p["x"], p["m"], p["v"], p["s"], p["b"], 1e-5), 3);
       }},
      {"softmax_cross_entropy", store({{"z", random_tensor({5, 3}, 1)}}),
       [&](ad::Tape&, const ad::ParamVars& p) { return ad::softmax_cross_entropy(p["z"], labels); }},
      {"sum", store({{"a", random_tensor({3, 4}, 1)}}),
       [&](ad::Tape&, const ad::ParamVars& p) { return ad::sum(ad::mul(p["a"], p["a"])); }},
      {"basis_combine", store({{"c", random_tensor({3, 4}, 1)}}),
       [&](ad::Tape& t, const ad::ParamVars& p) { return w(t, ad::basis_combine(p["c"], support), 3); }},
  };
  double worst_prim = 0.0;
  for (const Primitive& p : prims) {
    const double e = ad::finite_diff_check(p.f, p.params, 1e-6).max_rel_error;
    worst_prim = std::max(worst_prim, e);
    c.expect(e < kTol, p.name + " rel err " + num(e, 3));
  }
  c.note(std::to_string(prims.size()) + " primitives, worst " + num(worst_prim, 2));

  double worst_block = 0.0, worst_zero = 0.0;
  std::size_t blocks = 0;
  for (auto scheme : {SchemeId::Euler, SchemeId::Midpoint, SchemeId::RK4}) {
    for (auto family : {BasisFamily::PiecewiseConstant, BasisFamily::PiecewiseLinear}) {
      for (auto mode : {Mode::Train, Mode::Infer}) {
        const std::size_t k = family == BasisFamily::PiecewiseConstant ? 2 : 3;
        const StatefulOdeBlock block(block_config(3, scheme, 4, family, k, 1.5));
        const Coeffs co = block_coeffs(block, 30);
        const Tensor x0 = random_tensor({5, 3}, 31);
        const Tensor dout = random_tensor({5, 3}, 32);
        const auto layout = block.coefficient_layout_g();
        const bool train = mode == Mode::Train;
        // A bias ahead of a train-mode batch norm has an exactly zero
        // gradient; it is checked for zero instead of by relative error.
        ad::ParamStore params;
        for (std::size_t i = 0; i < layout.size(); ++i) {
          if (!(train && layout[i].name == "dense1/bias")) params.add(layout[i].name, co.g[i]);
        }
        params.add("x", x0);
        const ad::ScalarFn f = [&](ad::Tape& tape, const ad::ParamVars& p) {
          std::vector<ad::Var> g;
          for (std::size_t i = 0; i < layout.size(); ++i) {
            g.push_back(params.contains(layout[i].name) ? p[layout[i].name] : tape.constant(co.g[i]));
          }
          const ad::Var y = train ? block.forward_train(p["x"], g, co.s).x_out : block.forward_infer(p["x"], g, co.s).x_out;
          return ad::sum(ad::mul(y, tape.constant(dout)));
        };
        const double e = ad::finite_diff_check(f, params, 1e-6).max_rel_error;
        worst_block = std::max(worst_block, e);
        ++blocks;
        const std::string tag = std::string(to_string(scheme)) + "/" + std::string(to_string(family)) +
                                (train ? "/train" : "/infer");
        c.expect(e < kTol, tag + " rel err " + num(e, 3));
        if (train) {
          ad::Tape tape;
          const auto g = as_vars(tape, co.g);
          const auto out = block.forward_train(tape.constant(x0), g, co.s);
          tape.backward(ad::sum(ad::mul(out.x_out, tape.constant(dout))));
          const Tensor bias_grad = tape.grad(g[3]);
          for (double v : bias_grad.data()) worst_zero = std::max(worst_zero, std::abs(v));
        }
      }
    }
  }
  c.note(std::to_string(blocks) + " blocks, worst " + num(worst_block, 2));
  c.expect(worst_zero <= 1e-12, "bias before batch norm has gradient " + num(worst_zero, 3));
}

// ---------------------------------------------------------------------------
// Shared two-spirals models.

enum class Variant { RefinedRk4, DirectRk4, RefinedEuler };

struct Trained {
  std::vector<Model> models;
  std::vector<Dataset> tests;
  std::vector<double> accuracy;
  std::vector<std::string> problems;
};

Trained train_spirals(Variant variant) {
  Trained out;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    RunConfig rc = load_run_config(fs::path(ODENET_SOURCE_DIR) / "configs" / "two_spirals.json");
    set_seed(rc, seed);
    BlockConfig& b = rc.model.blocks.at(0);
    if (variant == Variant::RefinedEuler) b.scheme = SchemeId::Euler;
    if (variant == Variant::DirectRk4) {
      b.basis_g.k = b.basis_s.k = 8;
      b.n_steps = 8;
      rc.train.refinement_epochs.clear();
    }
    DataSplit data = load_datasets(rc.dataset, rc.seed);
    TrainResult r = train(init_params(rc.model, rc.seed), data.train, nullptr, rc.train);
    if (r.divergence) out.problems.push_back("seed " + std::to_string(seed) + " diverged: " + *r.divergence);
    out.accuracy.push_back(evaluate_model(r.model, data.test).accuracy);
    out.models.push_back(std::move(r.model));
    out.tests.push_back(std::move(data.test));
  }
  return out;
}

Model compressed(const Model& m, std::size_t k, std::optional<std::size_t> n_t = std::nullopt) {
  Checkpoint ck = compress_checkpoint(Checkpoint{m, {}}, k, m.config().blocks[0].basis_g.family, TransferMethod::Project);
  if (n_t) ck = shorten_graph(ck, *n_t).ckpt;
  return std::move(ck.model);
}

void refinement(Checks& c, const Trained& refined, const Trained& direct) {
  double logit_err = 0.0, doubled_err = 0.0;
  for (auto family : {BasisFamily::PiecewiseConstant, BasisFamily::PiecewiseLinear}) {
    for (std::size_t k : {1u, 2u, 3u, 4u}) {
      ModelConfig cfg = testutil::model_config(2, 2, {block_config(6, SchemeId::RK4, 4, family, k)});
      Model m = init_params(cfg, 40 + k);
      std::uint64_t s = 500 + k;
      for (const auto& [name, t] : m.params_g()) {
        if (name.starts_with("block")) {
          Tensor& w = m.mutable_params_g()[name];
          w = random_tensor(t.shape(), ++s, 0.3);
        }
      }
      for (const auto& [name, t] : m.params_s()) {
        Tensor& w = m.mutable_params_s()[name];
        w = random_tensor(t.shape(), ++s, 0.3);
        if (name.ends_with("var")) for (double& v : w.data()) v = 0.5 + v * v;
      }
      const Model r = refine(m);
      c.expect(r.config().blocks[0].basis_g.k == next_k(family, k), "next_k not applied");
      // Same integration grid as the original: the change of basis alone.
      const BlockConfig& rb = r.config().blocks[0];
      const Model same_grid = rebase_model(m, {rb.basis_g}, {rb.basis_s}, TransferMethod::Interpolate);
      const Tensor x = random_tensor({32, 2}, 77);
      const Tensor before = predict_logits(m, x);
      logit_err = std::max(logit_err, max_abs_diff(before, predict_logits(same_grid, x)));
      doubled_err = std::max(doubled_err, max_abs_diff(before, predict_logits(r, x)));
    }
  }
  c.note("logit change under refinement " + num(logit_err, 2));
  c.note("with N_T doubled " + num(doubled_err, 2));
  c.expect(logit_err <= 1e-10, "logits changed by " + num(logit_err, 3));

  for (const auto& p : refined.problems) c.expect(false, "refined " + p);
  for (const auto& p : direct.problems) c.expect(false, "direct " + p);
  const double gap = 100.0 * (mean(direct.accuracy) - mean(refined.accuracy));
  c.note("refined " + list(refined.accuracy) + " mean " + num(mean(refined.accuracy)));
  c.note("direct K=8 " + list(direct.accuracy) + " mean " + num(mean(direct.accuracy)));
  c.expect(gap <= 2.0, "refined trails direct by " + num(gap) + " points");
  for (const Model& m : refined.models) {
    c.expect(m.config().blocks[0].basis_g.k == 8 && m.config().blocks[0].n_steps == 8, "refined model is not K=8");
  }
}

void compression(Checks& c, const Trained& rk4) {
  for (const auto& p : rk4.problems) c.expect(false, p);
  std::vector<double> after, drop;
  for (std::size_t s = 0; s < rk4.models.size(); ++s) {
    const Model& m = rk4.models[s];
    const Model small = compressed(m, 4, 4);
    c.expect(small.config().blocks[0].basis_g.k == 4 && small.config().blocks[0].n_steps == 4, "target shape");
    c.expect(2 * small.basis_borne_parameter_count() == m.basis_borne_parameter_count(),
             "basis-borne count " + std::to_string(small.basis_borne_parameter_count()) + " vs " +
                 std::to_string(m.basis_borne_parameter_count()));
    after.push_back(evaluate_model(small, rk4.tests[s]).accuracy);
    drop.push_back(100.0 * (rk4.accuracy[s] - after.back()));
  }
  c.note("trained " + list(rk4.accuracy) + " mean " + num(mean(rk4.accuracy)));
  c.note("K=4,N_T=4 " + list(after) + " mean " + num(mean(after)));
  c.note("mean drop " + num(mean(drop)) + " points");
  c.expect(mean(rk4.accuracy) >= 0.97, "trained accuracy below 97%");
  c.expect(mean(drop) <= 3.0, "compression loses " + num(mean(drop)) + " points");
}

void scheme_trend(Checks& c, const Trained& rk4, const Trained& euler) {
  for (const auto& p : euler.problems) c.expect(false, "euler " + p);
  for (std::size_t k : {8u, 4u, 2u}) {
    std::vector<double> a_rk4, a_euler;
    for (std::size_t s = 0; s < kSeeds; ++s) {
      a_rk4.push_back(k == 8 ? rk4.accuracy[s] : evaluate_model(compressed(rk4.models[s], k), rk4.tests[s]).accuracy);
      a_euler.push_back(k == 8 ? euler.accuracy[s]
                               : evaluate_model(compressed(euler.models[s], k), euler.tests[s]).accuracy);
    }
    c.note("K=" + std::to_string(k) + " rk4 " + num(mean(a_rk4)) + " euler " + num(mean(a_euler)));
    if (k < 8) {
      c.expect(mean(a_rk4) > mean(a_euler), "rk4 does not dominate at K=" + std::to_string(k));
    }
  }
}

void graph_shortening(Checks& c, const Trained& rk4) {
  std::vector<double> change;
  for (std::size_t s = 0; s < rk4.models.size(); ++s) {
    const Model& m = rk4.models[s];
    const Checkpoint shortened = shorten_graph(Checkpoint{m, {}}, m.config().blocks[0].n_steps / 2).ckpt;
    const EvalResult full = evaluate_model(m, rk4.tests[s]);
    const EvalResult half = evaluate_model(shortened.model, rk4.tests[s]);
    c.expect(shortened.model.params_g() == m.params_g(), "parameters changed");
    c.expect(2 * half.unit_evals == full.unit_evals,
             "unit evals " + std::to_string(half.unit_evals) + " vs " + std::to_string(full.unit_evals));
    change.push_back(100.0 * (half.accuracy - full.accuracy));
  }
  c.note("unit evals halved; accuracy change " + list(change) + " points, mean " + num(mean(change)));
  c.expect(std::abs(mean(change)) <= 2.0, "accuracy moves " + num(mean(change)) + " points");
}

void mnist_smoke(Checks& c) {
  RunConfig rc = load_run_config(fs::path(ODENET_SOURCE_DIR) / "configs" / "mnist_subset.json");
  const DataSplit data = load_datasets(rc.dataset, rc.seed);
  c.note(std::to_string(data.train.size()) + " train / " + std::to_string(data.test.size()) + " test");
  c.expect(data.train.size() == 4096, "training set size");
  // The bundled subset is cut from a 5000-image extract, so 904 images remain
  // for testing rather than 1024.
  TrainResult r = train(init_params(rc.model, rc.seed), data.train, nullptr, rc.train);
  if (r.divergence) c.expect(false, "diverged: " + *r.divergence);
  const double acc = evaluate_model(r.model, data.test).accuracy;
  const std::size_t k = r.model.config().blocks[0].basis_g.k;
  const double small = evaluate_model(compressed(r.model, 4), data.test).accuracy;
  c.note("K=" + std::to_string(k) + " accuracy " + num(acc) + ", K=4 projection " + num(small));
  c.expect(k == 8, "final K is " + std::to_string(k));
  c.expect(acc >= 0.93, "accuracy below 93%");
  c.expect(100.0 * (acc - small) <= 3.0, "projection loses " + num(100.0 * (acc - small)) + " points");
}

int run_cli(const std::string& args, std::string& out) {
  const std::string cmd = std::string(ODENET_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void serialization(Checks& c, const Trained& rk4) {
  const fs::path dir = fs::temp_directory_path() / "odenet_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Checkpoint ck{rk4.models.at(0), {}};
  ck.meta.epochs = 200;
  ck.meta.seed = 0;
  const std::string text = checkpoint_to_json(ck);
  const Checkpoint back = checkpoint_from_json(text);
  c.expect(back == ck, "in-memory round trip differs");
  c.expect(checkpoint_to_json(back) == text, "re-serialized text differs");
  save_checkpoint(ck, dir / "model.json");
  const Checkpoint loaded = load_checkpoint(dir / "model.json");
  bool bits = loaded == ck;
  for (std::size_t i = 0; i < ck.model.params_g().size() && bits; ++i) {
    const Tensor& a = ck.model.params_g().at(i);
    const Tensor& b = loaded.model.params_g().at(i);
    bits = std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
  }
  c.expect(bits, "file round trip is not bit-exact");
  c.note("round trip bit-exact, hash " + checkpoint_hash(loaded));

  // Run from an empty directory with only the checkpoint and no data flags.
  std::string out;
  const int code = run_cli("compress " + (dir / "model.json").string() + " --k 4 --method project --out " +
                               (dir / "small.json").string(),
                           out);
  c.expect(code == 0, "compress exited " + std::to_string(code) + ": " + out);
  if (code == 0) {
    const Checkpoint small = load_checkpoint(dir / "small.json");
    c.expect(small.model.config().blocks[0].basis_g.k == 4, "compressed K");
    c.expect(!small.meta.provenance.empty() && small.meta.provenance.back().source_hash == checkpoint_hash(ck),
             "provenance");
    c.note("CLI compress without data: K 8 -> 4, " + std::to_string(small.model.parameter_count()) + " parameters");
  }
  fs::remove_all(dir);
}

}  // namespace

int main() {
  Suite suite;
  suite.run(1, "basis algebra", 10, basis_algebra);
  suite.run(2, "projection oracle", 0, projection_oracle);
  suite.run(3, "RK order slopes", 5, rk_order);
  suite.run(4, "ResNet equivalence", 10, resnet_equivalence);
  suite.run(5, "gradient suite", 60, gradient_suite);

  Trained refined, direct, euler;
  suite.run(6, "refinement", 600, [&](Checks& c) {
    refined = train_spirals(Variant::RefinedRk4);
    direct = train_spirals(Variant::DirectRk4);
    refinement(c, refined, direct);
  });
  suite.run(7, "data-free compression", 900, [&](Checks& c) { compression(c, refined); });
  suite.run(8, "RK4 vs Euler compression trend", 1800, [&](Checks& c) {
    euler = train_spirals(Variant::RefinedEuler);
    scheme_trend(c, refined, euler);
  });
  suite.run(9, "graph shortening", 0, [&](Checks& c) { graph_shortening(c, refined); });
  suite.run(10, "MNIST subset", 1800, mnist_smoke);
  suite.run(11, "serialization", 0, [&](Checks& c) { serialization(c, refined); });

  std::cout << (suite.failed() == 0 ? "all criteria passed" : std::to_string(suite.failed()) + " criteria failed")
            << std::endl;
  return suite.failed() == 0 ? 0 : 1;
}
