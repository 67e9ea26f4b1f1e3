#pragma once

// Explicit Runge-Kutta schemes and a fixed-step driver.
//
// The driver is generic over the state type: anything with `x + y`,
// `double * x` and an `all_finite(x)` overload found by ADL works (double,
// std::valarray<double>, ad::Var).

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <valarray>
#include <vector>

#include "odenet/errors.hpp"

namespace odenet {

enum class SchemeId { Euler, Midpoint, RK4 };

std::string_view to_string(SchemeId id);
std::optional<SchemeId> parse_scheme(std::string_view name);

struct ButcherTableau {
  std::size_t stages = 0;
  std::vector<double> a;  // stages x stages, row-major, strictly lower triangular
  std::vector<double> b;
  std::vector<double> c;
  int order = 0;

  double coeff(std::size_t i, std::size_t j) const { return a[i * stages + j]; }
  /// Throws ConfigError unless sum(b) = 1, c_i = sum_j a_ij and a is strictly lower.
  void validate() const;
};

ButcherTableau make_tableau(SchemeId id);

inline bool all_finite(double x) { return std::isfinite(x); }
inline bool all_finite(const std::valarray<double>& x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class State>
struct StageRecord {
  std::size_t step = 0;
  std::size_t stage = 0;
  double t = 0.0;
  State x;
  State k;
};

template <class State>
using Rhs = std::function<State(double t, const State& x)>;

template <class State>
using StageHook = std::function<void(const StageRecord<State>&)>;

/// Stage time of stage `i` in step `n` with N steps over [0, T]; computed
/// from (n + c_i) rather than accumulated so the last stage hits T exactly.
inline double stage_time(double t_final, std::size_t n_steps, std::size_t n, double c) {
  return t_final * (static_cast<double>(n) + c) / static_cast<double>(n_steps);
}

template <class State>
struct StepResult {
  State x_next;
  std::vector<StageRecord<State>> stages;
};

namespace detail {

template <class State>
StepResult<State> rk_step_impl(const Rhs<State>& f, const ButcherTableau& tab, double t,
                               double dt, const State& x, std::size_t step,
                               const std::vector<double>& stage_times) {
  StepResult<State> out;
  out.stages.reserve(tab.stages);
  for (std::size_t i = 0; i < tab.stages; ++i) {
    State xi = x;
    for (std::size_t j = 0; j < i; ++j) {
      const double aij = tab.coeff(i, j);
      if (aij != 0.0) xi = xi + (dt * aij) * out.stages[j].k;
    }
    const double ti = stage_times.empty() ? t + tab.c[i] * dt : stage_times[i];
    State ki = f(ti, xi);
    if (!all_finite(ki)) {
      throw DivergenceError(ti, i,
                            "non-finite derivative at t = " + std::to_string(ti) + ", stage " +
                                std::to_string(i));
    }
    out.stages.push_back(StageRecord<State>{step, i, ti, std::move(xi), std::move(ki)});
  }
  State next = x;
  for (std::size_t i = 0; i < tab.stages; ++i) {
    if (tab.b[i] != 0.0) next = next + (dt * tab.b[i]) * out.stages[i].k;
  }
  out.x_next = std::move(next);
  return out;
}

}  // namespace detail

/// One explicit RK step: x_i = x + dt sum_j a_ij k_j, k_i = f(t + c_i dt, x_i),
/// x_next = x + dt sum_i b_i k_i. Stage records come back in stage order.
template <class State>
StepResult<State> rk_step(const Rhs<State>& f, const ButcherTableau& tab, double t, double dt,
                          const State& x) {
  if (!(dt > 0.0)) throw ConfigError("rk_step: step size must be positive");
  return detail::rk_step_impl<State>(f, tab, t, dt, x, 0, {});
}

/// Apply N_T steps of size T / N_T from t = 0, calling `hook` on every stage.
template <class State>
State integrate(const Rhs<State>& f, const ButcherTableau& tab, const State& x0, double t_final,
                std::size_t n_steps, const StageHook<State>& hook = nullptr) {
  if (n_steps < 1) throw ConfigError("integrate: need at least one step");
  if (!(t_final > 0.0)) throw ConfigError("integrate: final time must be positive");
  const double dt = t_final / static_cast<double>(n_steps);
  State x = x0;
  std::vector<double> times(tab.stages);
  for (std::size_t n = 0; n < n_steps; ++n) {
    for (std::size_t i = 0; i < tab.stages; ++i) times[i] = stage_time(t_final, n_steps, n, tab.c[i]);
    StepResult<State> r =
        detail::rk_step_impl<State>(f, tab, stage_time(t_final, n_steps, n, 0.0), dt, x, n, times);
    if (hook) {
      for (const auto& rec : r.stages) hook(rec);
    }
    x = std::move(r.x_next);
  }
  return x;
}

}  // namespace odenet
