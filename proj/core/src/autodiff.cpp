#include "odenet/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "odenet/errors.hpp"

namespace odenet::ad {
namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

void require_row_vector(const char* op, const Var& x, const Var& v) {
  require_rank(op, x, 2);
  if (v.value().rank() != 1 || v.shape()[0] != x.shape()[1]) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(x.shape()) + " vs " +
                     shape_string(v.shape()));
  }
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr, record_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, Backward backward) {
#ifdef ODENET_CHECKED_MATH
  if (!value.all_finite()) throw DivergenceError(NAN, 0, "non-finite value recorded on tape");
#endif
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) needs = needs || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& output) {
  if (output.tape_ != this) throw ContractError("backward: variable belongs to another tape");
  if (nodes_[output.id_].value.size() != 1) {
    throw ContractError("backward: output must be a scalar, got shape " +
                        shape_string(nodes_[output.id_].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[output.id_].requires_grad) return;
  nodes_[output.id_].grad = Tensor(nodes_[output.id_].value.shape(), 1.0);
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id_];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) { accumulate_scaled(v, g, 1.0); }

void Tape::accumulate_scaled(const Var& v, const Tensor& g, double scale) {
  if (!nodes_[v.id_].requires_grad) return;
  Tensor& dst = grad_buffer(v);
  auto d = dst.data();
  const auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate_scaled(b, g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto gv = g.data();
    if (t.requires_grad(a)) {
      auto ga = t.grad_buffer(a).data();
      const auto bv = b.value().data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad_buffer(b).data();
      const auto av = a.value().data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gv[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return a.tape().push(std::move(out), {a},
                       [a, c](Tape& t, const Tensor& g) { t.accumulate_scaled(a, g, c); });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.shape()[0];
  const std::size_t m = a.shape()[1];
  const std::size_t k = b.shape()[1];
  if (b.shape()[0] != m) {
    throw ShapeError("matmul: shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out(Shape{n, k});
  {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = &o[i * k];
      for (std::size_t p = 0; p < m; ++p) {
        const double aip = av[i * m + p];
        if (aip == 0.0) continue;
        const double* brow = &bv[p * k];
        for (std::size_t j = 0; j < k; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  return a.tape().push(std::move(out), {a, b}, [a, b, n, m, k](Tape& t, const Tensor& g) {
    const auto gv = g.data();
    if (t.requires_grad(a)) {
      auto ga = t.grad_buffer(a).data();
      const auto bv = b.value().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = &gv[i * k];
        for (std::size_t p = 0; p < m; ++p) {
          const double* brow = &bv[p * k];
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += grow[j] * brow[j];
          ga[i * m + p] += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad_buffer(b).data();
      const auto av = a.value().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = &gv[i * k];
        for (std::size_t p = 0; p < m; ++p) {
          const double aip = av[i * m + p];
          if (aip == 0.0) continue;
          double* gbrow = &gb[p * k];
          for (std::size_t j = 0; j < k; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Var add_rowwise(const Var& x, const Var& b) {
  require_row_vector("add_rowwise", x, b);
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  Tensor out = x.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) += bv[j];
  }
  return x.tape().push(std::move(out), {x, b}, [x, b, n, d](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (t.requires_grad(b)) {
      auto gb = t.grad_buffer(b).data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
      }
    }
  });
}

Var mul_rowwise(const Var& x, const Var& s) {
  require_row_vector("mul_rowwise", x, s);
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  Tensor out = x.value();
  const auto sv = s.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) *= sv[j];
  }
  return x.tape().push(std::move(out), {x, s}, [x, s, n, d](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      const auto sv = s.value().data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += g.at(i, j) * sv[j];
      }
    }
    if (t.requires_grad(s)) {
      auto gs = t.grad_buffer(s).data();
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gs[j] += g.at(i, j) * xv.at(i, j);
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(x).data();
    const auto xv = x.value().data();
    const auto gv = g.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gv[i];
    }
  });
}

Var batch_mean(const Var& x) {
  require_rank("batch_mean", x, 2);
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  if (n == 0) throw ShapeError("batch_mean: empty batch");
  Tensor out(Shape{d});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += xv.at(i, j);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out.data()) v *= inv;
  return x.tape().push(std::move(out), {x}, [x, n, d, inv](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += g[j] * inv;
    }
  });
}

Var batch_var(const Var& x) {
  require_rank("batch_var", x, 2);
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  if (n == 0) throw ShapeError("batch_var: empty batch");
  const Tensor& xv = x.value();
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += xv.at(i, j);
  }
  for (double& m : mean) m *= inv;
  Tensor out(Shape{d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv.at(i, j) - mean[j];
      out[j] += c * c;
    }
  }
  for (double& v : out.data()) v *= inv;
  return x.tape().push(std::move(out), {x},
                       [x, n, d, inv, mean = std::move(mean)](Tape& t, const Tensor& g) {
                         Tensor& gx = t.grad_buffer(x);
                         const Tensor& xv = x.value();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < d; ++j) {
                             gx.at(i, j) += g[j] * 2.0 * inv * (xv.at(i, j) - mean[j]);
                           }
                         }
                       });
}

Var normalize(const Var& x, const Var& mean, const Var& var, const Var& scale,
              const Var& bias, double eps) {
  require_row_vector("normalize", x, mean);
  require_row_vector("normalize", x, var);
  require_row_vector("normalize", x, scale);
  require_row_vector("normalize", x, bias);
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var.value()[j] + eps);
  Tensor out(Shape{n, d});
  {
    const Tensor& xv = x.value();
    const auto mv = mean.value().data();
    const auto sv = scale.value().data();
    const auto bv = bias.value().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out.at(i, j) = (xv.at(i, j) - mv[j]) * inv_std[j] * sv[j] + bv[j];
      }
    }
  }
  return x.tape().push(
      std::move(out), {x, mean, var, scale, bias},
      [x, mean, var, scale, bias, n, d, inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& xv = x.value();
        const auto mv = mean.value().data();
        const auto sv = scale.value().data();
        std::vector<double> g_mean(d, 0.0);
        std::vector<double> g_var(d, 0.0);
        std::vector<double> g_scale(d, 0.0);
        std::vector<double> g_bias(d, 0.0);
        const bool want_x = t.requires_grad(x);
        Tensor* gx = want_x ? &t.grad_buffer(x) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            const double gij = g.at(i, j);
            const double centered = xv.at(i, j) - mv[j];
            if (want_x) gx->at(i, j) += gij * inv_std[j] * sv[j];
            g_mean[j] += gij;
            g_var[j] += gij * centered;
            g_scale[j] += gij * centered * inv_std[j];
            g_bias[j] += gij;
          }
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double r = inv_std[j];
          g_var[j] *= -0.5 * sv[j] * r * r * r;
          g_mean[j] *= -r * sv[j];
        }
        t.accumulate(mean, Tensor::vector(std::move(g_mean)));
        t.accumulate(var, Tensor::vector(std::move(g_var)));
        t.accumulate(scale, Tensor::vector(std::move(g_scale)));
        t.accumulate(bias, Tensor::vector(std::move(g_bias)));
      });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t n = logits.shape()[0];
  const std::size_t c = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const Tensor& z = logits.value();
  Tensor probs(Shape{n, c});
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= c) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(lab[i]) +
                       " outside [0, " + std::to_string(c) + ")");
    }
    double zmax = z.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs.at(i, j) = std::exp(z.at(i, j) - zmax);
      denom += probs.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= denom;
    loss += -(z.at(i, static_cast<std::size_t>(lab[i])) - zmax - std::log(denom));
  }
  const double inv = 1.0 / static_cast<double>(n);
  return logits.tape().push(
      Tensor::scalar(loss * inv), {logits},
      [logits, n, c, inv, probs = std::move(probs), lab = std::move(lab)](Tape& t,
                                                                          const Tensor& g) {
        Tensor& gz = t.grad_buffer(logits);
        const double s = g[0] * inv;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
            gz.at(i, j) += s * (probs.at(i, j) - onehot);
          }
        }
      });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().push(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    for (double& v : t.grad_buffer(x).data()) v += g[0];
  });
}

Var basis_combine(const Var& coeffs, const BasisSupport& support) {
  const Tensor& c = coeffs.value();
  if (c.rank() < 1) throw ShapeError("basis_combine: coefficients need a leading K axis");
  Tensor out(Shape(c.shape().begin() + 1, c.shape().end()));
  auto o = out.data();
  for (std::size_t s = 0; s < support.count; ++s) {
    if (support.index[s] >= c.dim(0)) {
      throw ShapeError("basis_combine: index " + std::to_string(support.index[s]) +
                       " outside coefficients " + shape_string(c.shape()));
    }
    const auto row = c.row(support.index[s]);
    const double w = support.weight[s];
    for (std::size_t p = 0; p < o.size(); ++p) o[p] += w * row[p];
  }
  return coeffs.tape().push(std::move(out), {coeffs}, [coeffs, support](Tape& t, const Tensor& g) {
    Tensor& gc = t.grad_buffer(coeffs);
    const auto gv = g.data();
    for (std::size_t s = 0; s < support.count; ++s) {
      auto row = gc.row(support.index[s]);
      const double w = support.weight[s];
      for (std::size_t p = 0; p < row.size(); ++p) row[p] += w * gv[p];
    }
  });
}

bool all_finite(const Var& v) { return v.value().all_finite(); }

// ---------------------------------------------------------------------------

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamStore::contains(const std::string& name) const { return index_.contains(name); }

std::size_t ParamStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::operator[](const std::string& name) { return entries_[index_of(name)].second; }

const Tensor& ParamStore::operator[](const std::string& name) const {
  return entries_[index_of(name)].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

ParamVars::ParamVars(Tape& tape, const ParamStore& store, bool differentiable) : store_(&store) {
  vars_.reserve(store.size());
  for (const auto& [name, value] : store) {
    vars_.push_back(differentiable ? tape.variable(value) : tape.constant(value));
  }
}

const Var& ParamVars::operator[](const std::string& name) const {
  return vars_[store_->index_of(name)];
}

ValueAndGrad value_and_grad(const ScalarFn& f, const ParamStore& params) {
  Tape tape;
  const ParamVars vars(tape, params);
  const Var out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ContractError("value_and_grad: function must return a scalar, got shape " +
                        shape_string(out.shape()));
  }
  tape.backward(out);
  ValueAndGrad result;
  result.value = out.value()[0];
  for (std::size_t i = 0; i < params.size(); ++i) {
    result.grads.add(params.name(i), tape.grad(vars.at(i)));
  }
  return result;
}

double evaluate(const ScalarFn& f, const ParamStore& params) {
  Tape tape(false);
  const ParamVars vars(tape, params, false);
  const Var out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ContractError("evaluate: function must return a scalar, got shape " +
                        shape_string(out.shape()));
  }
  return out.value()[0];
}

GradCheckReport finite_diff_check(const ScalarFn& f, const ParamStore& params, double step) {
  const ValueAndGrad analytic = value_and_grad(f, params);
  ParamStore probe = params;
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    double worst = 0.0;
    Tensor& p = probe.at(i);
    const Tensor& g = analytic.grads.at(i);
    for (std::size_t e = 0; e < p.size(); ++e) {
      const double orig = p[e];
      p[e] = orig + step;
      const double up = evaluate(f, probe);
      p[e] = orig - step;
      const double down = evaluate(f, probe);
      p[e] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(g[e]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(g[e] - numeric) / denom);
    }
    report.per_param.emplace_back(probe.name(i), worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  return report;
}

}  // namespace odenet::ad
