#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "metflow/common.hpp"
#include "metflow/param_tree.hpp"

namespace metflow::grad {

class Tape;

// Handle to a scalar node on a Tape. A default-constructed or double-initialized
// Var carries no tape and behaves as a constant; binary operations adopt the
// tape of whichever operand has one. This lets Eigen expressions mix recorded
// values with plain literals.
class Var {
 public:
  Var() = default;
  Var(double v) : v_(v) {}  // NOLINT: implicit constant lift
  Var(int v) : v_(static_cast<double>(v)) {}

  double value() const { return v_; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool is_const() const { return tape_ == nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int n, double v) : tape_(t), node_(n), v_(v) {}

  Tape* tape_ = nullptr;
  int node_ = -1;
  double v_ = 0.0;
};

}  // namespace metflow::grad

namespace Eigen {
template <>
struct NumTraits<metflow::grad::Var> : GenericNumTraits<metflow::grad::Var> {
  using Real = metflow::grad::Var;
  using NonInteger = metflow::grad::Var;
  using Nested = metflow::grad::Var;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3,
  };
  static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(NumTraits<double>::dummy_precision()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<metflow::grad::Var, double, BinaryOp> {
  using ReturnType = metflow::grad::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, metflow::grad::Var, BinaryOp> {
  using ReturnType = metflow::grad::Var;
};
}  // namespace Eigen

namespace metflow::grad {

// Flat reverse-mode tape of primitive scalar operations. Each node stores its
// value and the local partials w.r.t. its arguments; backward() is a single
// reverse sweep. Tapes are single-threaded by construction.
class Tape {
 public:
  Var input(double v) { return record(v, {}); }

  Var record(double v, std::initializer_list<std::pair<int, double>> args) {
    const int first = static_cast<int>(arg_node_.size());
    for (const auto& [n, w] : args) {
      arg_node_.push_back(n);
      arg_w_.push_back(w);
    }
    nodes_.push_back({first, static_cast<int>(args.size())});
    val_.push_back(v);
    return Var(this, static_cast<int>(nodes_.size()) - 1, v);
  }

  Var record(double v, const std::vector<std::pair<int, double>>& args) {
    const int first = static_cast<int>(arg_node_.size());
    for (const auto& [n, w] : args) {
      arg_node_.push_back(n);
      arg_w_.push_back(w);
    }
    nodes_.push_back({first, static_cast<int>(args.size())});
    val_.push_back(v);
    return Var(this, static_cast<int>(nodes_.size()) - 1, v);
  }

  // Lift a possibly-constant Var onto this tape.
  Var lift(const Var& x) {
    if (!x.is_const()) return x;
    return input(x.value());
  }

  std::size_t size() const { return nodes_.size(); }
  double value(int node) const { return val_[node]; }

  // Adjoints of every node w.r.t. the given output scalar.
  std::vector<double> backward(const Var& output) const {
    if (output.tape() != this) throw NumericalError("backward: output not on this tape");
    if (!std::isfinite(output.value()))
      throw NumericalError("backward: non-finite output", output.node());
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[output.node()] = 1.0;
    for (int i = output.node(); i >= 0; --i) {
      const double a = adj[i];
      if (a == 0.0) continue;
      if (!std::isfinite(val_[i]))
        throw NumericalError("backward: non-finite intermediate value", i);
      const Node& nd = nodes_[i];
      for (int k = 0; k < nd.n_args; ++k)
        adj[arg_node_[nd.first_arg + k]] += a * arg_w_[nd.first_arg + k];
    }
    return adj;
  }

  // test hook: overwrite one stored partial (used by the mutation test)
  void corrupt_partial(std::size_t arg_slot, double w) { arg_w_.at(arg_slot) = w; }
  std::size_t arg_count() const { return arg_node_.size(); }

 private:
  struct Node {
    int first_arg;
    int n_args;
  };
  std::vector<Node> nodes_;
  std::vector<int> arg_node_;
  std::vector<double> arg_w_;
  std::vector<double> val_;
};

namespace detail {
inline Tape* pick(const Var& a, const Var& b) {
  return a.tape() ? a.tape() : b.tape();
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = detail::pick(a, b);
  if (!t) return Var(a.value() + b.value());
  const Var la = t->lift(a), lb = t->lift(b);
  return t->record(la.value() + lb.value(), {{la.node(), 1.0}, {lb.node(), 1.0}});
}

inline Var operator-(const Var& a, const Var& b) {
  Tape* t = detail::pick(a, b);
  if (!t) return Var(a.value() - b.value());
  const Var la = t->lift(a), lb = t->lift(b);
  return t->record(la.value() - lb.value(), {{la.node(), 1.0}, {lb.node(), -1.0}});
}

inline Var operator-(const Var& a) {
  if (a.is_const()) return Var(-a.value());
  return a.tape()->record(-a.value(), {{a.node(), -1.0}});
}

inline Var operator*(const Var& a, const Var& b) {
  Tape* t = detail::pick(a, b);
  if (!t) return Var(a.value() * b.value());
  const Var la = t->lift(a), lb = t->lift(b);
  return t->record(la.value() * lb.value(), {{la.node(), lb.value()}, {lb.node(), la.value()}});
}

inline Var operator/(const Var& a, const Var& b) {
  Tape* t = detail::pick(a, b);
  if (!t) return Var(a.value() / b.value());
  const Var la = t->lift(a), lb = t->lift(b);
  const double inv = 1.0 / lb.value();
  return t->record(la.value() * inv,
                   {{la.node(), inv}, {lb.node(), -la.value() * inv * inv}});
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }
inline bool operator==(const Var& a, const Var& b) { return a.value() == b.value(); }
inline bool operator!=(const Var& a, const Var& b) { return a.value() != b.value(); }

inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  if (x.is_const()) return Var(e);
  return x.tape()->record(e, {{x.node(), e}});
}

inline Var log(const Var& x) {
  const double l = std::log(x.value());
  if (x.is_const()) return Var(l);
  return x.tape()->record(l, {{x.node(), 1.0 / x.value()}});
}

inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  if (x.is_const()) return Var(s);
  return x.tape()->record(s, {{x.node(), 0.5 / s}});
}

inline Var tanh(const Var& x) {
  const double th = std::tanh(x.value());
  if (x.is_const()) return Var(th);
  return x.tape()->record(th, {{x.node(), 1.0 - th * th}});
}

inline Var abs(const Var& x) {
  if (x.is_const()) return Var(std::abs(x.value()));
  const double s = x.value() < 0.0 ? -1.0 : 1.0;
  return x.tape()->record(std::abs(x.value()), {{x.node(), s}});
}

inline Var abs2(const Var& x) { return x * x; }

inline Var leaky_relu(const Var& x, double slope = 0.01) {
  const double w = x.value() > 0.0 ? 1.0 : slope;
  if (x.is_const()) return Var(w * x.value());
  return x.tape()->record(w * x.value(), {{x.node(), w}});
}

// min(c, x); at the kink (x == c) the derivative is taken from the x < c branch
inline Var min_const(double c, const Var& x) {
  if (x.is_const()) return Var(std::min(c, x.value()));
  const bool below = x.value() <= c;
  return x.tape()->record(below ? x.value() : c, {{x.node(), below ? 1.0 : 0.0}});
}

// log(1 + exp(x)), overflow-safe
inline Var softplus(const Var& x) {
  const double xv = x.value();
  const double v = xv > 30.0 ? xv : std::log1p(std::exp(xv));
  const double s = 1.0 / (1.0 + std::exp(-xv));
  if (x.is_const()) return Var(v);
  return x.tape()->record(v, {{x.node(), s}});
}

// log(1 - exp(x)) for x < 0
inline Var log1mexp(const Var& x) {
  const double xv = x.value();
  const double v = xv < -0.6931471805599453 ? std::log1p(-std::exp(xv))
                                            : std::log(-std::expm1(xv));
  if (x.is_const()) return Var(v);
  const double w = -std::exp(xv) / (-std::expm1(xv));
  return x.tape()->record(v, {{x.node(), w}});
}

inline Var sigmoid(const Var& x) {
  const double s = 1.0 / (1.0 + std::exp(-x.value()));
  if (x.is_const()) return Var(s);
  return x.tape()->record(s, {{x.node(), s * (1.0 - s)}});
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

// Tape inputs mirroring a ParamTree, plus extraction of the gradient tree.
class ParamVars {
 public:
  ParamVars(Tape& tape, const ParamTree& params) : shapes_(&params) {
    for (const auto& [name, m] : params.entries()) {
      MatX<Var> vm(m.rows(), m.cols());
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) vm(i, j) = tape.input(m(i, j));
      vars_[name] = std::move(vm);
    }
  }

  const MatX<Var>& at(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  VecX<Var> vec(const std::string& name) const {
    const MatX<Var>& m = at(name);
    if (m.cols() != 1) throw ShapeError("parameter is not a vector: " + name);
    return m.col(0);
  }

  Var scalar(const std::string& name) const {
    const MatX<Var>& m = at(name);
    if (m.size() != 1) throw ShapeError("parameter is not a scalar: " + name);
    return m(0, 0);
  }

  bool has(const std::string& name) const { return vars_.count(name) > 0; }

  ParamTree gradient(const Tape& tape, const Var& output) const {
    const std::vector<double> adj = tape.backward(output);
    ParamTree g = shapes_->zeros_like();
    for (const auto& [name, vm] : vars_) {
      Mat& gm = g.at(name);
      for (Eigen::Index j = 0; j < vm.cols(); ++j)
        for (Eigen::Index i = 0; i < vm.rows(); ++i) gm(i, j) = adj[vm(i, j).node()];
    }
    return g;
  }

 private:
  std::map<std::string, MatX<Var>> vars_;
  const ParamTree* shapes_;
};

// Scalar objective rebuilt from scratch for each evaluation; the analytic path
// and the finite-difference path share nothing but this builder.
using TapeFn = std::function<Var(Tape&, const ParamVars&)>;

inline ParamTree backward(const TapeFn& f, const ParamTree& params) {
  Tape tape;
  ParamVars pv(tape, params);
  const Var out = f(tape, pv);
  return pv.gradient(tape, out);
}

inline double evaluate(const TapeFn& f, const ParamTree& params) {
  Tape tape;
  ParamVars pv(tape, params);
  return f(tape, pv).value();
}

// Worst per-coordinate relative error between backward() and central finite
// differences with step h.
inline double check_grad(const TapeFn& f, const ParamTree& params, double h = 1e-5) {
  if (h <= 0.0) throw DomainError("check_grad: h must be positive");
  const ParamTree analytic = backward(f, params);
  const Vec ga = analytic.flatten();
  Vec flat = params.flatten();
  ParamTree work = params;
  double worst = 0.0;
  for (int i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + h;
    work.unflatten(flat);
    const double fp = evaluate(f, work);
    flat[i] = orig - h;
    work.unflatten(flat);
    const double fm = evaluate(f, work);
    flat[i] = orig;
    const double gn = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(ga[i]), std::abs(gn), 1e-8});
    worst = std::max(worst, std::abs(ga[i] - gn) / denom);
  }
  work.unflatten(flat);
  return worst;
}

}  // namespace metflow::grad
