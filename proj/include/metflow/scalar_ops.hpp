#pragma once

#include <cmath>

#include "metflow/tape.hpp"

// Scalar primitives shared by the double and tape-recorded code paths. The
// templated flow/density code calls these unqualified so the right overload is
// picked per scalar type.

namespace metflow {

inline double leaky_relu(double x, double slope = 0.01) {
  return x > 0.0 ? x : slope * x;
}

inline double min_const(double c, double x) { return x <= c ? x : c; }

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

// log(1 - exp(x)) for x < 0
inline double log1mexp(double x) {
  return x < -0.6931471805599453 ? std::log1p(-std::exp(x)) : std::log(-std::expm1(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using grad::leaky_relu;
using grad::log1mexp;
using grad::min_const;
using grad::sigmoid;
using grad::softplus;
using grad::value_of;
using grad::Var;

}  // namespace metflow
