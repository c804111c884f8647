#pragma once

#include <cmath>
#include <map>
#include <string>

#include "metflow/common.hpp"

namespace metflow {

// Named, nested-by-prefix collection of real arrays (rank <= 2) holding all
// trainable parameters. Entries are kept in lexicographic name order so
// flatten/unflatten and reductions are deterministic.
class ParamTree {
 public:
  using Map = std::map<std::string, Mat>;

  template <typename Derived>
  void set(const std::string& name, const Eigen::MatrixBase<Derived>& value) {
    entries_[name] = value;
  }
  void set_scalar(const std::string& name, double value) {
    entries_[name] = Mat::Constant(1, 1, value);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  const Mat& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  Mat& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Vec vec(const std::string& name) const {
    const Mat& m = at(name);
    if (m.cols() != 1) throw ShapeError("parameter is not a vector: " + name);
    return m.col(0);
  }
  double scalar(const std::string& name) const {
    const Mat& m = at(name);
    if (m.size() != 1) throw ShapeError("parameter is not a scalar: " + name);
    return m(0, 0);
  }

  const Map& entries() const { return entries_; }
  Map& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  int total_dim() const {
    int n = 0;
    for (const auto& [name, m] : entries_) n += static_cast<int>(m.size());
    return n;
  }

  Vec flatten() const {
    Vec out(total_dim());
    int k = 0;
    for (const auto& [name, m] : entries_)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) out[k++] = m(i, j);
    return out;
  }

  void unflatten(const Vec& flat) {
    if (flat.size() != total_dim()) throw ShapeError("unflatten: size mismatch");
    int k = 0;
    for (auto& [name, m] : entries_)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = flat[k++];
  }

  ParamTree zeros_like() const {
    ParamTree out;
    for (const auto& [name, m] : entries_) out.set(name, Mat::Zero(m.rows(), m.cols()));
    return out;
  }

  // this += s * other (matching shapes required)
  void add_scaled(const ParamTree& other, double s) {
    for (auto& [name, m] : entries_) {
      const Mat& o = other.at(name);
      if (o.rows() != m.rows() || o.cols() != m.cols())
        throw ShapeError("add_scaled: shape mismatch for " + name);
      m += s * o;
    }
  }

  bool all_finite() const {
    for (const auto& [name, m] : entries_)
      if (!m.allFinite()) return false;
    return true;
  }

 private:
  Map entries_;
};

}  // namespace metflow
