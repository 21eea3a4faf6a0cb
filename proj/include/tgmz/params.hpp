#pragma once

#include <map>
#include <string>
#include <vector>

#include "tgmz/common.hpp"

namespace tgmz {

// A named trainable tensor. Gradients are not stored here; backward passes
// return them as a GradMap keyed by parameter path, so parameters outside the
// requested group are never touched.
template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
};

template <class S>
using ParamGroup = std::vector<Parameter<S>*>;

// std::map keeps iteration order deterministic.
template <class S>
using GradMap = std::map<std::string, Mat<S>>;

template <class S>
void add_into(GradMap<S>& sum, const GradMap<S>& g) {
  for (const auto& [name, grad] : g) {
    auto it = sum.find(name);
    if (it == sum.end()) {
      sum.emplace(name, grad);
    } else {
      it->second += grad;
    }
  }
}

template <class S>
const Mat<S>& grad_for(const GradMap<S>& grads, const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    throw ContractError(cat("missing gradient for parameter '", name, "'"));
  }
  return it->second;
}

// In-place p += coef * grad over a whole group. Plain gradient steps
// (ascent for coef > 0, descent for coef < 0) are built on this.
template <class S>
void axpy(const ParamGroup<S>& params, const GradMap<S>& grads, S coef) {
  for (Parameter<S>* p : params) {
    p->value += coef * grad_for(grads, p->name);
  }
}

template <class S>
S group_sq_norm(const ParamGroup<S>& params) {
  S total = 0;
  for (const Parameter<S>* p : params) total += p->value.squaredNorm();
  return total;
}

template <class S>
S grad_sq_norm(const GradMap<S>& grads) {
  S total = 0;
  for (const auto& [name, g] : grads) total += g.squaredNorm();
  return total;
}

template <class S>
GradMap<S> snapshot(const ParamGroup<S>& params) {
  GradMap<S> values;
  for (const Parameter<S>* p : params) values.emplace(p->name, p->value);
  return values;
}

template <class S>
bool bitwise_equal(const Mat<S>& a, const Mat<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace tgmz
