#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "tgmz/common.hpp"
#include "tgmz/params.hpp"

namespace tgmz {

enum class StepDirection { descend, ascend };

template <class S>
struct AdamConfig {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

// Per-group Adam state: first/second moment buffers per parameter plus a
// shared step counter.
template <class S>
struct AdamState {
  AdamConfig<S> cfg;
  std::int64_t t = 0;
  struct Moments {
    Mat<S> m;
    Mat<S> v;
  };
  std::map<std::string, Moments> moments;

  AdamState() = default;
  AdamState(AdamConfig<S> config, const ParamGroup<S>& group) : cfg(config) {
    for (const Parameter<S>* p : group) {
      moments.emplace(p->name,
                      Moments{Mat<S>::Zero(p->value.rows(), p->value.cols()),
                              Mat<S>::Zero(p->value.rows(), p->value.cols())});
    }
  }
};

// One Adam update with bias correction. `ascend` negates the applied update,
// which is bitwise identical to descending the negated loss.
template <class S>
void adam_step(const ParamGroup<S>& params, const GradMap<S>& grads,
               AdamState<S>& state, StepDirection direction) {
  if (grads.size() != params.size()) {
    throw ContractError(cat("adam_step: ", grads.size(), " gradients for a group of ",
                            params.size(), " parameters"));
  }
  state.t += 1;
  const S bc1 = S(1) - S(std::pow(double(state.cfg.beta1), double(state.t)));
  const S bc2 = S(1) - S(std::pow(double(state.cfg.beta2), double(state.t)));
  for (Parameter<S>* p : params) {
    const Mat<S>& g = grad_for(grads, p->name);
    auto it = state.moments.find(p->name);
    if (it == state.moments.end()) {
      throw ContractError(cat("adam_step: no moment buffers for '", p->name, "'"));
    }
    auto& [m, v] = it->second;
    m = state.cfg.beta1 * m + (S(1) - state.cfg.beta1) * g;
    v = (state.cfg.beta2 * v.array() + (S(1) - state.cfg.beta2) * g.array().square()).matrix();
    Mat<S> update =
        (state.cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.cfg.eps))
            .matrix();
    if (direction == StepDirection::descend) {
      p->value -= update;
    } else {
      p->value += update;
    }
  }
}

}  // namespace tgmz
