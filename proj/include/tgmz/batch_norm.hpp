#pragma once

#include <string>

#include "tgmz/common.hpp"
#include "tgmz/ops.hpp"
#include "tgmz/params.hpp"
#include "tgmz/tape.hpp"

namespace tgmz {

enum class NormMode { train, eval };

// Per-feature batch normalization with learned scale/shift and running
// statistics. Normalization uses the biased batch variance; the epsilon keeps
// zero-variance features finite.
template <class S>
struct BatchNorm {
  Parameter<S> gamma;
  Parameter<S> beta;
  Mat<S> running_mean;
  Mat<S> running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
};

template <class S>
BatchNorm<S> make_batch_norm(const std::string& name, Index dim) {
  BatchNorm<S> bn;
  bn.gamma.name = name + ".gamma";
  bn.gamma.value = Mat<S>::Ones(1, dim);
  bn.beta.name = name + ".beta";
  bn.beta.value = Mat<S>::Zero(1, dim);
  bn.running_mean = Mat<S>::Zero(1, dim);
  bn.running_var = Mat<S>::Ones(1, dim);
  return bn;
}

// Composed from primitive ops so the backward pass (including the dependence
// of batch statistics on x) falls out of the tape. Train mode updates the
// running statistics as a side effect.
template <class S>
Var<S> batch_norm(Tape<S>& t, BatchNorm<S>& bn, Var<S> x, NormMode mode) {
  if (x.value().rows() < 1) throw ContractError("batch_norm: empty batch");
  require_shape(bn.gamma.value, Index(1), x.value().cols(), "batch_norm gamma");
  Var<S> xhat;
  if (mode == NormMode::train) {
    Var<S> mu = colwise_mean(x);
    Var<S> centered = sub_rowvec(x, mu);
    Var<S> var = colwise_mean(mul(centered, centered));
    Var<S> inv_std = cwise_rsqrt(add_scalar(var, bn.eps));
    xhat = mul_rowvec(centered, inv_std);
    bn.running_mean = (S(1) - bn.momentum) * bn.running_mean + bn.momentum * mu.value();
    bn.running_var = (S(1) - bn.momentum) * bn.running_var + bn.momentum * var.value();
  } else {
    Var<S> mu = t.constant(bn.running_mean);
    Var<S> inv_std = t.constant(
        (bn.running_var.array() + bn.eps).rsqrt().matrix());
    xhat = mul_rowvec(sub_rowvec(x, mu), inv_std);
  }
  return add_rowvec(mul_rowvec(xhat, t.param(bn.gamma)), t.param(bn.beta));
}

// Tape-free eval-mode forward (deterministic given frozen running stats).
template <class S>
Mat<S> batch_norm_value(const BatchNorm<S>& bn, const Mat<S>& x) {
  Mat<S> inv_std = (bn.running_var.array() + bn.eps).rsqrt().matrix();
  Mat<S> xhat = ((x.rowwise() - bn.running_mean.row(0)).array().rowwise() *
                 inv_std.row(0).array())
                    .matrix();
  return ((xhat.array().rowwise() * bn.gamma.value.row(0).array()).rowwise() +
          bn.beta.value.row(0).array())
      .matrix();
}

}  // namespace tgmz
