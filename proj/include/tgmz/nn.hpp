#pragma once

#include <string>

#include "tgmz/common.hpp"
#include "tgmz/ops.hpp"
#include "tgmz/params.hpp"
#include "tgmz/rng.hpp"
#include "tgmz/tape.hpp"

namespace tgmz {

template <class S>
struct Affine {
  Parameter<S> w;
  Parameter<S> b;

  Index in_dim() const { return w.value.rows(); }
  Index out_dim() const { return w.value.cols(); }
};

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
template <class S>
Affine<S> make_affine(const std::string& name, Index in, Index out, Rng& rng) {
  Affine<S> layer;
  layer.w.name = name + ".w";
  layer.b.name = name + ".b";
  layer.w.value.resize(in, out);
  const double bound = 1.0 / std::sqrt(double(in));
  for (Index i = 0; i < layer.w.value.size(); ++i) {
    layer.w.value.data()[i] = S(rng.uniform(-bound, bound));
  }
  layer.b.value = Mat<S>::Zero(1, out);
  return layer;
}

template <class S>
Var<S> apply(Tape<S>& t, Affine<S>& layer, Var<S> x) {
  return affine(x, t.param(layer.w), t.param(layer.b));
}

template <class S>
Var<S> apply_frozen(Tape<S>& t, const Affine<S>& layer, Var<S> x) {
  return affine(x, t.frozen(layer.w), t.frozen(layer.b));
}

// Two-layer perceptron: in -> hidden (leaky_relu) -> out.
template <class S>
struct Mlp {
  Affine<S> l1;
  Affine<S> l2;
  S slope = S(0.2);

  Index in_dim() const { return l1.in_dim(); }
  Index out_dim() const { return l2.out_dim(); }
};

template <class S>
Mlp<S> make_mlp(const std::string& name, Index in, Index hidden, Index out,
                S slope, Rng& rng) {
  if (in <= 0 || hidden <= 0 || out <= 0) {
    throw ConfigError(cat(name, ": widths must be positive (", in, ", ", hidden,
                          ", ", out, ")"));
  }
  Mlp<S> net;
  net.l1 = make_affine<S>(name + ".l1", in, hidden, rng);
  net.l2 = make_affine<S>(name + ".l2", hidden, out, rng);
  net.slope = slope;
  return net;
}

template <class S>
Var<S> apply(Tape<S>& t, Mlp<S>& net, Var<S> x) {
  return apply(t, net.l2, leaky_relu(apply(t, net.l1, x), net.slope));
}

template <class S>
Var<S> apply_frozen(Tape<S>& t, const Mlp<S>& net, Var<S> x) {
  return apply_frozen(t, net.l2, leaky_relu(apply_frozen(t, net.l1, x), net.slope));
}

template <class S>
Mat<S> forward(const Mlp<S>& net, const Mat<S>& x) {
  if (x.cols() != net.in_dim()) {
    throw DimensionError(cat("mlp forward: input ", shape_str(x),
                             " does not match weight ", shape_str(net.l1.w.value)));
  }
  Mat<S> h = leaky_relu_value(affine_value(x, net.l1.w.value, net.l1.b.value), net.slope);
  return affine_value(h, net.l2.w.value, net.l2.b.value);
}

template <class S>
void collect(Mlp<S>& net, ParamGroup<S>& group) {
  group.push_back(&net.l1.w);
  group.push_back(&net.l1.b);
  group.push_back(&net.l2.w);
  group.push_back(&net.l2.b);
}

template <class S>
Mlp<S> clone(const Mlp<S>& net) {
  return net;  // Parameter holds values only, so a copy is a deep copy
}

// Overwrite `dst` values from a name-keyed snapshot (names must match).
template <class S>
void load_values(Mlp<S>& dst, const GradMap<S>& values) {
  ParamGroup<S> group;
  collect(dst, group);
  for (Parameter<S>* p : group) p->value = grad_for(values, p->name);
}

}  // namespace tgmz
