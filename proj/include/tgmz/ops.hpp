#pragma once

#include <vector>

#include "tgmz/common.hpp"
#include "tgmz/tape.hpp"

namespace tgmz {

// Plain-value kernels. The tape ops below call these same functions, so a
// tape forward and a tape-free forward of the same network are bitwise equal.

template <class S>
Mat<S> affine_value(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  return (x * w).rowwise() + b.row(0);
}

template <class S>
Mat<S> leaky_relu_value(const Mat<S>& x, S slope) {
  return x.unaryExpr([slope](S v) { return v > S(0) ? v : slope * v; });
}

template <class S>
Mat<S> relu_value(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return v > S(0) ? v : S(0); });
}

// 0.5*(1+tanh(x/2)) is the logistic function and stays finite for all x.
template <class S>
Mat<S> sigmoid_value(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return S(0.5) * (S(1) + std::tanh(S(0.5) * v)); });
}

template <class S>
Mat<S> tanh_value(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return std::tanh(v); });
}

// Row-wise softmax with max subtraction.
template <class S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

namespace detail {
template <class S>
void check_inner(const Mat<S>& a, const Mat<S>& b, const char* what) {
  if (a.cols() != b.rows()) {
    throw DimensionError(cat(what, ": inner dimensions disagree: ",
                             shape_str(a), " vs ", shape_str(b)));
  }
}
template <class S>
void check_rowvec(const Mat<S>& m, Index d, const char* what) {
  if (m.rows() != 1 || m.cols() != d) {
    throw DimensionError(
        cat(what, ": expected row vector 1x", d, ", got ", shape_str(m)));
  }
}
}  // namespace detail

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape();
  detail::check_inner(a.value(), b.value(), "matmul");
  const int ia = a.id(), ib = b.id();
  return t.push((a.value() * b.value()).eval(), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ia, g * t.value(ib).transpose());
                  t.add_grad(ib, t.value(ia).transpose() * g);
                });
}

// x*W + bias with the bias broadcast over rows.
template <class S>
Var<S> affine(Var<S> x, Var<S> w, Var<S> bias) {
  Tape<S>& t = *x.tape();
  detail::check_inner(x.value(), w.value(), "affine");
  detail::check_rowvec(bias.value(), w.value().cols(), "affine bias");
  const int ix = x.id(), iw = w.id(), ib = bias.id();
  return t.push(affine_value(x.value(), w.value(), bias.value()), {ix, iw, ib},
                [ix, iw, ib](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ix, g * t.value(iw).transpose());
                  t.add_grad(iw, t.value(ix).transpose() * g);
                  t.add_grad(ib, g.colwise().sum());
                });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape();
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  return t.push((a.value() + b.value()).eval(), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ia, g);
                  t.add_grad(ib, g);
                });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape();
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  return t.push((a.value() - b.value()).eval(), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ia, g);
                  t.add_grad(ib, -g);
                });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape();
  require_same_shape(a.value(), b.value(), "mul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ia, g.cwiseProduct(t.value(ib)));
                  t.add_grad(ib, g.cwiseProduct(t.value(ia)));
                });
}

template <class S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>& t = *a.tape();
  const int ia = a.id();
  return t.push((c * a.value()).eval(), {ia},
                [ia, c](Tape<S>& t, const Mat<S>& g) { t.add_grad(ia, c * g); });
}

template <class S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

template <class S>
Var<S> add_scalar(Var<S> a, S c) {
  Tape<S>& t = *a.tape();
  const int ia = a.id();
  return t.push((a.value().array() + c).matrix().eval(), {ia},
                [ia](Tape<S>& t, const Mat<S>& g) { t.add_grad(ia, g); });
}

template <class S>
Var<S> add_rowvec(Var<S> x, Var<S> v) {
  Tape<S>& t = *x.tape();
  detail::check_rowvec(v.value(), x.value().cols(), "add_rowvec");
  const int ix = x.id(), iv = v.id();
  return t.push((x.value().rowwise() + v.value().row(0)).eval(), {ix, iv},
                [ix, iv](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ix, g);
                  t.add_grad(iv, g.colwise().sum());
                });
}

template <class S>
Var<S> sub_rowvec(Var<S> x, Var<S> v) {
  Tape<S>& t = *x.tape();
  detail::check_rowvec(v.value(), x.value().cols(), "sub_rowvec");
  const int ix = x.id(), iv = v.id();
  return t.push((x.value().rowwise() - v.value().row(0)).eval(), {ix, iv},
                [ix, iv](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ix, g);
                  t.add_grad(iv, -g.colwise().sum());
                });
}

template <class S>
Var<S> mul_rowvec(Var<S> x, Var<S> v) {
  Tape<S>& t = *x.tape();
  detail::check_rowvec(v.value(), x.value().cols(), "mul_rowvec");
  const int ix = x.id(), iv = v.id();
  Mat<S> out = x.value().array().rowwise() * v.value().row(0).array();
  return t.push(std::move(out), {ix, iv}, [ix, iv](Tape<S>& t, const Mat<S>& g) {
    t.add_grad(ix, (g.array().rowwise() * t.value(iv).row(0).array()).matrix());
    t.add_grad(iv, g.cwiseProduct(t.value(ix)).colwise().sum());
  });
}

template <class S>
Var<S> colwise_mean(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  const S inv_rows = S(1) / S(x.value().rows());
  return t.push((x.value().colwise().sum() * inv_rows).eval(), {ix},
                [ix, inv_rows](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ix, (inv_rows * g.row(0)).replicate(t.value(ix).rows(), 1));
                });
}

template <class S>
Var<S> sum_all(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  Mat<S> out(1, 1);
  out(0, 0) = x.value().sum();
  return t.push(std::move(out), {ix}, [ix](Tape<S>& t, const Mat<S>& g) {
    t.add_grad(ix, Mat<S>::Constant(t.value(ix).rows(), t.value(ix).cols(), g(0, 0)));
  });
}

template <class S>
Var<S> mean_all(Var<S> x) {
  return scale(sum_all(x), S(1) / S(x.value().size()));
}

template <class S>
Var<S> leaky_relu(Var<S> x, S slope) {
  if (!(slope > S(0) && slope < S(1))) {
    throw ContractError(cat("leaky_relu: slope must be in (0,1), got ", slope));
  }
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  return t.push(leaky_relu_value(x.value(), slope), {ix},
                [ix, slope](Tape<S>& t, const Mat<S>& g) {
                  t.add_grad(ix, g.cwiseProduct(t.value(ix).unaryExpr(
                                     [slope](S v) { return v > S(0) ? S(1) : slope; })));
                });
}

template <class S>
Var<S> relu(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  return t.push(relu_value(x.value()), {ix}, [ix](Tape<S>& t, const Mat<S>& g) {
    t.add_grad(ix, g.cwiseProduct(t.value(ix).unaryExpr(
                       [](S v) { return v > S(0) ? S(1) : S(0); })));
  });
}

template <class S>
Var<S> sigmoid(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  Mat<S> v = sigmoid_value(x.value());
  Mat<S> dv = (v.array() * (S(1) - v.array())).matrix();
  return t.push(std::move(v), {ix}, [ix, dv](Tape<S>& t, const Mat<S>& g) {
    t.add_grad(ix, g.cwiseProduct(dv));
  });
}

template <class S>
Var<S> tanh_op(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  Mat<S> v = tanh_value(x.value());
  Mat<S> dv = (S(1) - v.array().square()).matrix();
  return t.push(std::move(v), {ix}, [ix, dv](Tape<S>& t, const Mat<S>& g) {
    t.add_grad(ix, g.cwiseProduct(dv));
  });
}

// x^{-1/2} elementwise; inputs must be strictly positive.
template <class S>
Var<S> cwise_rsqrt(Var<S> x) {
  Tape<S>& t = *x.tape();
  const int ix = x.id();
  Mat<S> v = x.value().array().rsqrt().matrix();
  Mat<S> dv = (S(-0.5) * v.array().cube()).matrix();
  return t.push(std::move(v), {ix}, [ix, dv](Tape<S>& t, const Mat<S>& g) {
    t.add_grad(ix, g.cwiseProduct(dv));
  });
}

template <class S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape();
  if (a.value().rows() != b.value().rows()) {
    throw DimensionError(cat("concat_cols: row counts disagree: ",
                             shape_str(a.value()), " vs ", shape_str(b.value())));
  }
  Mat<S> out(a.value().rows(), a.value().cols() + b.value().cols());
  out << a.value(), b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    const Index ca = t.value(ia).cols();
    t.add_grad(ia, g.leftCols(ca));
    t.add_grad(ib, g.rightCols(g.cols() - ca));
  });
}

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, const std::vector<int>& labels) {
  Tape<S>& t = *logits.tape();
  const Mat<S>& z = logits.value();
  if (Index(labels.size()) != z.rows()) {
    throw DimensionError(cat("softmax_cross_entropy: ", labels.size(),
                             " labels for ", z.rows(), " rows"));
  }
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= int(z.cols())) {
      throw IndexError(cat("softmax_cross_entropy: label ", labels[r], " at row ",
                           r, " outside [0, ", z.cols(), ")"));
    }
  }
  Mat<S> p = softmax_rows(z);
  S loss = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const S m = z.row(r).maxCoeff();
    S lse = std::log((z.row(r).array() - m).exp().sum()) + m;
    loss += lse - z(r, labels[std::size_t(r)]);
  }
  Mat<S> out(1, 1);
  out(0, 0) = loss / S(z.rows());
  const int iz = logits.id();
  return t.push(std::move(out), {iz},
                [iz, p, labels](Tape<S>& t, const Mat<S>& g) {
                  Mat<S> d = p;
                  for (Index r = 0; r < d.rows(); ++r) d(r, labels[std::size_t(r)]) -= S(1);
                  t.add_grad(iz, (g(0, 0) / S(d.rows())) * d);
                });
}

// Mean squared elementwise difference, composed so backward is automatic.
template <class S>
Var<S> mse(Var<S> x, Var<S> y) {
  require_same_shape(x.value(), y.value(), "mse");
  Var<S> d = sub(x, y);
  return mean_all(mul(d, d));
}

}  // namespace tgmz
