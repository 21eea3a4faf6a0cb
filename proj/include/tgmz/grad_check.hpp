#pragma once

#include <algorithm>
#include <string>

#include "tgmz/common.hpp"
#include "tgmz/ops.hpp"
#include "tgmz/params.hpp"
#include "tgmz/tape.hpp"

namespace tgmz {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::string worst;  // coordinate description

  bool ok() const { return max_rel_error < tolerance; }
};

namespace detail {
inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}
}  // namespace detail

// Central-difference check of d(fn)/d(point). `fn` maps (tape, tracked input)
// to a scalar Var and must be smooth at `point`.
template <class S, class Fn>
GradCheckReport grad_check(Fn fn, const Mat<S>& point, double tolerance,
                           double step = 1e-5) {
  GradCheckReport report;
  report.tolerance = tolerance;

  Tape<S> tape;
  Var<S> x = tape.leaf(point);
  Var<S> loss = fn(tape, x);
  if (loss.value().size() != 1) {
    throw ContractError(cat("grad_check: fn must be scalar-valued, got ",
                            shape_str(loss.value())));
  }
  tape.backward(loss, {});
  Mat<S> analytic = tape.grad(x);

  Mat<S> probe = point;
  for (Index i = 0; i < probe.size(); ++i) {
    const S saved = probe.data()[i];
    const double h = step * std::max(1.0, std::abs(double(saved)));
    auto eval_at = [&](double v) {
      probe.data()[i] = S(v);
      Tape<S> t;
      return double(fn(t, t.leaf(probe)).value()(0, 0));
    };
    const double plus = eval_at(double(saved) + h);
    const double minus = eval_at(double(saved) - h);
    probe.data()[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = detail::rel_error(double(analytic.data()[i]), numeric);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = cat("coordinate ", i, ": analytic ", double(analytic.data()[i]),
                         " vs central-difference ", numeric);
    }
  }
  return report;
}

// Same check for parameter gradients: `loss_fn` rebuilds the scalar loss on a
// fresh tape from the (possibly perturbed) current parameter values.
template <class S, class LossFn>
GradCheckReport grad_check_params(LossFn loss_fn, const ParamGroup<S>& params,
                                  double tolerance, double step = 1e-5) {
  GradCheckReport report;
  report.tolerance = tolerance;

  GradMap<S> analytic;
  {
    Tape<S> tape;
    Var<S> loss = loss_fn(tape);
    analytic = tape.backward(loss, params);
  }

  for (Parameter<S>* p : params) {
    const Mat<S>& grad = grad_for(analytic, p->name);
    for (Index i = 0; i < p->value.size(); ++i) {
      const S saved = p->value.data()[i];
      const double h = step * std::max(1.0, std::abs(double(saved)));
      auto eval_at = [&](double v) {
        p->value.data()[i] = S(v);
        Tape<S> t;
        return double(loss_fn(t).value()(0, 0));
      };
      const double plus = eval_at(double(saved) + h);
      const double minus = eval_at(double(saved) - h);
      p->value.data()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = detail::rel_error(double(grad.data()[i]), numeric);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = cat(p->name, "[", i, "]: analytic ", double(grad.data()[i]),
                           " vs central-difference ", numeric);
      }
    }
  }
  return report;
}

}  // namespace tgmz
