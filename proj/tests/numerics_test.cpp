#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "tgmz/adam.hpp"
#include "tgmz/batch_norm.hpp"
#include "tgmz/grad_check.hpp"
#include "tgmz/nn.hpp"
#include "tgmz/ops.hpp"
#include "tgmz/rng.hpp"
#include "tgmz/tape.hpp"

using namespace tgmz;
using D = double;

namespace {

Mat<D> random_mat(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat<D> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Independent oracle: naive triple loop, no Eigen product kernel involved.
Mat<D> matmul_oracle(const Mat<D>& a, const Mat<D>& b) {
  Mat<D> c = Mat<D>::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Rng rng(11);
  Mat<D> a = random_mat(3, 3, rng);
  Tape<D> t;
  Var<D> out = matmul(t.constant(Mat<D>::Identity(3, 3)), t.constant(a));
  CHECK(bitwise_equal(out.value(), a));

  Mat<D> lhs(2, 2), rhs(2, 1);
  lhs << 1, 2, 3, 4;
  rhs << 1, 1;
  Tape<D> t2;
  Mat<D> prod = matmul(t2.constant(lhs), t2.constant(rhs)).value();
  CHECK(prod(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(prod(1, 0) == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(12);
  Mat<D> a = random_mat(7, 5, rng);
  Mat<D> b = random_mat(5, 4, rng);
  Tape<D> t;
  Mat<D> got = matmul(t.constant(a), t.constant(b)).value();
  Mat<D> want = matmul_oracle(a, b);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<D> t;
  Var<D> a = t.constant(Mat<D>::Zero(7, 5));
  Var<D> b = t.constant(Mat<D>::Zero(4, 4));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("7x5"), DimensionError);
}

TEST_CASE("affine identity, zero input, bias gradient") {
  Rng rng(13);
  Mat<D> x = random_mat(4, 3, rng);
  {
    Tape<D> t;
    Var<D> out = affine(t.constant(x), t.constant(Mat<D>::Identity(3, 3)),
                        t.constant(Mat<D>::Zero(1, 3)));
    CHECK(bitwise_equal(out.value(), x));
  }
  Mat<D> bias = random_mat(1, 5, rng);
  {
    Tape<D> t;
    Var<D> out = affine(t.constant(Mat<D>::Zero(4, 3)),
                        t.constant(random_mat(3, 5, rng)), t.constant(bias));
    for (Index r = 0; r < 4; ++r) CHECK(out.value().row(r) == bias.row(0));
  }
  {
    // d sum(x*W + b) / d b = batch size, per coordinate
    Parameter<D> w{"w", random_mat(3, 5, rng)};
    Parameter<D> b{"b", random_mat(1, 5, rng)};
    Tape<D> t;
    Var<D> loss = sum_all(affine(t.constant(x), t.param(w), t.param(b)));
    GradMap<D> grads = t.backward(loss, {&b});
    CHECK(grad_for(grads, "b") == Mat<D>::Constant(1, 5, 4.0));
    CHECK(grads.count("w") == 0);
  }
}

TEST_CASE("activation spot values") {
  Tape<D> t;
  Mat<D> m(1, 1);
  m << -1.0;
  CHECK(leaky_relu(t.constant(m), 0.2).value()(0, 0) == doctest::Approx(-0.2));

  Mat<D> z = Mat<D>::Zero(1, 1);
  CHECK(sigmoid(t.constant(z)).value()(0, 0) == 0.5);

  // sigmoid local gradient at 0 is 0.25
  Tape<D> t2;
  Var<D> x = t2.leaf(z);
  t2.backward(sum_all(sigmoid(x)), {});
  CHECK(t2.grad(x)(0, 0) == doctest::Approx(0.25).epsilon(1e-12));

  // relu gradient: 1 for positive, 0 for negative
  Mat<D> pm(1, 2);
  pm << 2.0, -3.0;
  Tape<D> t3;
  Var<D> y = t3.leaf(pm);
  t3.backward(sum_all(relu(y)), {});
  CHECK(t3.grad(y)(0, 0) == 1.0);
  CHECK(t3.grad(y)(0, 1) == 0.0);
}

TEST_CASE("softmax cross entropy values") {
  {
    Tape<D> t;
    Var<D> loss = softmax_cross_entropy(t.constant(Mat<D>::Zero(3, 4)), {0, 1, 3});
    CHECK(loss.value()(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  {
    // hand evaluation of -log(e^2 / (e^2 + e^1 + e^0))
    Mat<D> logits(1, 3);
    logits << 2, 1, 0;
    const double want = std::log(std::exp(2.0) + std::exp(1.0) + 1.0) - 2.0;
    Tape<D> t;
    Var<D> loss = softmax_cross_entropy(t.constant(logits), {0});
    CHECK(loss.value()(0, 0) == doctest::Approx(want).epsilon(1e-12));
    CHECK(loss.value()(0, 0) == doctest::Approx(0.40760596444438104).epsilon(1e-10));
  }
  {
    // loss decreases monotonically toward 0 as the true-class margin grows
    double prev = std::log(3.0);
    for (double margin = 1.0; margin <= 40.0; margin += 6.0) {
      Mat<D> logits = Mat<D>::Zero(1, 3);
      logits(0, 2) = margin;
      Tape<D> t;
      const double loss = softmax_cross_entropy(t.constant(logits), {2}).value()(0, 0);
      CHECK(loss < prev);
      prev = loss;
    }
    CHECK(prev < 1e-15);
  }
  {
    Tape<D> t;
    Var<D> logits = t.constant(Mat<D>::Zero(2, 3));
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 3}), IndexError);
  }
}

TEST_CASE("mse values") {
  Rng rng(14);
  Mat<D> x = random_mat(3, 4, rng);
  Tape<D> t;
  CHECK(mse(t.constant(x), t.constant(x)).value()(0, 0) == 0.0);
  Mat<D> y = (x.array() + 1.0).matrix();
  Tape<D> t2;
  CHECK(mse(t2.constant(x), t2.constant(y)).value()(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  Mat<D> a(1, 2), b(1, 2);
  a << 1, 2;
  b << 3, 5;
  Tape<D> t3;
  CHECK(mse(t3.constant(a), t3.constant(b)).value()(0, 0) == doctest::Approx(6.5).epsilon(1e-15));

  Tape<D> t4;
  CHECK_THROWS_AS(mse(t4.constant(Mat<D>::Zero(2, 2)), t4.constant(Mat<D>::Zero(2, 3))),
                  DimensionError);
}

TEST_CASE("batch norm train and eval behaviour") {
  Rng rng(15);
  {
    // constant batch: output is all beta
    BatchNorm<D> bn = make_batch_norm<D>("bn", 3);
    bn.beta.value = random_mat(1, 3, rng);
    Mat<D> x = Mat<D>::Constant(5, 3, 2.5);
    Tape<D> t;
    Var<D> out = batch_norm(t, bn, t.constant(x), NormMode::train);
    for (Index r = 0; r < out.rows(); ++r) {
      CHECK((out.value().row(r) - bn.beta.value.row(0)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  {
    // train mode standardizes per feature before scale/shift
    BatchNorm<D> bn = make_batch_norm<D>("bn", 4);
    Mat<D> x = random_mat(64, 4, rng, -3.0, 3.0);
    Tape<D> t;
    Var<D> out = batch_norm(t, bn, t.constant(x), NormMode::train);
    Mat<D> mu = out.value().colwise().mean();
    CHECK(mu.cwiseAbs().maxCoeff() < 1e-6);
    Mat<D> centered = out.value().rowwise() - mu.row(0);
    Mat<D> var = centered.cwiseProduct(centered).colwise().mean();
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-3);  // eps shifts variance slightly
  }
  {
    // eval mode is deterministic given frozen running stats
    BatchNorm<D> bn = make_batch_norm<D>("bn", 3);
    bn.running_mean = random_mat(1, 3, rng);
    bn.running_var = (random_mat(1, 3, rng).array() + 2.0).matrix();
    Mat<D> x = random_mat(6, 3, rng);
    Tape<D> t1, t2;
    Var<D> a = batch_norm(t1, bn, t1.constant(x), NormMode::eval);
    Var<D> b = batch_norm(t2, bn, t2.constant(x), NormMode::eval);
    CHECK(bitwise_equal(a.value(), b.value()));
    CHECK(bitwise_equal(a.value(), batch_norm_value(bn, x)));
  }
}

TEST_CASE("backward basics") {
  {
    // f = x*w, d/dw = x
    Parameter<D> w{"w", Mat<D>::Constant(1, 1, 3.0)};
    Tape<D> t;
    Var<D> x = t.constant(Mat<D>::Constant(1, 1, 7.0));
    GradMap<D> g = t.backward(matmul(x, t.param(w)), {&w});
    CHECK(grad_for(g, "w")(0, 0) == 7.0);
  }
  {
    // f = x + x: shared-node accumulation gives gradient 2
    Tape<D> t;
    Var<D> x = t.leaf(Mat<D>::Constant(1, 1, 1.5));
    t.backward(add(x, x), {});
    CHECK(t.grad(x)(0, 0) == 2.0);
  }
  {
    // non-scalar loss rejected
    Tape<D> t;
    Var<D> x = t.leaf(Mat<D>::Zero(2, 2));
    CHECK_THROWS_AS(t.backward(x, {}), ContractError);
  }
}

TEST_CASE("two-layer network gradient matches finite differences") {
  Rng rng(16);
  Mlp<D> net = make_mlp<D>("net", 5, 7, 3, 0.2, rng);
  Mat<D> x = random_mat(6, 5, rng);
  std::vector<int> labels = {0, 2, 1, 1, 0, 2};
  ParamGroup<D> params;
  collect(net, params);
  auto loss_fn = [&](Tape<D>& t) {
    return softmax_cross_entropy(apply(t, net, t.constant(x)), labels);
  };
  GradCheckReport report = grad_check_params<D>(loss_fn, params, 1e-4);
  CHECK_MESSAGE(report.ok(), report.worst);
}

TEST_CASE("backward is bitwise idempotent over tape structure") {
  Rng rng(17);
  Mlp<D> net = make_mlp<D>("net", 4, 6, 2, 0.2, rng);
  Mat<D> x = random_mat(5, 4, rng);
  std::vector<int> labels = {0, 1, 0, 1, 1};
  ParamGroup<D> params;
  collect(net, params);
  auto run = [&] {
    Tape<D> t;
    return t.backward(softmax_cross_entropy(apply(t, net, t.constant(x)), labels), params);
  };
  GradMap<D> a = run();
  GradMap<D> b = run();
  for (const auto& [name, grad] : a) CHECK(bitwise_equal(grad, grad_for(b, name)));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Parameter<D> p{"p", Mat<D>::Constant(2, 2, 1.25)};
  Mat<D> before = p.value;
  AdamState<D> state(AdamConfig<D>{}, {&p});
  GradMap<D> grads;
  grads.emplace("p", Mat<D>::Zero(2, 2));
  adam_step<D>({&p}, grads, state, StepDirection::descend);
  CHECK(bitwise_equal(p.value, before));
  CHECK(state.t == 1);
}

TEST_CASE("adam: first step magnitude is about lr") {
  Parameter<D> p{"p", Mat<D>::Zero(1, 1)};
  AdamState<D> state(AdamConfig<D>{}, {&p});
  GradMap<D> grads;
  grads.emplace("p", Mat<D>::Ones(1, 1));
  adam_step<D>({&p}, grads, state, StepDirection::descend);
  CHECK(std::abs(std::abs(p.value(0, 0)) - 1e-3) < 1e-9);
  CHECK(p.value(0, 0) < 0.0);
}

TEST_CASE("adam: two steps match the hand recurrence") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.37;
  // independent scalar recurrence
  double m = 0, v = 0, x = 1.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  Parameter<D> p{"p", Mat<D>::Ones(1, 1)};
  AdamState<D> state(AdamConfig<D>{lr, b1, b2, eps}, {&p});
  GradMap<D> grads;
  grads.emplace("p", Mat<D>::Constant(1, 1, g));
  adam_step<D>({&p}, grads, state, StepDirection::descend);
  adam_step<D>({&p}, grads, state, StepDirection::descend);
  CHECK(std::abs(p.value(0, 0) - x) < 1e-12);
}

TEST_CASE("adam: ascend equals descend on negated loss, bitwise") {
  Rng rng(18);
  Mat<D> g = random_mat(3, 3, rng);
  Parameter<D> a{"p", random_mat(3, 3, rng)};
  Parameter<D> b{"p", a.value};
  AdamState<D> sa(AdamConfig<D>{}, {&a});
  AdamState<D> sb(AdamConfig<D>{}, {&b});
  GradMap<D> ga, gb;
  ga.emplace("p", g);
  gb.emplace("p", (-g).eval());
  for (int step = 0; step < 5; ++step) {
    adam_step<D>({&a}, ga, sa, StepDirection::ascend);
    adam_step<D>({&b}, gb, sb, StepDirection::descend);
  }
  CHECK(bitwise_equal(a.value, b.value));
}

TEST_CASE("adam: missing gradient is a contract error") {
  Parameter<D> p{"p", Mat<D>::Zero(1, 1)};
  Parameter<D> q{"q", Mat<D>::Zero(1, 1)};
  AdamState<D> state(AdamConfig<D>{}, {&p, &q});
  GradMap<D> grads;
  grads.emplace("p", Mat<D>::Zero(1, 1));
  CHECK_THROWS_AS(adam_step<D>({&p, &q}, grads, state, StepDirection::descend),
                  ContractError);
}

TEST_CASE("grad_check spot cases") {
  {
    // f(x) = x^2 at x = 3: derivative 6
    Mat<D> x0 = Mat<D>::Constant(1, 1, 3.0);
    auto fn = [](Tape<D>& t, Var<D> x) { return sum_all(mul(x, x)); };
    GradCheckReport r = grad_check<D>(fn, x0, 1e-6);
    CHECK_MESSAGE(r.ok(), r.worst);
  }
  {
    auto fn = [](Tape<D>& t, Var<D> x) { return sum_all(sigmoid(x)); };
    GradCheckReport r = grad_check<D>(fn, Mat<D>::Zero(1, 1), 1e-6);
    CHECK_MESSAGE(r.ok(), r.worst);
  }
  {
    // composed affine -> leaky_relu -> cross-entropy
    Rng rng(19);
    Mat<D> w = random_mat(4, 3, rng);
    Mat<D> b = random_mat(1, 3, rng);
    std::vector<int> labels = {1, 0};
    auto fn = [&](Tape<D>& t, Var<D> x) {
      Var<D> h = leaky_relu(affine(x, t.constant(w), t.constant(b)), 0.2);
      return softmax_cross_entropy(h, labels);
    };
    GradCheckReport r = grad_check<D>(fn, random_mat(2, 4, rng), 1e-4);
    CHECK_MESSAGE(r.ok(), r.worst);
  }
}

TEST_CASE("every differentiable op passes finite differences") {
  Rng rng(20);
  const double tol = 1e-4;
  Mat<D> a8 = random_mat(5, 8, rng);
  Mat<D> b8 = random_mat(5, 8, rng);
  Mat<D> w8 = random_mat(8, 6, rng);
  Mat<D> v8 = random_mat(1, 8, rng);
  Mat<D> bias6 = random_mat(1, 6, rng);
  // keep kinked activations away from their kinks under the probe step
  Mat<D> off0 = (a8.array() + (a8.array() > 0).cast<double>() * 0.4 - 0.2).matrix();
  Mat<D> pos8 = (a8.array().abs() + 0.5).matrix();
  std::vector<int> labels = {3, 0, 5, 2, 4};

  auto check = [&](const char* name, auto fn, const Mat<D>& point) {
    GradCheckReport r = grad_check<D>(fn, point, tol);
    CHECK_MESSAGE(r.ok(), name, ": ", r.worst);
  };

  check("matmul", [&](Tape<D>& t, Var<D> x) { return sum_all(matmul(x, t.constant(w8))); }, a8);
  check("matmul-rhs", [&](Tape<D>& t, Var<D> x) { return sum_all(matmul(t.constant(a8), x)); }, w8);
  check("affine", [&](Tape<D>& t, Var<D> x) {
    return sum_all(affine(x, t.constant(w8), t.constant(bias6)));
  }, a8);
  check("affine-bias", [&](Tape<D>& t, Var<D> b) {
    return sum_all(mul(affine(t.constant(a8), t.constant(w8), b),
                       matmul(t.constant(b8), t.constant(w8))));
  }, bias6);
  check("add", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(add(x, t.constant(b8)), x)); }, a8);
  check("sub", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(sub(x, t.constant(b8)), x)); }, a8);
  check("mul", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(x, t.constant(b8))); }, a8);
  check("scale", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(scale(x, 2.5), x)); }, a8);
  check("add_scalar", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(add_scalar(x, 0.7), x)); }, a8);
  check("add_rowvec", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(add_rowvec(x, t.constant(v8)), x)); }, a8);
  check("add_rowvec-v", [&](Tape<D>& t, Var<D> v) { return sum_all(mul(add_rowvec(t.constant(a8), v), t.constant(b8))); }, v8);
  check("sub_rowvec-v", [&](Tape<D>& t, Var<D> v) { return sum_all(mul(sub_rowvec(t.constant(a8), v), t.constant(b8))); }, v8);
  check("mul_rowvec", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(mul_rowvec(x, t.constant(v8)), x)); }, a8);
  check("mul_rowvec-v", [&](Tape<D>& t, Var<D> v) { return sum_all(mul(mul_rowvec(t.constant(a8), v), t.constant(b8))); }, v8);
  check("colwise_mean", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(colwise_mean(x), t.constant(v8))); }, a8);
  check("mean_all", [&](Tape<D>& t, Var<D> x) { return mean_all(mul(x, x)); }, a8);
  check("leaky_relu", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(leaky_relu(x, 0.2), x)); }, off0);
  check("relu", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(relu(x), x)); }, off0);
  check("sigmoid", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(sigmoid(x), x)); }, a8);
  check("tanh", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(tanh_op(x), x)); }, a8);
  check("rsqrt", [&](Tape<D>& t, Var<D> x) { return sum_all(mul(cwise_rsqrt(x), x)); }, pos8);
  check("concat_cols", [&](Tape<D>& t, Var<D> x) {
    return sum_all(mul(concat_cols(x, t.constant(b8)), concat_cols(t.constant(b8), x)));
  }, a8);
  check("softmax_ce", [&](Tape<D>& t, Var<D> x) {
    return softmax_cross_entropy(matmul(x, t.constant(w8)), labels);
  }, a8);
  check("mse", [&](Tape<D>& t, Var<D> x) { return mse(x, t.constant(b8)); }, a8);

  // batch_norm, train mode, through the batch statistics
  BatchNorm<D> bn = make_batch_norm<D>("bn", 8);
  bn.gamma.value = random_mat(1, 8, rng, 0.5, 1.5);
  bn.beta.value = random_mat(1, 8, rng);
  check("batch_norm-train", [&](Tape<D>& t, Var<D> x) {
    BatchNorm<D> local = bn;  // keep running stats untouched across probes
    return sum_all(mul(batch_norm(t, local, x, NormMode::train), t.constant(b8)));
  }, a8);
  check("batch_norm-eval", [&](Tape<D>& t, Var<D> x) {
    BatchNorm<D> local = bn;
    return sum_all(mul(batch_norm(t, local, x, NormMode::eval), t.constant(b8)));
  }, a8);

  // and the batch-norm parameters themselves (train forward ignores the
  // running stats it updates, so the probe function stays well-defined)
  Mat<D> x_fixed = random_mat(6, 8, rng);
  Mat<D> wgt68 = random_mat(6, 8, rng);
  auto bn_loss = [&](Tape<D>& t) {
    return mean_all(mul(batch_norm(t, bn, t.constant(x_fixed), NormMode::train),
                        t.constant(wgt68)));
  };
  GradCheckReport r = grad_check_params<D>(bn_loss, {&bn.gamma, &bn.beta}, tol);
  CHECK_MESSAGE(r.ok(), "batch_norm params: ", r.worst);
}

TEST_CASE("gradient accumulation is deterministic across runs") {
  Rng rng(21);
  Mlp<D> net = make_mlp<D>("n", 3, 5, 2, 0.2, rng);
  Mat<D> x = random_mat(4, 3, rng);
  ParamGroup<D> params;
  collect(net, params);
  // identical seeds, identical everything
  auto run = [&] {
    Tape<D> t;
    Var<D> e = apply(t, net, t.constant(x));
    return t.backward(mse(e, t.constant(Mat<D>::Zero(4, 2))), params);
  };
  GradMap<D> g1 = run(), g2 = run();
  for (const auto& [k, v] : g1) CHECK(bitwise_equal(v, grad_for(g2, k)));
}
