#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <utility>
#include <vector>

#include "tgmz/grad_check.hpp"
#include "tgmz/model.hpp"
#include "tgmz/stats.hpp"
#include "tgmz/tae.hpp"

using namespace tgmz;
using D = double;

namespace {

Mat<D> random_mat(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat<D> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

Mat<D> normal_mat(Index rows, Index cols, Rng& rng, double mean, double stddev) {
  Mat<D> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = mean + stddev * rng.normal();
  return m;
}

ModelDims<D> small_dims() {
  ModelDims<D> dims;
  dims.d_x = 6;
  dims.d_a = 2;
  dims.d_e = 4;
  dims.c_train = 6;
  dims.tasks = 4;
  return dims;
}

AlignBatch<D> random_batch(const ModelDims<D>& dims, Index rows, Rng& rng) {
  AlignBatch<D> batch;
  batch.x = random_mat(rows, dims.d_x, rng);
  batch.a = random_mat(rows, dims.d_a, rng);
  for (Index r = 0; r < rows; ++r) {
    batch.m.push_back(int(rng.uniform_int(std::uint64_t(dims.tasks))));
    batch.y.push_back(int(rng.uniform_int(std::uint64_t(dims.c_train))));
  }
  return batch;
}

void zero_output_layer(Mlp<D>& net) {
  net.l2.w.value.setZero();
  net.l2.b.value.setZero();
}

double ce_of_logits(const Mat<D>& logits, const std::vector<int>& labels) {
  double total = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = std::log((logits.row(r).array() - m).exp().sum()) + m;
    total += lse - logits(r, labels[std::size_t(r)]);
  }
  return total / double(logits.rows());
}

}  // namespace

TEST_CASE("encode shape and determinism") {
  ModelDims<D> dims;
  dims.d_x = 64;
  dims.d_a = 3;
  dims.d_e = 16;
  dims.c_train = 4;
  dims.tasks = 2;
  Rng rng(1);
  Model<D> model(dims, rng);
  Mat<D> x = random_mat(15, 64, rng);
  Mat<D> e1 = encode_value(model.tae, x);
  Mat<D> e2 = encode_value(model.tae, x);
  CHECK(e1.rows() == 15);
  CHECK(e1.cols() == 16);
  CHECK(bitwise_equal(e1, e2));
  CHECK_THROWS_AS(encode_value(model.tae, random_mat(3, 5, rng)), DimensionError);
}

TEST_CASE("encode gradients pass the finite-difference oracle") {
  Rng rng(2);
  Model<D> model(small_dims(), rng);
  Mat<D> x = random_mat(5, 6, rng);
  ParamGroup<D> te;
  collect(model.tae.te, te);
  auto loss_fn = [&](Tape<D>& t) {
    Var<D> e = encode(t, model.tae, t.constant(x));
    return mean_all(mul(e, e));
  };
  GradCheckReport r = grad_check_params<D>(loss_fn, te, 1e-4);
  CHECK_MESSAGE(r.ok(), r.worst);
}

TEST_CASE("decoder overfits a small fixture") {
  Rng rng(3);
  ModelDims<D> dims = small_dims();
  dims.d_x = 8;
  Model<D> model(dims, rng);
  Mat<D> x = random_mat(10, 8, rng);
  CHECK(decode_value(model.tae, encode_value(model.tae, x)).cols() == 8);

  ParamGroup<D> autoenc;
  collect(model.tae.te, autoenc);
  collect(model.tae.td, autoenc);
  AdamState<D> opt(AdamConfig<D>{1e-2}, autoenc);
  double final_loss = 0;
  for (int step = 0; step < 2000; ++step) {
    Tape<D> t;
    Var<D> xv = t.constant(x);
    Var<D> loss = mse(decode(t, model.tae, encode(t, model.tae, xv)), xv);
    final_loss = loss.value()(0, 0);
    adam_step(autoenc, t.backward(loss, autoenc), opt, StepDirection::descend);
  }
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  CHECK(final_loss < 0.01 * var);
}

TEST_CASE("reconstruction term of loss_tc is exactly mse") {
  Rng rng(4);
  Model<D> model(small_dims(), rng);
  AlignBatch<D> batch = random_batch(model.dims, 7, rng);
  TaeConfig<D> cfg;
  cfg.lambda_adv = 0;
  cfg.lambda_cls = 0;
  Tape<D> t;
  const double got = loss_tc(t, model.tae, batch, cfg).value()(0, 0);
  Mat<D> rec = decode_value(model.tae, encode_value(model.tae, batch.x));
  const double want = (rec - batch.x).array().square().mean();
  CHECK(got == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("task discriminator logits and chance level") {
  Rng rng(5);
  Model<D> model(small_dims(), rng);
  Mat<D> e = random_mat(16, 4, rng);
  Mat<D> a = random_mat(16, 2, rng);
  Mat<D> logits = task_discriminate_value(model.tae, e, a);
  CHECK(logits.cols() == 4);

  // balanced batch, untrained params: cross entropy within 30% of ln(i)
  std::vector<int> m = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
  const double ce = ce_of_logits(logits, m);
  CHECK(ce > 0.7 * std::log(4.0));
  CHECK(ce < 1.3 * std::log(4.0));
}

TEST_CASE("discriminator-only training separates linearly separated tasks") {
  Rng rng(6);
  ModelDims<D> dims = small_dims();
  dims.tasks = 2;
  Model<D> model(dims, rng);

  auto sample_block = [&](int task, Index rows) {
    const double mean = task == 0 ? 2.0 : -2.0;
    return normal_mat(rows, dims.d_e, rng, mean, 0.3);
  };
  Mat<D> attrs = Mat<D>::Zero(40, dims.d_a);
  ParamGroup<D> group;
  collect(model.tae.tdis, group);
  AdamState<D> opt(AdamConfig<D>{1e-2}, group);
  for (int step = 0; step < 300; ++step) {
    Mat<D> e(40, dims.d_e);
    std::vector<int> m;
    e.topRows(20) = sample_block(0, 20);
    e.bottomRows(20) = sample_block(1, 20);
    for (int r = 0; r < 40; ++r) m.push_back(r < 20 ? 0 : 1);
    Tape<D> t;
    Var<D> loss = loss_tdis(t, model.tae, t.constant(e), t.constant(attrs), m);
    adam_step(group, t.backward(loss, group), opt, StepDirection::descend);
  }
  int correct = 0;
  Mat<D> zero_attrs = Mat<D>::Zero(100, dims.d_a);
  for (int task = 0; task < 2; ++task) {
    Mat<D> e = sample_block(task, 100);
    Mat<D> logits = task_discriminate_value(model.tae, e, zero_attrs);
    for (Index r = 0; r < 100; ++r) {
      int arg = 0;
      for (Index c = 1; c < logits.cols(); ++c) {
        if (logits(r, c) > logits(r, arg)) arg = int(c);
      }
      correct += (arg == task);
    }
  }
  CHECK(double(correct) / 200.0 > 0.95);
}

TEST_CASE("classifier width and uniform-logit chance level") {
  Rng rng(7);
  Model<D> model(small_dims(), rng);
  Mat<D> e = random_mat(9, 4, rng);
  CHECK(classify_value(model.tae, e).cols() == 6);

  zero_output_layer(model.tae.cls);
  Mat<D> logits = classify_value(model.tae, e);
  std::vector<int> y = {0, 1, 2, 3, 4, 5, 0, 1, 2};
  CHECK(ce_of_logits(logits, y) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("classifier weights are shared with the MGAN") {
  Rng rng(8);
  Model<D> model(small_dims(), rng);
  CHECK(model.mgan.cls == &model.tae.cls);
  Mat<D> e = random_mat(3, 4, rng);
  Mat<D> before = forward(*model.mgan.cls, e);
  model.tae.cls.l2.b.value(0, 0) += 1.0;
  Mat<D> after = forward(*model.mgan.cls, e);
  CHECK((after.col(0).array() - before.col(0).array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("loss_tdis chance level and hand-computed fixture") {
  Rng rng(9);
  Model<D> model(small_dims(), rng);
  zero_output_layer(model.tae.tdis);
  AlignBatch<D> batch = random_batch(model.dims, 8, rng);
  {
    Tape<D> t;
    Var<D> e = t.constant(encode_value(model.tae, batch.x));
    const double got =
        loss_tdis(t, model.tae, e, t.constant(batch.a), batch.m).value()(0, 0);
    CHECK(got == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  {
    // fixed logits via the output bias: both rows share logits b, labels {0,1}
    Mat<D> bias(1, 4);
    bias << 0.7, -0.3, 0.1, 0.5;
    model.tae.tdis.l2.b.value = bias;
    std::vector<int> m = {0, 1};
    Tape<D> t;
    Var<D> e = t.constant(random_mat(2, 4, rng));
    Var<D> a = t.constant(random_mat(2, 2, rng));
    const double got = loss_tdis(t, model.tae, e, a, m).value()(0, 0);
    const double want = ce_of_logits(bias.replicate(2, 1), m);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("loss_tc composition of limits is -ln(tasks)") {
  Rng rng(10);
  ModelDims<D> dims;
  dims.d_x = 3;
  dims.d_a = 2;
  dims.d_e = 3;
  dims.gen_hidden = 3;  // identity-sized autoencoder stack
  dims.c_train = 6;
  dims.tasks = 4;
  Model<D> model(dims, rng);

  // identity encoder/decoder on positive inputs (leaky_relu passes through)
  model.tae.te.l1.w.value = Mat<D>::Identity(3, 3);
  model.tae.te.l1.b.value.setZero();
  model.tae.te.l2.w.value = Mat<D>::Identity(3, 3);
  model.tae.te.l2.b.value.setZero();
  model.tae.td.l1 = model.tae.te.l1;
  model.tae.td.l1.w.name = "tae.td.l1.w";
  model.tae.td.l1.b.name = "tae.td.l1.b";
  model.tae.td.l2 = model.tae.te.l2;
  model.tae.td.l2.w.name = "tae.td.l2.w";
  model.tae.td.l2.b.name = "tae.td.l2.b";

  // perfect classifier on a single-class batch via a large output bias
  model.tae.cls.l1.w.value.setZero();
  zero_output_layer(model.tae.cls);
  model.tae.cls.l2.b.value(0, 3) = 50.0;

  zero_output_layer(model.tae.tdis);  // chance discriminator

  AlignBatch<D> batch;
  batch.x = random_mat(4, 3, rng, 0.5, 1.5);
  batch.a = random_mat(4, 2, rng);
  batch.m = {0, 1, 2, 3};
  batch.y = {3, 3, 3, 3};

  Tape<D> t;
  const double got = loss_tc(t, model.tae, batch, TaeConfig<D>{}).value()(0, 0);
  CHECK(got == doctest::Approx(-std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("lambda_adv = 0 reduces loss_tc to autoencoder + classifier") {
  Rng rng(11);
  Model<D> model(small_dims(), rng);
  AlignBatch<D> batch = random_batch(model.dims, 6, rng);
  TaeConfig<D> cfg;
  cfg.lambda_adv = 0;
  cfg.lambda_rec = 0.5;
  cfg.lambda_cls = 2.0;
  Tape<D> t;
  const double got = loss_tc(t, model.tae, batch, cfg).value()(0, 0);
  Mat<D> e = encode_value(model.tae, batch.x);
  const double rec = (decode_value(model.tae, e) - batch.x).array().square().mean();
  const double ce = ce_of_logits(classify_value(model.tae, e), batch.y);
  CHECK(got == doctest::Approx(0.5 * rec + 2.0 * ce).epsilon(1e-12));
}

TEST_CASE("loss_tc gradient w.r.t. theta_tdis is exactly zero") {
  Rng rng(12);
  Model<D> model(small_dims(), rng);
  AlignBatch<D> batch = random_batch(model.dims, 6, rng);
  Tape<D> t;
  Var<D> loss = loss_tc(t, model.tae, batch, TaeConfig<D>{});
  GradMap<D> grads = t.backward(loss, model.theta_tdis());
  for (const auto& [name, g] : grads) {
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("align_step with zero learning rates changes nothing, bitwise") {
  Rng rng(13);
  Model<D> model(small_dims(), rng);
  AlignBatch<D> batch = random_batch(model.dims, 8, rng);
  TaeConfig<D> cfg;
  cfg.lr_tc = 0;
  cfg.lr_tdis = 0;
  AdamState<D> opt_tdis(AdamConfig<D>{cfg.lr_tdis}, model.theta_tdis());
  AdamState<D> opt_tc(AdamConfig<D>{cfg.lr_tc}, model.theta_tc());
  GradMap<D> before = snapshot(model.all_params());
  align_step(model, batch, opt_tdis, opt_tc, cfg);
  for (Parameter<D>* p : model.all_params()) {
    CHECK(bitwise_equal(p->value, grad_for(before, p->name)));
  }
}

TEST_CASE("the tdis step does not cross parameter groups and reduces its CE") {
  Rng rng(14);
  Model<D> model(small_dims(), rng);
  AlignBatch<D> batch = random_batch(model.dims, 12, rng);
  TaeConfig<D> cfg;
  cfg.lr_tdis = 1e-4;
  cfg.lr_tc = 0;  // isolate the discriminator half
  AdamState<D> opt_tdis(AdamConfig<D>{cfg.lr_tdis}, model.theta_tdis());
  AdamState<D> opt_tc(AdamConfig<D>{cfg.lr_tc}, model.theta_tc());
  GradMap<D> tc_before = snapshot(model.theta_tc());
  AlignReport<D> report = align_step(model, batch, opt_tdis, opt_tc, cfg);
  for (Parameter<D>* p : model.theta_tc()) {
    CHECK(bitwise_equal(p->value, grad_for(tc_before, p->name)));
  }
  // CE on the same encodings is non-increasing after the descent step
  Mat<D> e = encode_value(model.tae, batch.x);
  const double ce_after =
      ce_of_logits(task_discriminate_value(model.tae, e, batch.a), batch.m);
  CHECK(ce_after <= report.loss_tdis + 1e-12);

  // and the tc step leaves theta_tdis untouched
  TaeConfig<D> cfg2;
  cfg2.lr_tdis = 0;
  cfg2.lr_tc = 1e-3;
  AdamState<D> opt_tdis2(AdamConfig<D>{cfg2.lr_tdis}, model.theta_tdis());
  AdamState<D> opt_tc2(AdamConfig<D>{cfg2.lr_tc}, model.theta_tc());
  GradMap<D> tdis_before = snapshot(model.theta_tdis());
  align_step(model, batch, opt_tdis2, opt_tc2, cfg2);
  for (Parameter<D>* p : model.theta_tdis()) {
    CHECK(bitwise_equal(p->value, grad_for(tdis_before, p->name)));
  }
}

TEST_CASE("align_step is deterministic given identical inputs") {
  Rng rng(15);
  AlignBatch<D> batch;
  {
    Model<D> probe(small_dims(), rng);
    batch = random_batch(probe.dims, 10, rng);
  }
  auto run = [&](std::uint64_t seed) {
    Rng init(seed);
    Model<D> model(small_dims(), init);
    TaeConfig<D> cfg;
    AdamState<D> opt_tdis(AdamConfig<D>{cfg.lr_tdis}, model.theta_tdis());
    AdamState<D> opt_tc(AdamConfig<D>{cfg.lr_tc}, model.theta_tc());
    AlignReport<D> r1 = align_step(model, batch, opt_tdis, opt_tc, cfg);
    AlignReport<D> r2 = align_step(model, batch, opt_tdis, opt_tc, cfg);
    return std::pair{std::pair{r1.loss_tdis, r1.loss_tc},
                     std::pair{r2.loss_tdis, r2.loss_tc}};
  };
  auto a = run(77);
  auto b = run(77);
  CHECK(a.first.first == b.first.first);
  CHECK(a.first.second == b.first.second);
  CHECK(a.second.first == b.second.first);
  CHECK(a.second.second == b.second.second);
}

TEST_CASE("re-paired episodes align all four classes") {
  // classes a,b plus their 10x-scaled counterparts c,d; episodes pair them
  // as {(a,b),(c,d)} and {(a,c),(b,d)} alternately
  Rng rng(16);
  ModelDims<D> dims;
  dims.d_x = 8;
  dims.d_a = 2;
  dims.d_e = 4;
  dims.c_train = 4;
  dims.tasks = 2;
  Model<D> model(dims, rng);

  Mat<D> base = Mat<D>::Constant(1, dims.d_x, 3.0);
  Mat<D> class_mu(4, dims.d_x);
  class_mu.row(0) = base + normal_mat(1, dims.d_x, rng, 0.0, 0.6);
  class_mu.row(1) = base + normal_mat(1, dims.d_x, rng, 0.0, 0.6);
  class_mu.row(2) = class_mu.row(0);
  class_mu.row(3) = class_mu.row(1);
  std::vector<double> class_scale = {1.0, 1.0, 10.0, 10.0};
  Mat<D> class_attr = normal_mat(4, dims.d_a, rng, 0.0, 1.0);

  auto sample_class = [&](int c, Index rows) {
    Mat<D> x = normal_mat(rows, dims.d_x, rng, 0.0, 0.35);
    x.rowwise() += class_mu.row(c);
    return (x * class_scale[std::size_t(c)]).eval();
  };
  auto make_block = [&](int c0, int c1, Index per_class) {
    TaskBlock<D> block;
    block.x.resize(2 * per_class, dims.d_x);
    block.a.resize(2 * per_class, dims.d_a);
    block.x.topRows(per_class) = sample_class(c0, per_class);
    block.x.bottomRows(per_class) = sample_class(c1, per_class);
    for (Index r = 0; r < per_class; ++r) block.a.row(r) = class_attr.row(c0);
    for (Index r = 0; r < per_class; ++r) block.a.row(per_class + r) = class_attr.row(c1);
    for (Index r = 0; r < per_class; ++r) block.y.push_back(c0);
    for (Index r = 0; r < per_class; ++r) block.y.push_back(c1);
    return block;
  };

  TaeConfig<D> cfg;
  AdamState<D> opt_tdis(AdamConfig<D>{cfg.lr_tdis}, model.theta_tdis());
  AdamState<D> opt_tc(AdamConfig<D>{cfg.lr_tc}, model.theta_tc());
  std::vector<int> identity_index = {0, 1, 2, 3};
  for (int step = 0; step < 10000; ++step) {
    const bool alt = (step % 2) == 1;
    Episode<D> episode;
    Task<D> t0, t1;
    t0.pseudo_label = 0;
    t1.pseudo_label = 1;
    if (!alt) {
      t0.support = make_block(0, 1, 5);
      t0.query = make_block(0, 1, 5);
      t1.support = make_block(2, 3, 5);
      t1.query = make_block(2, 3, 5);
    } else {
      t0.support = make_block(0, 2, 5);
      t0.query = make_block(0, 2, 5);
      t1.support = make_block(1, 3, 5);
      t1.query = make_block(1, 3, 5);
    }
    episode.tasks = {t0, t1};
    align_step(model, flatten_episode(episode, identity_index), opt_tdis, opt_tc, cfg);
  }

  // pairwise discrepancy over all four classes, input vs embedding space
  std::vector<Mat<D>> raw, emb;
  for (int c = 0; c < 4; ++c) {
    Mat<D> x = sample_class(c, 200);
    raw.push_back(x);
    emb.push_back(encode_value(model.tae, x));
  }
  double input_stat = 0, emb_stat = 0;
  int pairs = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      input_stat += normalized_mean_discrepancy(raw[std::size_t(i)], raw[std::size_t(j)]);
      emb_stat += normalized_mean_discrepancy(emb[std::size_t(i)], emb[std::size_t(j)]);
      ++pairs;
    }
  }
  input_stat /= pairs;
  emb_stat /= pairs;
  CHECK(emb_stat < input_stat);
}
