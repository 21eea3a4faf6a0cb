#pragma once

#include <vector>

#include "tgmz/adam.hpp"
#include "tgmz/episode.hpp"
#include "tgmz/model.hpp"
#include "tgmz/ops.hpp"

namespace tgmz {

template <class S>
struct TaeConfig {
  S lambda_rec = S(1);
  S lambda_adv = S(1);
  S lambda_cls = S(1);
  S lr_tc = S(1e-3);
  S lr_tdis = S(1e-3);

  void validate() const {
    if (lambda_rec < S(0) || lambda_adv < S(0) || lambda_cls < S(0)) {
      throw ConfigError("tae: loss weights must be >= 0");
    }
    if (lr_tc < S(0) || lr_tdis < S(0)) {
      throw ConfigError("tae: learning rates must be >= 0");
    }
  }
};

// Concatenated support+query rows of all tasks in one episode, with per-row
// pseudo-labels m and training-class labels y.
template <class S>
struct AlignBatch {
  Mat<S> x;
  Mat<S> a;
  std::vector<int> m;
  std::vector<int> y;
};

template <class S>
AlignBatch<S> flatten_episode(const Episode<S>& episode,
                              const std::vector<int>& train_class_index) {
  Index rows = 0;
  for (const Task<S>& t : episode.tasks) {
    rows += t.support.x.rows() + t.query.x.rows();
  }
  AlignBatch<S> batch;
  if (episode.tasks.empty()) throw ContractError("flatten_episode: empty episode");
  batch.x.resize(rows, episode.tasks[0].support.x.cols());
  batch.a.resize(rows, episode.tasks[0].support.a.cols());
  batch.m.reserve(std::size_t(rows));
  batch.y.reserve(std::size_t(rows));
  Index at = 0;
  auto append = [&](const TaskBlock<S>& block, int pseudo) {
    batch.x.middleRows(at, block.x.rows()) = block.x;
    batch.a.middleRows(at, block.a.rows()) = block.a;
    for (int label : block.y) {
      const int idx = train_class_index[std::size_t(label)];
      if (idx < 0) {
        throw ContractError(cat("episode contains unseen class ", label));
      }
      batch.m.push_back(pseudo);
      batch.y.push_back(idx);
    }
    at += block.x.rows();
  };
  for (const Task<S>& t : episode.tasks) {
    append(t.support, t.pseudo_label);
    append(t.query, t.pseudo_label);
  }
  return batch;
}

// ---- forwards ----

template <class S>
Var<S> encode(Tape<S>& t, TaeParams<S>& p, Var<S> x) {
  return apply(t, p.te, x);
}

template <class S>
Mat<S> encode_value(const TaeParams<S>& p, const Mat<S>& x) {
  return forward(p.te, x);
}

template <class S>
Var<S> decode(Tape<S>& t, TaeParams<S>& p, Var<S> e) {
  return apply(t, p.td, e);
}

template <class S>
Mat<S> decode_value(const TaeParams<S>& p, const Mat<S>& e) {
  return forward(p.td, e);
}

// Multi-label task discrimination on the concatenation [e || a].
template <class S>
Var<S> task_discriminate(Tape<S>& t, TaeParams<S>& p, Var<S> e, Var<S> a) {
  return apply(t, p.tdis, concat_cols(e, a));
}

template <class S>
Mat<S> task_discriminate_value(const TaeParams<S>& p, const Mat<S>& e, const Mat<S>& a) {
  if (e.rows() != a.rows()) {
    throw DimensionError(cat("task_discriminate: ", shape_str(e), " vs ", shape_str(a)));
  }
  Mat<S> ea(e.rows(), e.cols() + a.cols());
  ea << e, a;
  return forward(p.tdis, ea);
}

template <class S>
Var<S> classify(Tape<S>& t, TaeParams<S>& p, Var<S> e) {
  return apply(t, p.cls, e);
}

template <class S>
Mat<S> classify_value(const TaeParams<S>& p, const Mat<S>& e) {
  return forward(p.cls, e);
}

// ---- losses ----

// L_tdis: cross entropy of the task discriminator against the pseudo-labels,
// averaged over all rows. The optimizer descends this value; descending the
// CE is the same move as ascending the paper's -CE objective.
template <class S>
Var<S> loss_tdis(Tape<S>& t, TaeParams<S>& p, Var<S> e, Var<S> a,
                 const std::vector<int>& m) {
  return softmax_cross_entropy(task_discriminate(t, p, e, a), m);
}

// L_tc: reconstruction + confusion + classification, gradients restricted to
// theta_tc by binding the task discriminator as a constant.
template <class S>
Var<S> loss_tc(Tape<S>& t, TaeParams<S>& p, const AlignBatch<S>& batch,
               const TaeConfig<S>& cfg) {
  Var<S> x = t.constant(batch.x);
  Var<S> a = t.constant(batch.a);
  Var<S> e = encode(t, p, x);
  Var<S> rec = mse(decode(t, p, e), x);
  Var<S> adv = softmax_cross_entropy(
      apply_frozen(t, p.tdis, concat_cols(e, a)), batch.m);
  Var<S> cls = softmax_cross_entropy(classify(t, p, e), batch.y);
  return add(add(scale(rec, cfg.lambda_rec), scale(adv, -cfg.lambda_adv)),
             scale(cls, cfg.lambda_cls));
}

template <class S>
struct AlignReport {
  S loss_tdis = 0;
  S loss_tc = 0;
};

// Algorithm step: one Adam descent on L_tdis for theta_tdis, then one Adam
// descent on L_tc for theta_tc, both on the same episode batch.
template <class S>
AlignReport<S> align_step(Model<S>& model, const AlignBatch<S>& batch,
                          AdamState<S>& opt_tdis, AdamState<S>& opt_tc,
                          const TaeConfig<S>& cfg) {
  AlignReport<S> report;
  {
    Tape<S> t;
    Var<S> e = t.constant(encode_value(model.tae, batch.x));
    Var<S> loss = loss_tdis(t, model.tae, e, t.constant(batch.a), batch.m);
    report.loss_tdis = loss.value()(0, 0);
    ParamGroup<S> group = model.theta_tdis();
    GradMap<S> grads = t.backward(loss, group);
    adam_step(group, grads, opt_tdis, StepDirection::descend);
  }
  {
    Tape<S> t;
    Var<S> loss = loss_tc(t, model.tae, batch, cfg);
    report.loss_tc = loss.value()(0, 0);
    ParamGroup<S> group = model.theta_tc();
    GradMap<S> grads = t.backward(loss, group);
    adam_step(group, grads, opt_tc, StepDirection::descend);
  }
  return report;
}

}  // namespace tgmz
