#pragma once

#include <vector>

#include "tgmz/adam.hpp"
#include "tgmz/episode.hpp"
#include "tgmz/model.hpp"
#include "tgmz/ops.hpp"
#include "tgmz/tae.hpp"

namespace tgmz {

enum class InnerMode { shared, per_task };

template <class S>
struct MetaConfig {
  S alpha1 = S(1e-3);  // inner critic ascent
  S alpha2 = S(1e-3);  // inner gc descent
  S beta1 = S(1e-4);   // outer critic ascent
  S beta2 = S(1e-4);   // outer gc descent
  InnerMode inner_mode = InnerMode::shared;
  int inner_steps = 1;
  S sigma = S(1);      // noise standard deviation

  void validate() const {
    if (alpha1 < S(0) || alpha2 < S(0) || beta1 < S(0) || beta2 < S(0)) {
      throw ConfigError("meta: step sizes must be >= 0");
    }
    if (inner_steps < 1) throw ConfigError("meta: inner_steps must be >= 1");
    if (!(sigma > S(0))) throw ConfigError("meta: sigma must be > 0");
  }
};

// One task in embedding space: encoded support/query rows with their
// attributes, training-class labels, and the episode's noise draws (one z per
// real row, redrawn every episode, shared by all objective evaluations).
template <class S>
struct EmbBlock {
  Mat<S> e;
  Mat<S> a;
  std::vector<int> y;
  Mat<S> z;
};

template <class S>
struct EmbTask {
  EmbBlock<S> support;
  EmbBlock<S> query;
};

template <class S>
Mat<S> draw_noise(Index rows, Index d_z, S sigma, Rng& rng) {
  Mat<S> z(rows, d_z);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = sigma * S(rng.normal());
  return z;
}

// Algorithm line: T̂_j <- f_te(T_j) for every task, with fresh noise.
template <class S>
std::vector<EmbTask<S>> encode_episode(const Model<S>& model, const Episode<S>& episode,
                                       const std::vector<int>& train_class_index,
                                       S sigma, Rng& noise_rng) {
  std::vector<EmbTask<S>> tasks;
  tasks.reserve(episode.tasks.size());
  const Index d_z = model.dims.noise_width();
  for (const Task<S>& t : episode.tasks) {
    EmbTask<S> emb;
    auto fill = [&](const TaskBlock<S>& block, EmbBlock<S>& out) {
      out.e = encode_value(model.tae, block.x);
      out.a = block.a;
      out.y.reserve(block.y.size());
      for (int label : block.y) {
        const int idx = train_class_index[std::size_t(label)];
        if (idx < 0) throw ContractError(cat("episode contains unseen class ", label));
        out.y.push_back(idx);
      }
      out.z = draw_noise(block.x.rows(), d_z, sigma, noise_rng);
    };
    fill(t.support, emb.support);
    fill(t.query, emb.query);
    tasks.push_back(std::move(emb));
  }
  return tasks;
}

// ---- forwards ----

template <class S>
Var<S> generate(Tape<S>& t, Mlp<S>& gen, Var<S> z, Var<S> a) {
  return apply(t, gen, concat_cols(z, a));
}

template <class S>
Mat<S> generate_value(const Mlp<S>& gen, const Mat<S>& z, const Mat<S>& a) {
  if (z.rows() != a.rows()) {
    throw DimensionError(cat("generate: ", shape_str(z), " vs ", shape_str(a)));
  }
  Mat<S> za(z.rows(), z.cols() + a.cols());
  za << z, a;
  return forward(gen, za);
}

template <class S>
Var<S> critic_score(Tape<S>& t, Mlp<S>& dis, Var<S> e, Var<S> a) {
  return sigmoid(apply(t, dis, concat_cols(e, a)));
}

template <class S>
Mat<S> critic_value(const Mlp<S>& dis, const Mat<S>& e, const Mat<S>& a) {
  if (e.rows() != a.rows()) {
    throw DimensionError(cat("critic: ", shape_str(e), " vs ", shape_str(a)));
  }
  Mat<S> ea(e.rows(), e.cols() + a.cols());
  ea << e, a;
  return sigmoid_value(forward(dis, ea));
}

// ---- task-specific objectives (Eq. 4) ----

// mean critic(e,a) - mean critic(ê,a): ascended by theta_dis. The generator
// participates as a constant.
template <class S>
Var<S> critic_objective(Tape<S>& t, Mlp<S>& dis, const Mlp<S>& gen,
                        const EmbBlock<S>& block) {
  Var<S> a = t.constant(block.a);
  Var<S> real = critic_score(t, dis, t.constant(block.e), a);
  Var<S> fake = critic_score(t, dis, t.constant(generate_value(gen, block.z, block.a)), a);
  return sub(mean_all(real), mean_all(fake));
}

// -mean critic(ê,a) + CE(classify(ê), y): descended by theta_gc. The critic
// participates frozen; gradients flow through ê into the generator.
template <class S>
Var<S> gc_objective(Tape<S>& t, Mlp<S>& gen, Mlp<S>& cls, const Mlp<S>& dis,
                    const EmbBlock<S>& block) {
  Var<S> a = t.constant(block.a);
  Var<S> fake = generate(t, gen, t.constant(block.z), a);
  Var<S> score = sigmoid(apply_frozen(t, dis, concat_cols(fake, a)));
  Var<S> ce = softmax_cross_entropy(apply(t, cls, fake), block.y);
  return add(neg(mean_all(score)), ce);
}

template <class S>
struct ZslObjectives {
  S critic = 0;
  S gc = 0;
};

// Both Eq. 4 objective values on one block (reporting / tests).
template <class S>
ZslObjectives<S> loss_zsl(const Mlp<S>& dis, const Mlp<S>& gen, const Mlp<S>& cls,
                          const EmbBlock<S>& block) {
  Mat<S> fake = generate_value(gen, block.z, block.a);
  Mat<S> real_scores = critic_value(dis, block.e, block.a);
  Mat<S> fake_scores = critic_value(dis, fake, block.a);
  ZslObjectives<S> out;
  out.critic = real_scores.mean() - fake_scores.mean();
  Tape<S> t;
  Var<S> ce = softmax_cross_entropy(t.constant(forward(cls, fake)), block.y);
  out.gc = -fake_scores.mean() + ce.value()(0, 0);
  return out;
}

// ---- meta-learning (Eq. 5-8, Algorithm 1 lines 7-15) ----

// Deep-copied adapted parameters; one snapshot in shared mode, one per task
// in per_task mode. Base parameters are never aliased.
template <class S>
struct AdaptedParams {
  InnerMode mode = InnerMode::shared;
  std::vector<Mlp<S>> dis;
  std::vector<Mlp<S>> g;
  std::vector<Mlp<S>> cls;

  std::size_t index_for_task(std::size_t j) const {
    return mode == InnerMode::shared ? 0 : j;
  }
};

namespace detail {

template <class S>
GradMap<S> critic_grad(Mlp<S>& dis, const Mlp<S>& gen, const EmbBlock<S>& block,
                       S* value = nullptr) {
  Tape<S> t;
  Var<S> obj = critic_objective(t, dis, gen, block);
  if (value) *value = obj.value()(0, 0);
  ParamGroup<S> group;
  collect(dis, group);
  return t.backward(obj, group);
}

template <class S>
GradMap<S> gc_grad(Mlp<S>& gen, Mlp<S>& cls, const Mlp<S>& dis,
                   const EmbBlock<S>& block, S* value = nullptr) {
  Tape<S> t;
  Var<S> obj = gc_objective(t, gen, cls, dis, block);
  if (value) *value = obj.value()(0, 0);
  ParamGroup<S> group;
  collect(gen, group);
  collect(cls, group);
  return t.backward(obj, group);
}

// One plain-gradient inner update pair on the given support blocks, both
// gradients evaluated at the current adapted values.
template <class S>
void inner_step(Mlp<S>& dis, Mlp<S>& gen, Mlp<S>& cls,
                const std::vector<const EmbBlock<S>*>& blocks, const MetaConfig<S>& cfg) {
  GradMap<S> dis_sum, gc_sum;
  for (const EmbBlock<S>* block : blocks) {
    add_into(dis_sum, critic_grad(dis, gen, *block));
    add_into(gc_sum, gc_grad(gen, cls, dis, *block));
  }
  ParamGroup<S> dis_group, gc_group;
  collect(dis, dis_group);
  collect(gen, gc_group);
  collect(cls, gc_group);
  axpy(dis_group, dis_sum, cfg.alpha1);   // Eq. 5: ascent
  axpy(gc_group, gc_sum, -cfg.alpha2);    // Eq. 6: descent
}

}  // namespace detail

// Task-specific optimal parameters from the support encodings; base
// parameters are left untouched.
template <class S>
AdaptedParams<S> inner_adapt(const Model<S>& model,
                             const std::vector<EmbTask<S>>& tasks,
                             const MetaConfig<S>& cfg) {
  AdaptedParams<S> adapted;
  adapted.mode = cfg.inner_mode;
  const std::size_t copies = cfg.inner_mode == InnerMode::shared ? 1 : tasks.size();
  for (std::size_t c = 0; c < copies; ++c) {
    adapted.dis.push_back(clone(model.mgan.dis));
    adapted.g.push_back(clone(model.mgan.g));
    adapted.cls.push_back(clone(*model.mgan.cls));
  }
  if (cfg.inner_mode == InnerMode::shared) {
    std::vector<const EmbBlock<S>*> blocks;
    for (const EmbTask<S>& t : tasks) blocks.push_back(&t.support);
    for (int step = 0; step < cfg.inner_steps; ++step) {
      detail::inner_step(adapted.dis[0], adapted.g[0], adapted.cls[0], blocks, cfg);
    }
  } else {
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      std::vector<const EmbBlock<S>*> blocks{&tasks[j].support};
      for (int step = 0; step < cfg.inner_steps; ++step) {
        detail::inner_step(adapted.dis[j], adapted.g[j], adapted.cls[j], blocks, cfg);
      }
    }
  }
  return adapted;
}

template <class S>
struct MetaReport {
  S critic_obj = 0;  // mean query critic objective at the adapted parameters
  S gc_obj = 0;      // mean query gc objective at the adapted parameters
  S upd_norm_dis = 0;
  S upd_norm_gc = 0;
};

// First-order meta-update: query gradients evaluated at the adapted
// parameters, summed over tasks in pseudo-label order, applied to the base.
template <class S>
MetaReport<S> meta_update(Model<S>& model, AdaptedParams<S>& adapted,
                          const std::vector<EmbTask<S>>& tasks,
                          const MetaConfig<S>& cfg) {
  MetaReport<S> report;
  GradMap<S> dis_sum, gc_sum;
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    const std::size_t c = adapted.index_for_task(j);
    S critic_value = 0, gc_value = 0;
    add_into(dis_sum, detail::critic_grad(adapted.dis[c], adapted.g[c],
                                          tasks[j].query, &critic_value));
    add_into(gc_sum, detail::gc_grad(adapted.g[c], adapted.cls[c], adapted.dis[c],
                                     tasks[j].query, &gc_value));
    report.critic_obj += critic_value;
    report.gc_obj += gc_value;
  }
  if (!tasks.empty()) {
    report.critic_obj /= S(tasks.size());
    report.gc_obj /= S(tasks.size());
  }
  ParamGroup<S> dis_group = model.theta_dis();
  ParamGroup<S> gc_group = model.theta_gc();
  axpy(dis_group, dis_sum, cfg.beta1);   // Eq. 7: ascent
  axpy(gc_group, gc_sum, -cfg.beta2);    // Eq. 8: descent
  report.upd_norm_dis = cfg.beta1 * S(std::sqrt(double(grad_sq_norm(dis_sum))));
  report.upd_norm_gc = cfg.beta2 * S(std::sqrt(double(grad_sq_norm(gc_sum))));
  return report;
}

template <class S>
struct EpisodeReport {
  S loss_tdis = 0;
  S loss_tc = 0;
  S critic_obj = 0;
  S gc_obj = 0;
  S upd_norm_dis = 0;
  S upd_norm_gc = 0;
};

// Full Algorithm-1 episode: alignment step, re-encoding with the updated
// encoder, inner adaptation on support encodings, meta-update on query
// encodings. With alignment disabled the TAE stays at initialization.
template <class S>
EpisodeReport<S> train_episode(Model<S>& model, const Episode<S>& episode,
                               const std::vector<int>& train_class_index,
                               AdamState<S>& opt_tdis, AdamState<S>& opt_tc,
                               const TaeConfig<S>& tae_cfg, const MetaConfig<S>& meta_cfg,
                               Rng& noise_rng, bool disable_alignment = false) {
  EpisodeReport<S> report;
  AlignBatch<S> batch = flatten_episode(episode, train_class_index);
  if (!disable_alignment) {
    AlignReport<S> align = align_step(model, batch, opt_tdis, opt_tc, tae_cfg);
    report.loss_tdis = align.loss_tdis;
    report.loss_tc = align.loss_tc;
  }
  std::vector<EmbTask<S>> tasks =
      encode_episode(model, episode, train_class_index, meta_cfg.sigma, noise_rng);
  AdaptedParams<S> adapted = inner_adapt(model, tasks, meta_cfg);
  MetaReport<S> meta = meta_update(model, adapted, tasks, meta_cfg);
  report.critic_obj = meta.critic_obj;
  report.gc_obj = meta.gc_obj;
  report.upd_norm_dis = meta.upd_norm_dis;
  report.upd_norm_gc = meta.upd_norm_gc;
  return report;
}

}  // namespace tgmz
