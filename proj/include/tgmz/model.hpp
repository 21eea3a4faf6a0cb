#pragma once

#include <cstdint>

#include "tgmz/common.hpp"
#include "tgmz/nn.hpp"
#include "tgmz/params.hpp"
#include "tgmz/rng.hpp"

namespace tgmz {

template <class S>
struct ModelDims {
  Index d_x = 0;
  Index d_a = 0;
  Index d_e = 16;
  Index d_z = 0;        // 0 -> defaults to d_e
  int c_train = 0;      // classifier width (number of seen classes)
  int tasks = 4;        // task-discriminator width (pseudo-labels per episode)
  Index gen_hidden = 0; // 0 -> 4*d_e (encoder/decoder/generator)
  Index dis_hidden = 0; // 0 -> 2*d_e (discriminators/classifier)
  S slope = S(0.2);

  Index gen_width() const { return gen_hidden > 0 ? gen_hidden : 4 * d_e; }
  Index dis_width() const { return dis_hidden > 0 ? dis_hidden : 2 * d_e; }
  Index noise_width() const { return d_z > 0 ? d_z : d_e; }
};

// Task adversarial autoencoder: encoder, decoder, multi-label task
// discriminator on [e || a], and the classifier shared with the MGAN.
template <class S>
struct TaeParams {
  Mlp<S> te;    // d_x -> d_e
  Mlp<S> td;    // d_e -> d_x
  Mlp<S> tdis;  // d_e + d_a -> tasks
  Mlp<S> cls;   // d_e -> c_train
};

// Meta conditional GAN: attribute-conditioned generator and critic; the
// classifier is the same storage as TaeParams::cls.
template <class S>
struct MganParams {
  Mlp<S> g;            // d_z + d_a -> d_e
  Mlp<S> dis;          // d_e + d_a -> 1 (sigmoid applied at the head)
  Mlp<S>* cls = nullptr;
};

template <class S>
class Model {
 public:
  ModelDims<S> dims;
  TaeParams<S> tae;
  MganParams<S> mgan;

  Model(const ModelDims<S>& d, Rng& init_rng) : dims(d) {
    if (d.d_x <= 0 || d.d_a <= 0 || d.d_e <= 0 || d.c_train <= 0 || d.tasks <= 0) {
      throw ConfigError(cat("model: dims must be positive (d_x=", d.d_x, ", d_a=",
                            d.d_a, ", d_e=", d.d_e, ", c_train=", d.c_train,
                            ", tasks=", d.tasks, ")"));
    }
    tae.te = make_mlp<S>("tae.te", d.d_x, d.gen_width(), d.d_e, d.slope, init_rng);
    tae.td = make_mlp<S>("tae.td", d.d_e, d.gen_width(), d.d_x, d.slope, init_rng);
    tae.tdis = make_mlp<S>("tae.tdis", d.d_e + d.d_a, d.dis_width(), d.tasks,
                           d.slope, init_rng);
    tae.cls = make_mlp<S>("cls", d.d_e, d.dis_width(), d.c_train, d.slope, init_rng);
    mgan.g = make_mlp<S>("mgan.g", d.noise_width() + d.d_a, d.gen_width(), d.d_e,
                         d.slope, init_rng);
    mgan.dis = make_mlp<S>("mgan.dis", d.d_e + d.d_a, d.dis_width(), 1, d.slope,
                           init_rng);
    mgan.cls = &tae.cls;
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // theta_tc = {theta_te, theta_td, theta_cls}; theta_tdis excluded.
  ParamGroup<S> theta_tc() {
    ParamGroup<S> g;
    collect(tae.te, g);
    collect(tae.td, g);
    collect(tae.cls, g);
    return g;
  }
  ParamGroup<S> theta_tdis() {
    ParamGroup<S> g;
    collect(tae.tdis, g);
    return g;
  }
  // theta_gc = {theta_g, theta_cls}; theta_dis excluded.
  ParamGroup<S> theta_gc() {
    ParamGroup<S> g;
    collect(mgan.g, g);
    collect(*mgan.cls, g);
    return g;
  }
  ParamGroup<S> theta_dis() {
    ParamGroup<S> g;
    collect(mgan.dis, g);
    return g;
  }
  ParamGroup<S> all_params() {
    ParamGroup<S> g;
    collect(tae.te, g);
    collect(tae.td, g);
    collect(tae.tdis, g);
    collect(tae.cls, g);
    collect(mgan.g, g);
    collect(mgan.dis, g);
    return g;
  }
};

}  // namespace tgmz
