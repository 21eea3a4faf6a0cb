#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "tgmz/checkpoint.hpp"
#include "tgmz/config.hpp"
#include "tgmz/dataset.hpp"
#include "tgmz/episode.hpp"
#include "tgmz/eval.hpp"
#include "tgmz/mgan.hpp"
#include "tgmz/model.hpp"
#include "tgmz/tae.hpp"

namespace tgmz {

template <class S>
struct PreparedData {
  Dataset<S> data;
  SplitSpec split;
  InstanceSplit inst;
  std::vector<int> train_class_index;
};

// Dataset + splits + per-instance holdout, identically reconstructible from
// the config alone (training and evaluation must agree on all of it).
template <class S>
PreparedData<S> prepare_data(const RunConfig& cfg) {
  PreparedData<S> prep;
  if (!cfg.data_path.empty()) {
    prep.data = load_dataset<S>(cfg.data_path);
    prep.split = load_splits(cfg.data_path, prep.data.num_classes());
  } else {
    SyntheticSpec spec = cfg.synthetic;
    spec.seed = cfg.synthetic_seed();
    prep.data = make_synthetic<S>(spec);
    prep.split = split_for_synthetic(prep.data, spec);
  }
  prep.inst = make_instance_split(prep.data, prep.split, cfg.holdout_fraction, cfg.seed);
  if (cfg.standardize) {
    std::vector<Index> fit_rows;
    for (int c : prep.split.seen) {
      const auto& rows = prep.inst.train_rows[std::size_t(c)];
      fit_rows.insert(fit_rows.end(), rows.begin(), rows.end());
    }
    standardize_features(prep.data, fit_rows);
  }
  prep.train_class_index = prep.split.train_class_index(prep.data.num_classes());
  prep.data.reset_audit();
  return prep;
}

template <class S>
ModelDims<S> dims_from_config(const RunConfig& cfg, const PreparedData<S>& prep) {
  ModelDims<S> dims;
  dims.d_x = prep.data.feature_dim();
  dims.d_a = prep.data.attribute_dim();
  dims.d_e = cfg.d_e;
  dims.d_z = cfg.d_z;
  dims.c_train = int(prep.split.seen.size());
  dims.tasks = cfg.episode.tasks;
  dims.gen_hidden = cfg.gen_hidden;
  dims.dis_hidden = cfg.dis_hidden;
  dims.slope = S(cfg.slope);
  return dims;
}

template <class S>
TaeConfig<S> tae_config(const RunConfig& cfg) {
  TaeConfig<S> out;
  out.lambda_rec = S(cfg.lambda_rec);
  out.lambda_adv = S(cfg.lambda_adv);
  out.lambda_cls = S(cfg.lambda_cls);
  out.lr_tc = S(cfg.lr_tc);
  out.lr_tdis = S(cfg.lr_tdis);
  return out;
}

template <class S>
MetaConfig<S> meta_config(const RunConfig& cfg) {
  MetaConfig<S> out;
  out.alpha1 = S(cfg.alpha1);
  out.alpha2 = S(cfg.alpha2);
  out.beta1 = S(cfg.beta1);
  out.beta2 = S(cfg.beta2);
  out.inner_mode = cfg.inner_mode == "per_task" ? InnerMode::per_task : InnerMode::shared;
  out.inner_steps = cfg.inner_steps;
  out.sigma = S(cfg.sigma);
  return out;
}

template <class S>
EvalConfig<S> eval_config(const RunConfig& cfg) {
  EvalConfig<S> out;
  out.samples_per_class = cfg.samples_per_class;
  out.sigma = S(cfg.synthesis_sigma);
  out.head_epochs = cfg.head_epochs;
  out.head_lr = S(cfg.head_lr);
  out.head_hidden = cfg.head_hidden;
  out.seed = cfg.seed;
  return out;
}

template <class S>
std::uint64_t count_unseen_reads(const Dataset<S>& d, const SplitSpec& split) {
  std::vector<std::uint8_t> unseen_class(std::size_t(d.num_classes()), 0);
  for (int c : split.unseen) unseen_class[std::size_t(c)] = 1;
  std::uint64_t reads = 0;
  const auto& touched = d.touched_rows();
  for (std::size_t i = 0; i < touched.size(); ++i) {
    if (touched[i] && unseen_class[std::size_t(d.labels[i])]) ++reads;
  }
  return reads;
}

template <class S>
struct TrainResult {
  RunConfig cfg;
  std::uint64_t hash = 0;
  PreparedData<S> prep;
  std::unique_ptr<Model<S>> model;
  AdamState<S> opt_tdis;
  AdamState<S> opt_tc;
  std::map<std::string, Rng::State> rng_states;
  std::vector<EpisodeReport<S>> log;
  std::uint64_t unseen_reads_during_training = 0;
};

template <class S>
std::string format_log_line(int episode, const EpisodeReport<S>& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", episode,
                double(r.loss_tdis), double(r.loss_tc), double(r.critic_obj),
                double(r.gc_obj), double(r.upd_norm_dis), double(r.upd_norm_gc));
  return buf;
}

// Fixed-count episode loop (Algorithm 1's "while not done"); aborts on the
// first NaN loss, naming the episode and the offending term.
template <class S>
TrainResult<S> run_train(const RunConfig& cfg, bool write_outputs = true) {
  cfg.validate();
  TrainResult<S> result;
  result.cfg = cfg;
  result.hash = config_hash(cfg);
  result.prep = prepare_data<S>(cfg);

  Rng init_rng = rng_stream(cfg.seed, "init");
  result.model = std::make_unique<Model<S>>(dims_from_config<S>(cfg, result.prep),
                                            init_rng);
  const TaeConfig<S> tae_cfg = tae_config<S>(cfg);
  const MetaConfig<S> meta_cfg = meta_config<S>(cfg);
  tae_cfg.validate();
  meta_cfg.validate();
  result.opt_tdis = AdamState<S>(AdamConfig<S>{tae_cfg.lr_tdis}, result.model->theta_tdis());
  result.opt_tc = AdamState<S>(AdamConfig<S>{tae_cfg.lr_tc}, result.model->theta_tc());

  Rng sampler = rng_stream(cfg.seed, "sampling");
  Rng noise = rng_stream(cfg.seed, "noise");

  result.log.reserve(std::size_t(cfg.episodes));
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    Episode<S> episode = sample_episode(result.prep.data, result.prep.split,
                                        result.prep.inst, cfg.episode, sampler.next_u64());
    EpisodeReport<S> report = train_episode(
        *result.model, episode, result.prep.train_class_index, result.opt_tdis,
        result.opt_tc, tae_cfg, meta_cfg, noise, cfg.disable_alignment);
    auto check_finite = [&](S value, const char* term) {
      if (std::isnan(double(value)) || std::isinf(double(value))) {
        throw ContractError(cat("episode ", ep, ": ", term, " is not finite"));
      }
    };
    check_finite(report.loss_tdis, "loss_tdis");
    check_finite(report.loss_tc, "loss_tc");
    check_finite(report.critic_obj, "critic_obj");
    check_finite(report.gc_obj, "gc_obj");
    result.log.push_back(report);
  }
  result.rng_states.emplace("sampling", sampler.state());
  result.rng_states.emplace("noise", noise.state());
  result.unseen_reads_during_training =
      count_unseen_reads(result.prep.data, result.prep.split);

  if (write_outputs) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    {
      std::ofstream os(fs::path(cfg.out_dir) / "resolved.ini");
      os << emit_config(cfg);
    }
    {
      std::ofstream os(fs::path(cfg.out_dir) / "train.log");
      for (int ep = 0; ep < int(result.log.size()); ++ep) {
        os << format_log_line(ep, result.log[std::size_t(ep)]) << "\n";
      }
    }
    std::map<std::string, const AdamState<S>*> opts{{"tdis", &result.opt_tdis},
                                                    {"tc", &result.opt_tc}};
    CheckpointData data = make_checkpoint(result.hash, std::uint64_t(cfg.episodes),
                                          *result.model, opts, result.rng_states);
    save_checkpoint(fs::path(cfg.out_dir) / "checkpoint.bin", data);
  }
  return result;
}

// Evaluation against in-memory state (the CLI wrapper reloads from disk).
template <class S>
MetricsReport evaluate(const PreparedData<S>& prep, const Model<S>& model,
                       const RunConfig& cfg, const std::string& setting) {
  EvalConfig<S> ecfg = eval_config<S>(cfg);
  if (ecfg.head_hidden <= 0) ecfg.head_hidden = 2 * model.dims.d_e;
  MetricsReport report;
  if (setting == "zsl") {
    report = eval_zsl(prep.data, prep.split, prep.inst, model, ecfg);
  } else if (setting == "gzsl") {
    report = eval_gzsl(prep.data, prep.split, prep.inst, model, ecfg);
  } else if (setting == "fusion") {
    report = eval_fusion(prep.data, prep.split, prep.inst, model, ecfg);
  } else {
    throw ConfigError(cat("unknown evaluation setting '", setting, "'"));
  }
  report.seed = cfg.seed;
  report.config_hash = config_hash(cfg);
  return report;
}

template <class S>
MetricsReport run_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                           const std::string& setting, bool export_proj = false) {
  cfg.validate();
  CheckpointData data = load_checkpoint(checkpoint);
  const std::uint64_t expected = config_hash(cfg);
  if (data.config_hash != expected) {
    throw ContractError(cat("checkpoint config hash ", data.config_hash,
                            " does not match config hash ", expected));
  }
  PreparedData<S> prep = prepare_data<S>(cfg);
  Rng init_rng = rng_stream(cfg.seed, "init");
  Model<S> model(dims_from_config<S>(cfg, prep), init_rng);
  apply_checkpoint_params(data, model);

  MetricsReport report = evaluate(prep, model, cfg, setting);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream os(fs::path(cfg.out_dir) / "metrics.csv", std::ios::app);
    os << report.record_line() << "\n";
  }
  if (export_proj) {
    EvalConfig<S> ecfg = eval_config<S>(cfg);
    SynthesisSpec<S> synth_spec;
    synth_spec.classes = prep.split.unseen;
    synth_spec.samples_per_class = std::max(1, ecfg.samples_per_class);
    synth_spec.sigma = ecfg.sigma;
    synth_spec.seed = rng_stream(ecfg.seed, "synthesis").next_u64();
    LabeledSet<S> synth =
        synthesize_set(synth_spec, prep.data.A, model.mgan.g, model.dims.noise_width());
    export_projection(synth.e, synth.y,
                      fs::path(cfg.out_dir) / ("projection_" + setting + ".txt"));
  }
  return report;
}

}  // namespace tgmz
