#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tgmz/adam.hpp"
#include "tgmz/batch_norm.hpp"
#include "tgmz/dataset.hpp"
#include "tgmz/episode.hpp"
#include "tgmz/mgan.hpp"
#include "tgmz/model.hpp"
#include "tgmz/tae.hpp"

namespace tgmz {

// ---- synthetic embedding sets ----

template <class S>
struct SynthesisSpec {
  std::vector<int> classes;  // global class ids to synthesize
  int samples_per_class = 100;
  S sigma = S(1);
  std::uint64_t seed = 0;

  void validate() const {
    if (samples_per_class < 1) {
      throw ConfigError(cat("synthesis: samples_per_class must be >= 1, got ",
                            samples_per_class));
    }
    if (!(sigma > S(0))) throw ConfigError("synthesis: sigma must be > 0");
    if (classes.empty()) throw ConfigError("synthesis: empty class set");
  }
};

template <class S>
struct LabeledSet {
  Mat<S> e;
  std::vector<int> y;  // global class ids
};

template <class S>
LabeledSet<S> synthesize_set(const SynthesisSpec<S>& spec, const Mat<S>& attributes,
                             const Mlp<S>& gen, Index d_z) {
  spec.validate();
  for (int c : spec.classes) {
    if (c < 0 || c >= int(attributes.rows())) {
      throw ConfigError(cat("synthesis: no attribute row for class ", c));
    }
  }
  Rng rng(spec.seed);
  const Index rows = Index(spec.classes.size()) * spec.samples_per_class;
  LabeledSet<S> set;
  set.e.resize(rows, gen.out_dim());
  set.y.reserve(std::size_t(rows));
  Index at = 0;
  for (int c : spec.classes) {
    Mat<S> z = draw_noise(Index(spec.samples_per_class), d_z, spec.sigma, rng);
    Mat<S> a = attributes.row(c).replicate(spec.samples_per_class, 1);
    set.e.middleRows(at, spec.samples_per_class) = generate_value(gen, z, a);
    for (int k = 0; k < spec.samples_per_class; ++k) set.y.push_back(c);
    at += spec.samples_per_class;
  }
  return set;
}

// ---- softmax head (two affine layers with batch norm) ----

template <class S>
struct ClassifierHead {
  Affine<S> l1;
  BatchNorm<S> bn;
  Affine<S> l2;
  S slope = S(0.2);
};

template <class S>
ClassifierHead<S> make_head(Index d_in, Index hidden, int classes, S slope, Rng& rng) {
  ClassifierHead<S> head;
  head.l1 = make_affine<S>("head.l1", d_in, hidden, rng);
  head.bn = make_batch_norm<S>("head.bn", hidden);
  head.l2 = make_affine<S>("head.l2", hidden, classes, rng);
  head.slope = slope;
  return head;
}

template <class S>
ParamGroup<S> head_params(ClassifierHead<S>& head) {
  return {&head.l1.w, &head.l1.b, &head.bn.gamma, &head.bn.beta, &head.l2.w, &head.l2.b};
}

// Eval-mode logits (frozen running stats).
template <class S>
Mat<S> head_logits(const ClassifierHead<S>& head, const Mat<S>& e) {
  Mat<S> h = affine_value(e, head.l1.w.value, head.l1.b.value);
  h = leaky_relu_value(batch_norm_value(head.bn, h), head.slope);
  return affine_value(h, head.l2.w.value, head.l2.b.value);
}

// Argmax with ties broken toward the lowest class index.
template <class S>
std::vector<int> head_predict(const ClassifierHead<S>& head, const Mat<S>& e) {
  Mat<S> logits = head_logits(head, e);
  std::vector<int> out(std::size_t(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    int arg = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, arg)) arg = int(c);
    }
    out[std::size_t(r)] = arg;
  }
  return out;
}

// Full-batch Adam on softmax cross entropy; batch norm runs in train mode
// while fitting and eval mode afterwards. Labels are head-space indices.
template <class S>
ClassifierHead<S> train_head(const Mat<S>& train_e, const std::vector<int>& labels,
                             int classes, int epochs, S lr, Index hidden, S slope,
                             Rng& rng) {
  if (train_e.rows() == 0) throw ContractError("train_head: empty training set");
  if (Index(labels.size()) != train_e.rows()) {
    throw ContractError(cat("train_head: ", labels.size(), " labels for ",
                            train_e.rows(), " rows"));
  }
  ClassifierHead<S> head = make_head<S>(train_e.cols(), hidden, classes, slope, rng);
  ParamGroup<S> params = head_params(head);
  AdamState<S> opt(AdamConfig<S>{lr}, params);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Tape<S> t;
    Var<S> h = apply(t, head.l1, t.constant(train_e));
    h = leaky_relu(batch_norm(t, head.bn, h, NormMode::train), head.slope);
    Var<S> loss = softmax_cross_entropy(apply(t, head.l2, h), labels);
    adam_step(params, t.backward(loss, params), opt, StepDirection::descend);
  }
  return head;
}

// ---- metrics ----

struct PerClassAccuracy {
  std::map<int, double> per_class;  // class id -> accuracy
  std::vector<int> excluded;        // evaluated classes with zero test rows
  double mean = 0;
};

// Accuracy within each class, then an unweighted mean over classes.
inline PerClassAccuracy per_class_top1(const std::vector<int>& predictions,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& classes) {
  if (predictions.size() != labels.size()) {
    throw ContractError(cat("per_class_top1: ", predictions.size(),
                            " predictions for ", labels.size(), " labels"));
  }
  PerClassAccuracy acc;
  std::map<int, std::pair<int, int>> hits;  // class -> (correct, total)
  for (int c : classes) hits.emplace(c, std::pair<int, int>{0, 0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = hits.find(labels[i]);
    if (it == hits.end()) {
      throw ContractError(cat("per_class_top1: label ", labels[i],
                              " outside the evaluated class set"));
    }
    it->second.second += 1;
    if (predictions[i] == labels[i]) it->second.first += 1;
  }
  int counted = 0;
  for (const auto& [c, counts] : hits) {
    if (counts.second == 0) {
      acc.excluded.push_back(c);
      continue;
    }
    const double a = double(counts.first) / double(counts.second);
    acc.per_class.emplace(c, a);
    acc.mean += a;
    ++counted;
  }
  if (counted > 0) acc.mean /= counted;
  return acc;
}

inline double harmonic_mean(double u, double s) {
  if (u + s == 0.0) return 0.0;
  return 2.0 * u * s / (u + s);
}

struct MetricsReport {
  std::string setting;  // zsl | gzsl | fusion
  double u = 0;
  double s = 0;
  double h = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::map<int, double> per_class;
  std::vector<int> excluded;
  std::map<std::string, double> per_source;  // fusion: source name -> mean U

  std::string record_line() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%llu,%llu", setting.c_str(),
                  u, s, h, static_cast<unsigned long long>(seed),
                  static_cast<unsigned long long>(config_hash));
    return buf;
  }
};

// ---- evaluation protocols ----

template <class S>
struct EvalConfig {
  int samples_per_class = 100;
  S sigma = S(1);
  int head_epochs = 300;
  S head_lr = S(1e-2);
  Index head_hidden = 0;  // 0 -> 2 * d_e
  std::uint64_t seed = 0;
};

namespace eval_detail {

// Gather and encode the test rows of the given classes through the task
// encoder (evaluation is the first point where unseen rows may be read).
template <class S>
std::pair<Mat<S>, std::vector<int>> encoded_test_rows(const Dataset<S>& d,
                                                      const Model<S>& model,
                                                      const InstanceSplit& inst,
                                                      const std::vector<int>& classes) {
  Index total = 0;
  for (int c : classes) total += Index(inst.test_rows[std::size_t(c)].size());
  Mat<S> x(total, d.feature_dim());
  std::vector<int> y;
  y.reserve(std::size_t(total));
  Index at = 0;
  for (int c : classes) {
    for (Index r : inst.test_rows[std::size_t(c)]) {
      x.row(at++) = d.feature_row(r);
      y.push_back(c);
    }
  }
  return {encode_value(model.tae, x), std::move(y)};
}

template <class S>
std::pair<Mat<S>, std::vector<int>> encoded_train_rows(const Dataset<S>& d,
                                                       const Model<S>& model,
                                                       const InstanceSplit& inst,
                                                       const std::vector<int>& classes) {
  Index total = 0;
  for (int c : classes) total += Index(inst.train_rows[std::size_t(c)].size());
  Mat<S> x(total, d.feature_dim());
  std::vector<int> y;
  y.reserve(std::size_t(total));
  Index at = 0;
  for (int c : classes) {
    for (Index r : inst.train_rows[std::size_t(c)]) {
      x.row(at++) = d.feature_row(r);
      y.push_back(c);
    }
  }
  return {encode_value(model.tae, x), std::move(y)};
}

inline std::vector<int> to_head_space(const std::vector<int>& global,
                                      const std::map<int, int>& index) {
  std::vector<int> out;
  out.reserve(global.size());
  for (int c : global) out.push_back(index.at(c));
  return out;
}

}  // namespace eval_detail

// ZSL: train a fresh head on synthetic unseen embeddings only; evaluate on
// encoded real unseen instances.
template <class S>
MetricsReport eval_zsl(const Dataset<S>& d, const SplitSpec& split,
                       const InstanceSplit& inst, const Model<S>& model,
                       const EvalConfig<S>& cfg, const char* setting = "zsl") {
  SynthesisSpec<S> synth_spec;
  synth_spec.classes = split.unseen;
  synth_spec.samples_per_class = cfg.samples_per_class;
  synth_spec.sigma = cfg.sigma;
  synth_spec.seed = rng_stream(cfg.seed, "synthesis").next_u64();
  LabeledSet<S> synth =
      synthesize_set(synth_spec, d.A, model.mgan.g, model.dims.noise_width());

  std::map<int, int> head_index;
  for (std::size_t i = 0; i < split.unseen.size(); ++i) {
    head_index.emplace(split.unseen[i], int(i));
  }
  Rng head_rng = rng_stream(cfg.seed, "head");
  const Index hidden = cfg.head_hidden > 0 ? cfg.head_hidden : 2 * model.dims.d_e;
  ClassifierHead<S> head = train_head<S>(
      synth.e, eval_detail::to_head_space(synth.y, head_index), int(split.unseen.size()),
      cfg.head_epochs, cfg.head_lr, hidden, model.dims.slope, head_rng);

  auto [test_e, test_y] = eval_detail::encoded_test_rows(d, model, inst, split.unseen);
  std::vector<int> pred_head = head_predict(head, test_e);
  std::vector<int> head_classes(split.unseen.size());
  for (std::size_t i = 0; i < split.unseen.size(); ++i) head_classes[i] = int(i);
  PerClassAccuracy acc = per_class_top1(
      pred_head, eval_detail::to_head_space(test_y, head_index), head_classes);

  MetricsReport report;
  report.setting = setting;
  report.u = acc.mean;
  report.s = 0;
  report.h = 0;
  for (const auto& [head_c, a] : acc.per_class) {
    report.per_class.emplace(split.unseen[std::size_t(head_c)], a);
  }
  for (int head_c : acc.excluded) {
    report.excluded.push_back(split.unseen[std::size_t(head_c)]);
  }
  return report;
}

// GZSL: head over all classes, trained on encoded real seen training rows
// plus synthetic unseen embeddings; U and S on held-out real instances.
template <class S>
MetricsReport eval_gzsl(const Dataset<S>& d, const SplitSpec& split,
                        const InstanceSplit& inst, const Model<S>& model,
                        const EvalConfig<S>& cfg) {
  auto [seen_e, seen_y] = eval_detail::encoded_train_rows(d, model, inst, split.seen);

  Mat<S> train_e;
  std::vector<int> train_y;
  if (cfg.samples_per_class > 0) {
    SynthesisSpec<S> synth_spec;
    synth_spec.classes = split.unseen;
    synth_spec.samples_per_class = cfg.samples_per_class;
    synth_spec.sigma = cfg.sigma;
    synth_spec.seed = rng_stream(cfg.seed, "synthesis").next_u64();
    LabeledSet<S> synth =
        synthesize_set(synth_spec, d.A, model.mgan.g, model.dims.noise_width());
    train_e.resize(seen_e.rows() + synth.e.rows(), seen_e.cols());
    train_e << seen_e, synth.e;
    train_y = seen_y;
    train_y.insert(train_y.end(), synth.y.begin(), synth.y.end());
  } else {
    train_e = seen_e;  // seen-bias ablation: no synthetic augmentation
    train_y = seen_y;
  }

  const int classes = d.num_classes();
  Rng head_rng = rng_stream(cfg.seed, "head");
  const Index hidden = cfg.head_hidden > 0 ? cfg.head_hidden : 2 * model.dims.d_e;
  ClassifierHead<S> head =
      train_head<S>(train_e, train_y, classes, cfg.head_epochs, cfg.head_lr, hidden,
                    model.dims.slope, head_rng);

  auto [unseen_e, unseen_y] = eval_detail::encoded_test_rows(d, model, inst, split.unseen);
  auto [seen_test_e, seen_test_y] =
      eval_detail::encoded_test_rows(d, model, inst, split.seen);
  if (seen_test_e.rows() == 0) {
    throw ContractError("gzsl: no held-out seen instances (set holdout_fraction > 0)");
  }
  PerClassAccuracy u_acc =
      per_class_top1(head_predict(head, unseen_e), unseen_y, split.unseen);
  PerClassAccuracy s_acc =
      per_class_top1(head_predict(head, seen_test_e), seen_test_y, split.seen);

  MetricsReport report;
  report.setting = "gzsl";
  report.u = u_acc.mean;
  report.s = s_acc.mean;
  report.h = harmonic_mean(report.u, report.s);
  report.per_class = u_acc.per_class;
  for (const auto& [c, a] : s_acc.per_class) report.per_class.emplace(c, a);
  report.excluded = u_acc.excluded;
  report.excluded.insert(report.excluded.end(), s_acc.excluded.begin(),
                         s_acc.excluded.end());
  return report;
}

// Fusion ZSL: the ZSL protocol on a fused class space, with per-source mean
// accuracies recovered through the offset table.
template <class S>
MetricsReport eval_fusion(const Dataset<S>& d, const SplitSpec& split,
                          const InstanceSplit& inst, const Model<S>& model,
                          const EvalConfig<S>& cfg) {
  MetricsReport report = eval_zsl(d, split, inst, model, cfg, "fusion");
  for (const SourceSpan& span : d.sources) {
    double total = 0;
    int count = 0;
    for (const auto& [c, a] : report.per_class) {
      if (c >= span.class_offset && c < span.class_offset + span.class_count) {
        total += a;
        ++count;
      }
    }
    if (count > 0) report.per_source.emplace(span.name, total / count);
  }
  return report;
}

// ---- projection export (top-2 principal components) ----

template <class S>
Mat<S> pca_project_2d(const Mat<S>& e) {
  if (e.rows() < 2) {
    throw ContractError(cat("projection: need at least 2 rows, got ", e.rows()));
  }
  Mat<S> centered = e.rowwise() - e.colwise().mean().row(0).eval();
  if (centered.cwiseAbs().maxCoeff() == S(0)) {
    throw ContractError("projection: fewer than 2 distinct rows");
  }
  Mat<S> cov = centered.transpose() * centered / S(e.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Mat<S>> solver(cov);
  // eigenvalues ascend; take the last two columns in descending order
  const Index d = cov.cols();
  Mat<S> basis(d, 2);
  basis.col(0) = solver.eigenvectors().col(d - 1);
  if (d >= 2) {
    basis.col(1) = solver.eigenvectors().col(d - 2);
  } else {
    basis.col(1) = basis.col(0);
  }
  return centered * basis;
}

template <class S>
void export_projection(const Mat<S>& e, const std::vector<int>& labels,
                       const std::filesystem::path& path) {
  if (Index(labels.size()) != e.rows()) {
    throw ContractError(cat("projection: ", labels.size(), " labels for ", e.rows(),
                            " rows"));
  }
  Mat<S> projected = pca_project_2d(e);
  std::ofstream os(path);
  if (!os) throw FormatError(cat("cannot write ", path.string()));
  for (Index r = 0; r < projected.rows(); ++r) {
    os << io_detail::format_real(double(projected(r, 0))) << " "
       << io_detail::format_real(double(projected(r, 1))) << " "
       << labels[std::size_t(r)] << "\n";
  }
}

}  // namespace tgmz
