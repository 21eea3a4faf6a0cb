#pragma once

#include <cstdint>
#include <vector>

#include "tgmz/common.hpp"
#include "tgmz/dataset.hpp"
#include "tgmz/rng.hpp"

namespace tgmz {

// K classes x N instances per task block; the sampling sentence of the task
// construction is followed literally (K = classes, N = instances per class).
struct EpisodeSpec {
  int tasks = 4;                // i
  int classes_per_task = 3;     // K
  int instances_per_class = 5;  // N
};

template <class S>
struct TaskBlock {
  Mat<S> x;             // (K*N) x d_x
  Mat<S> a;             // (K*N) x d_a, the class attribute row per instance
  std::vector<int> y;   // global class ids
};

template <class S>
struct Task {
  TaskBlock<S> support;
  TaskBlock<S> query;
  int pseudo_label = 0;  // position within the episode
};

template <class S>
struct Episode {
  std::vector<Task<S>> tasks;
  std::uint64_t seed = 0;
};

// Per-class instance pools. Seen classes are split into train/test rows so
// GZSL can score seen classes on instances the model never trained on;
// unseen classes keep all rows on the test side.
struct InstanceSplit {
  std::vector<std::vector<Index>> train_rows;
  std::vector<std::vector<Index>> test_rows;
};

template <class S>
InstanceSplit make_instance_split(const Dataset<S>& d, const SplitSpec& split,
                                  double holdout_fraction, std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError(cat("holdout fraction must lie in [0,1), got ", holdout_fraction));
  }
  InstanceSplit inst;
  const auto by_class = d.rows_by_class();
  inst.train_rows.resize(by_class.size());
  inst.test_rows.resize(by_class.size());
  Rng rng = rng_stream(seed, "holdout");
  for (int c = 0; c < d.num_classes(); ++c) {
    std::vector<Index> rows = by_class[std::size_t(c)];
    if (!split.is_seen(c)) {
      inst.test_rows[std::size_t(c)] = std::move(rows);
      continue;
    }
    rng.shuffle(rows);
    Index n_test = Index(std::llround(holdout_fraction * double(rows.size())));
    n_test = std::min(n_test, Index(rows.size()) - 1);
    inst.test_rows[std::size_t(c)].assign(rows.begin(), rows.begin() + n_test);
    inst.train_rows[std::size_t(c)].assign(rows.begin() + n_test, rows.end());
    std::sort(inst.test_rows[std::size_t(c)].begin(), inst.test_rows[std::size_t(c)].end());
    std::sort(inst.train_rows[std::size_t(c)].begin(), inst.train_rows[std::size_t(c)].end());
  }
  return inst;
}

namespace detail {

// Sample `count` distinct elements by partial Fisher-Yates.
template <class T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t count,
                                          Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + std::size_t(rng.uniform_int(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

template <class S>
TaskBlock<S> sample_block(const Dataset<S>& d, const std::vector<int>& class_pool,
                          const InstanceSplit& inst, int K, int N, Rng& rng,
                          const char* side) {
  if (int(class_pool.size()) < K) {
    throw SamplingError(cat("episode: ", side, " has ", class_pool.size(),
                            " classes but tasks need K=", K));
  }
  std::vector<int> classes = sample_without_replacement(class_pool, std::size_t(K), rng);
  TaskBlock<S> block;
  block.x.resize(Index(K) * N, d.feature_dim());
  block.a.resize(Index(K) * N, d.attribute_dim());
  block.y.reserve(std::size_t(K) * std::size_t(N));
  Index row = 0;
  for (int c : classes) {
    const std::vector<Index>& pool = inst.train_rows[std::size_t(c)];
    if (int(pool.size()) < N) {
      throw SamplingError(cat("episode: class ", c, " has ", pool.size(),
                              " train instances but tasks need N=", N));
    }
    std::vector<Index> rows = sample_without_replacement(pool, std::size_t(N), rng);
    for (Index r : rows) {
      block.x.row(row) = d.feature_row(r);
      block.a.row(row) = d.A.row(c);
      block.y.push_back(c);
      ++row;
    }
  }
  return block;
}

}  // namespace detail

// i tasks, each one support block from the sup classes and one query block
// from the qry classes; sampling is without replacement within a task and a
// pure function of (dataset, split, seed).
template <class S>
Episode<S> sample_episode(const Dataset<S>& d, const SplitSpec& split,
                          const InstanceSplit& inst, const EpisodeSpec& spec,
                          std::uint64_t seed) {
  Episode<S> episode;
  episode.seed = seed;
  Rng rng(seed);
  episode.tasks.reserve(std::size_t(spec.tasks));
  for (int j = 0; j < spec.tasks; ++j) {
    Task<S> task;
    task.pseudo_label = j;
    task.support = detail::sample_block(d, split.sup, inst, spec.classes_per_task,
                                        spec.instances_per_class, rng, "sup");
    task.query = detail::sample_block(d, split.qry, inst, spec.classes_per_task,
                                      spec.instances_per_class, rng, "qry");
    episode.tasks.push_back(std::move(task));
  }
  return episode;
}

}  // namespace tgmz
