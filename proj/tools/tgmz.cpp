#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tgmz/checkpoint.hpp"
#include "tgmz/config.hpp"
#include "tgmz/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  tgmz::RunConfig cfg = tgmz::parse_config(spec_path);
  tgmz::SyntheticSpec spec = cfg.synthetic;
  spec.seed = cfg.synthetic_seed();
  tgmz::Dataset<double> data = tgmz::make_synthetic<double>(spec);
  tgmz::SplitSpec split = tgmz::split_for_synthetic(data, spec);
  tgmz::save_dataset(out_dir, data);
  tgmz::save_splits(out_dir, split);
  std::printf("wrote %s: %lld instances, %d classes (%zu seen / %zu unseen)\n",
              out_dir.c_str(), static_cast<long long>(data.num_instances()),
              data.num_classes(), split.seen.size(), split.unseen.size());
  return 0;
}

int cmd_fuse(const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<tgmz::Dataset<double>> datasets;
  std::vector<tgmz::SplitSpec> splits;
  datasets.reserve(inputs.size());
  splits.reserve(inputs.size());
  for (const std::string& dir : inputs) {
    datasets.push_back(tgmz::load_dataset<double>(dir));
    splits.push_back(tgmz::load_splits(dir, datasets.back().num_classes()));
  }
  std::vector<std::pair<const tgmz::Dataset<double>*, const tgmz::SplitSpec*>> refs;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    refs.push_back({&datasets[i], &splits[i]});
  }
  auto [fused, fused_split] = tgmz::fuse_datasets<double>(refs);
  tgmz::save_dataset(out_dir, fused);
  tgmz::save_splits(out_dir, fused_split);
  std::printf("wrote %s: %d classes, attribute dim %lld, %zu sources\n",
              out_dir.c_str(), fused.num_classes(),
              static_cast<long long>(fused.attribute_dim()), fused.sources.size());
  return 0;
}

template <class S>
int train_with(const tgmz::RunConfig& cfg) {
  tgmz::TrainResult<S> result = tgmz::run_train<S>(cfg);
  const char* audit = result.unseen_reads_during_training == 0 ? "clean" : "VIOLATED";
  std::printf("trained %d episodes -> %s (inductive audit: %s)\n", cfg.episodes,
              cfg.out_dir.c_str(), audit);
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::printf("final losses: tdis=%.6g tc=%.6g critic=%.6g gc=%.6g\n",
                double(last.loss_tdis), double(last.loss_tc), double(last.critic_obj),
                double(last.gc_obj));
  }
  return result.unseen_reads_during_training == 0 ? 0 : 1;
}

int cmd_train(const std::string& config_path) {
  tgmz::RunConfig cfg = tgmz::parse_config(config_path);
  return cfg.precision == "f32" ? train_with<float>(cfg) : train_with<double>(cfg);
}

template <class S>
int eval_with(const tgmz::RunConfig& cfg, const std::string& checkpoint,
              const std::string& setting, bool export_proj) {
  tgmz::MetricsReport report =
      tgmz::run_evaluate<S>(cfg, checkpoint, setting, export_proj);
  std::printf("%s\n", report.record_line().c_str());
  for (const auto& [source, acc] : report.per_source) {
    std::printf("source %s: U=%.6g\n", source.c_str(), acc);
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& setting, bool export_proj) {
  tgmz::RunConfig cfg = tgmz::parse_config(config_path);
  return cfg.precision == "f32"
             ? eval_with<float>(cfg, checkpoint, setting, export_proj)
             : eval_with<double>(cfg, checkpoint, setting, export_proj);
}

template <class S>
int check_with(const tgmz::CheckpointData& data, const std::string& path) {
  tgmz::Rng init(1);
  tgmz::Model<S> model(tgmz::dims_from_checkpoint<S>(data), init);
  tgmz::apply_checkpoint_params(data, model);
  tgmz::AdamState<S> opt_tdis, opt_tc;
  if (data.adam.count("tdis")) tgmz::apply_checkpoint_adam(data, "tdis", opt_tdis);
  if (data.adam.count("tc")) tgmz::apply_checkpoint_adam(data, "tc", opt_tc);
  std::map<std::string, const tgmz::AdamState<S>*> opts{{"tdis", &opt_tdis},
                                                        {"tc", &opt_tc}};
  const fs::path tmp = fs::path(path).concat(".verify");
  tgmz::RoundtripReport report = tgmz::checkpoint_roundtrip(
      model, opts, data.rng_states, data.config_hash, data.episode_counter, tmp);
  fs::remove(tmp);
  std::printf("checkpoint %s: episodes=%llu params=%zu precision=f%d\n", path.c_str(),
              static_cast<unsigned long long>(data.episode_counter), data.params.size(),
              data.precision_bytes == 4 ? 32 : 64);
  std::printf("round-trip: params %s, probe forward %s\n",
              report.params_bitwise ? "bitwise-identical" : "MISMATCH",
              report.probe_bitwise ? "bitwise-identical" : "MISMATCH");
  if (!report.ok()) std::printf("detail: %s\n", report.detail.c_str());
  return report.ok() ? 0 : 1;
}

int cmd_check(const std::string& path) {
  tgmz::CheckpointData data = tgmz::load_checkpoint(path);
  return data.precision_bytes == 4 ? check_with<float>(data, path)
                                   : check_with<double>(data, path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TGMZ: task-aligned generative meta zero-shot learning"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, checkpoint_path, setting = "zsl";
  std::vector<std::string> fuse_inputs;
  bool export_proj = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  gen->add_option("spec", spec_path, "config file with a [synthetic] section")->required();
  gen->add_option("out", out_dir, "output dataset directory")->required();

  CLI::App* fuse = app.add_subcommand("fuse", "fuse dataset directories (zero-padded attributes)");
  fuse->add_option("inputs", fuse_inputs, "input dataset directories")
      ->required()
      ->expected(-2);
  fuse->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", config_path, "run configuration")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("config", config_path, "run configuration")->required();
  eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--setting", setting, "zsl | gzsl | fusion")
      ->check(CLI::IsMember({"zsl", "gzsl", "fusion"}));
  eval->add_flag("--export-projection", export_proj,
                 "write a 2-component projection of the synthetic embeddings");

  CLI::App* check = app.add_subcommand("check", "verify a checkpoint round-trips bitwise");
  check->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir);
    if (fuse->parsed()) return cmd_fuse(fuse_inputs, out_dir);
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint_path, setting, export_proj);
    if (check->parsed()) return cmd_check(checkpoint_path);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
