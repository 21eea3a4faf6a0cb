#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tgmz/common.hpp"
#include "tgmz/dataset.hpp"
#include "tgmz/episode.hpp"
#include "tgmz/rng.hpp"

namespace tgmz {

// Flat key = value configuration with section headers. Unknown keys are
// rejected; every field below has a validated default.
struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  std::string precision = "f64";
  int episodes = 1000;
  bool disable_alignment = false;

  // [data]
  std::string data_path;  // empty -> in-memory synthetic dataset
  bool standardize = false;
  double holdout_fraction = 0.2;

  // [synthetic]
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;

  // [episode]
  EpisodeSpec episode;

  // [tae]
  Index d_e = 16;
  Index gen_hidden = 0;
  Index dis_hidden = 0;
  double slope = 0.2;
  double lambda_rec = 1.0;
  double lambda_adv = 1.0;
  double lambda_cls = 1.0;
  double lr_tc = 1e-3;
  double lr_tdis = 1e-3;

  // [meta]
  double alpha1 = 1e-3;
  double alpha2 = 1e-3;
  double beta1 = 1e-4;
  double beta2 = 1e-4;
  std::string inner_mode = "shared";
  int inner_steps = 1;
  Index d_z = 0;
  double sigma = 1.0;

  // [synthesis]
  int samples_per_class = 100;
  double synthesis_sigma = 1.0;
  int head_epochs = 300;
  double head_lr = 1e-2;
  Index head_hidden = 0;

  void validate() const {
    if (precision != "f32" && precision != "f64") {
      throw ConfigError(cat("run.precision: expected f32 or f64, got '", precision, "'"));
    }
    if (episodes < 0) throw ConfigError("run.episodes: must be >= 0");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
      throw ConfigError("data.holdout_fraction: must lie in [0, 1)");
    }
    if (episode.tasks < 1 || episode.classes_per_task < 1 ||
        episode.instances_per_class < 1) {
      throw ConfigError("episode: tasks, classes and instances must be >= 1");
    }
    if (d_e <= 0) throw ConfigError("tae.d_e: must be positive");
    if (gen_hidden < 0 || dis_hidden < 0 || head_hidden < 0 || d_z < 0) {
      throw ConfigError("widths must be >= 0 (0 selects the default)");
    }
    if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("tae.slope: must lie in (0,1)");
    if (lambda_rec < 0 || lambda_adv < 0 || lambda_cls < 0) {
      throw ConfigError("tae: loss weights must be >= 0");
    }
    if (lr_tc < 0 || lr_tdis < 0) throw ConfigError("tae: learning rates must be >= 0");
    if (alpha1 < 0 || alpha2 < 0 || beta1 < 0 || beta2 < 0) {
      throw ConfigError("meta: step sizes must be >= 0");
    }
    if (inner_mode != "shared" && inner_mode != "per_task") {
      throw ConfigError(cat("meta.inner_mode: expected shared or per_task, got '",
                            inner_mode, "'"));
    }
    if (inner_steps < 1) throw ConfigError("meta.inner_steps: must be >= 1");
    if (!(sigma > 0.0)) throw ConfigError("meta.sigma: must be > 0");
    if (samples_per_class < 0) throw ConfigError("synthesis.samples_per_class: must be >= 0");
    if (!(synthesis_sigma > 0.0)) throw ConfigError("synthesis.sigma: must be > 0");
    if (head_epochs < 1 || !(head_lr > 0.0)) {
      throw ConfigError("synthesis: head_epochs must be >= 1 and head_lr > 0");
    }
    if (data_path.empty()) synthetic.validate();
  }

  std::uint64_t synthetic_seed() const {
    return synthetic_seed_set ? synthetic.seed : seed;
  }
};

namespace config_detail {

inline bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(cat(key, ": expected true/false, got '", value, "'"));
}

inline double parse_real(const std::string& value, const std::string& key) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(cat(key, ": expected a number, got '", value, "'"));
  }
  if (used != value.size()) {
    throw ConfigError(cat(key, ": trailing characters in '", value, "'"));
  }
  return v;
}

inline long long parse_int(const std::string& value, const std::string& key) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(cat(key, ": expected an integer, got '", value, "'"));
  }
  if (used != value.size()) {
    throw ConfigError(cat(key, ": trailing characters in '", value, "'"));
  }
  return v;
}

inline std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(cat(key, ": expected an unsigned integer, got '", value, "'"));
  }
  if (used != value.size()) {
    throw ConfigError(cat(key, ": trailing characters in '", value, "'"));
  }
  return v;
}

inline std::vector<double> parse_real_list(const std::string& value,
                                           const std::string& key) {
  std::vector<double> out;
  std::string item;
  std::istringstream iss(value);
  while (std::getline(iss, item, ',')) {
    if (!item.empty()) out.push_back(parse_real(item, key));
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace config_detail

inline void apply_config_entry(RunConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
  using namespace config_detail;
  const std::string path = section + "." + key;
  auto as_int = [&] { return int(parse_int(value, path)); };
  auto as_index = [&] { return Index(parse_int(value, path)); };
  auto as_real = [&] { return parse_real(value, path); };

  if (section == "run") {
    if (key == "seed") cfg.seed = parse_u64(value, path);
    else if (key == "out") cfg.out_dir = value;
    else if (key == "precision") cfg.precision = value;
    else if (key == "episodes") cfg.episodes = as_int();
    else if (key == "disable_alignment") cfg.disable_alignment = parse_bool(value, path);
    else throw ConfigError(cat("unknown key ", path));
  } else if (section == "data") {
    if (key == "path") cfg.data_path = value;
    else if (key == "standardize") cfg.standardize = parse_bool(value, path);
    else if (key == "holdout_fraction") cfg.holdout_fraction = as_real();
    else throw ConfigError(cat("unknown key ", path));
  } else if (section == "synthetic") {
    if (key == "name") cfg.synthetic.name = value;
    else if (key == "classes") cfg.synthetic.classes = as_int();
    else if (key == "seen") cfg.synthetic.seen = as_int();
    else if (key == "d_x") cfg.synthetic.d_x = as_index();
    else if (key == "d_a") cfg.synthetic.d_a = as_index();
    else if (key == "per_class") cfg.synthetic.per_class = as_int();
    else if (key == "noise") cfg.synthetic.noise = as_real();
    else if (key == "scales") cfg.synthetic.scales = parse_real_list(value, path);
    else if (key == "sup_fraction") cfg.synthetic.sup_fraction = as_real();
    else if (key == "seed") {
      cfg.synthetic.seed = parse_u64(value, path);
      cfg.synthetic_seed_set = true;
    } else throw ConfigError(cat("unknown key ", path));
  } else if (section == "episode") {
    if (key == "tasks") cfg.episode.tasks = as_int();
    else if (key == "classes_per_task") cfg.episode.classes_per_task = as_int();
    else if (key == "instances_per_class") cfg.episode.instances_per_class = as_int();
    else throw ConfigError(cat("unknown key ", path));
  } else if (section == "tae") {
    if (key == "d_e") cfg.d_e = as_index();
    else if (key == "gen_hidden") cfg.gen_hidden = as_index();
    else if (key == "dis_hidden") cfg.dis_hidden = as_index();
    else if (key == "slope") cfg.slope = as_real();
    else if (key == "lambda_rec") cfg.lambda_rec = as_real();
    else if (key == "lambda_adv") cfg.lambda_adv = as_real();
    else if (key == "lambda_cls") cfg.lambda_cls = as_real();
    else if (key == "lr_tc") cfg.lr_tc = as_real();
    else if (key == "lr_tdis") cfg.lr_tdis = as_real();
    else throw ConfigError(cat("unknown key ", path));
  } else if (section == "meta") {
    if (key == "alpha1") cfg.alpha1 = as_real();
    else if (key == "alpha2") cfg.alpha2 = as_real();
    else if (key == "beta1") cfg.beta1 = as_real();
    else if (key == "beta2") cfg.beta2 = as_real();
    else if (key == "inner_mode") cfg.inner_mode = value;
    else if (key == "inner_steps") cfg.inner_steps = as_int();
    else if (key == "d_z") cfg.d_z = as_index();
    else if (key == "sigma") cfg.sigma = as_real();
    else throw ConfigError(cat("unknown key ", path));
  } else if (section == "synthesis") {
    if (key == "samples_per_class") cfg.samples_per_class = as_int();
    else if (key == "sigma") cfg.synthesis_sigma = as_real();
    else if (key == "head_epochs") cfg.head_epochs = as_int();
    else if (key == "head_lr") cfg.head_lr = as_real();
    else if (key == "head_hidden") cfg.head_hidden = as_index();
    else throw ConfigError(cat("unknown key ", path));
  } else {
    throw ConfigError(cat("unknown section [", section, "]"));
  }
}

inline RunConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "<text>") {
  using namespace config_detail;
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(cat(origin, ":", lineno, ": malformed section header"));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(cat(origin, ":", lineno, ": expected key = value"));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError(cat(origin, ":", lineno, ": key '", key,
                            "' appears before any section header"));
    }
    apply_config_entry(cfg, section, key, value);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(cat("cannot open config ", path.string()));
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

// Canonical emission: fixed key order, full precision. parse(emit(c)) == c,
// and the config hash is the FNV-1a of this text.
inline std::string emit_config(const RunConfig& cfg) {
  using config_detail::trim;
  std::ostringstream os;
  auto real = [](double v) { return io_detail::format_real(v); };
  os << "[run]\n";
  os << "seed = " << cfg.seed << "\n";
  os << "out = " << cfg.out_dir << "\n";
  os << "precision = " << cfg.precision << "\n";
  os << "episodes = " << cfg.episodes << "\n";
  os << "disable_alignment = " << (cfg.disable_alignment ? "true" : "false") << "\n";
  os << "[data]\n";
  os << "path = " << cfg.data_path << "\n";
  os << "standardize = " << (cfg.standardize ? "true" : "false") << "\n";
  os << "holdout_fraction = " << real(cfg.holdout_fraction) << "\n";
  os << "[synthetic]\n";
  os << "name = " << cfg.synthetic.name << "\n";
  os << "classes = " << cfg.synthetic.classes << "\n";
  os << "seen = " << cfg.synthetic.seen << "\n";
  os << "d_x = " << cfg.synthetic.d_x << "\n";
  os << "d_a = " << cfg.synthetic.d_a << "\n";
  os << "per_class = " << cfg.synthetic.per_class << "\n";
  os << "noise = " << real(cfg.synthetic.noise) << "\n";
  if (!cfg.synthetic.scales.empty()) {
    os << "scales = ";
    for (std::size_t i = 0; i < cfg.synthetic.scales.size(); ++i) {
      os << (i ? "," : "") << real(cfg.synthetic.scales[i]);
    }
    os << "\n";
  }
  os << "sup_fraction = " << real(cfg.synthetic.sup_fraction) << "\n";
  if (cfg.synthetic_seed_set) os << "seed = " << cfg.synthetic.seed << "\n";
  os << "[episode]\n";
  os << "tasks = " << cfg.episode.tasks << "\n";
  os << "classes_per_task = " << cfg.episode.classes_per_task << "\n";
  os << "instances_per_class = " << cfg.episode.instances_per_class << "\n";
  os << "[tae]\n";
  os << "d_e = " << cfg.d_e << "\n";
  os << "gen_hidden = " << cfg.gen_hidden << "\n";
  os << "dis_hidden = " << cfg.dis_hidden << "\n";
  os << "slope = " << real(cfg.slope) << "\n";
  os << "lambda_rec = " << real(cfg.lambda_rec) << "\n";
  os << "lambda_adv = " << real(cfg.lambda_adv) << "\n";
  os << "lambda_cls = " << real(cfg.lambda_cls) << "\n";
  os << "lr_tc = " << real(cfg.lr_tc) << "\n";
  os << "lr_tdis = " << real(cfg.lr_tdis) << "\n";
  os << "[meta]\n";
  os << "alpha1 = " << real(cfg.alpha1) << "\n";
  os << "alpha2 = " << real(cfg.alpha2) << "\n";
  os << "beta1 = " << real(cfg.beta1) << "\n";
  os << "beta2 = " << real(cfg.beta2) << "\n";
  os << "inner_mode = " << cfg.inner_mode << "\n";
  os << "inner_steps = " << cfg.inner_steps << "\n";
  os << "d_z = " << cfg.d_z << "\n";
  os << "sigma = " << real(cfg.sigma) << "\n";
  os << "[synthesis]\n";
  os << "samples_per_class = " << cfg.samples_per_class << "\n";
  os << "sigma = " << real(cfg.synthesis_sigma) << "\n";
  os << "head_epochs = " << cfg.head_epochs << "\n";
  os << "head_lr = " << real(cfg.head_lr) << "\n";
  os << "head_hidden = " << cfg.head_hidden << "\n";
  return os.str();
}

// Hash of the canonical text with the output directory blanked, so that the
// same experiment written to two directories shares a hash.
inline std::uint64_t config_hash(const RunConfig& cfg) {
  RunConfig canonical = cfg;
  canonical.out_dir = "";
  return fnv1a64(emit_config(canonical));
}

}  // namespace tgmz
