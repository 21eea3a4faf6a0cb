#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tgmz/adam.hpp"
#include "tgmz/model.hpp"
#include "tgmz/rng.hpp"

namespace tgmz {

namespace ckpt_detail {

inline constexpr char kMagic[6] = {'T', 'G', 'M', 'Z', 'C', '1'};
inline constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw FormatError("checkpoint: name too long");
  const std::uint16_t n = std::uint16_t(s.size());
  os.write(reinterpret_cast<const char*>(&n), 2);
  os.write(s.data(), std::streamsize(s.size()));
}

inline void read_exact(std::istream& is, char* buf, std::streamsize n,
                       const char* what) {
  if (!is.read(buf, n)) throw FormatError(cat("checkpoint: truncated ", what));
}
inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  read_exact(is, reinterpret_cast<char*>(&v), 4, what);
  return v;
}
inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  read_exact(is, reinterpret_cast<char*>(&v), 8, what);
  return v;
}
inline double read_f64(std::istream& is, const char* what) {
  double v = 0;
  read_exact(is, reinterpret_cast<char*>(&v), 8, what);
  return v;
}
inline std::string read_string(std::istream& is, const char* what) {
  std::uint16_t n = 0;
  read_exact(is, reinterpret_cast<char*>(&n), 2, what);
  std::string s(n, '\0');
  read_exact(is, s.data(), n, what);
  return s;
}

template <class S>
void write_tensor(std::ostream& os, const std::string& name, const Mat<S>& m) {
  write_string(os, name);
  write_u32(os, std::uint32_t(m.rows()));
  write_u32(os, std::uint32_t(m.cols()));
  for (Index i = 0; i < m.size(); ++i) write_f64(os, double(m.data()[i]));
}

inline std::pair<std::string, Mat<double>> read_tensor(std::istream& is) {
  std::string name = read_string(is, "tensor name");
  const std::uint32_t rows = read_u32(is, "tensor rows");
  const std::uint32_t cols = read_u32(is, "tensor cols");
  Mat<double> m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = read_f64(is, "tensor values");
  return {std::move(name), std::move(m)};
}

}  // namespace ckpt_detail

// Everything a checkpoint stores, in 64-bit precision regardless of the
// training scalar type. load(save(x)) reproduces forward outputs bitwise
// (f32 values round-trip exactly through f64).
struct CheckpointData {
  std::uint32_t version = ckpt_detail::kVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t episode_counter = 0;
  std::uint8_t precision_bytes = 8;
  std::map<std::string, Mat<double>> params;
  struct AdamSnapshot {
    double lr = 0, beta1 = 0, beta2 = 0, eps = 0;
    std::uint64_t t = 0;
    std::map<std::string, Mat<double>> m;
    std::map<std::string, Mat<double>> v;
  };
  std::map<std::string, AdamSnapshot> adam;
  std::map<std::string, std::pair<Mat<double>, Mat<double>>> norm_stats;
  std::map<std::string, Rng::State> rng_states;
};

template <class S>
CheckpointData make_checkpoint(std::uint64_t config_hash, std::uint64_t episode_counter,
                               Model<S>& model,
                               const std::map<std::string, const AdamState<S>*>& opts,
                               const std::map<std::string, Rng::State>& rng_states) {
  CheckpointData data;
  data.config_hash = config_hash;
  data.episode_counter = episode_counter;
  data.precision_bytes = sizeof(S);
  for (Parameter<S>* p : model.all_params()) {
    data.params.emplace(p->name, p->value.template cast<double>());
  }
  for (const auto& [name, opt] : opts) {
    CheckpointData::AdamSnapshot snap;
    snap.lr = double(opt->cfg.lr);
    snap.beta1 = double(opt->cfg.beta1);
    snap.beta2 = double(opt->cfg.beta2);
    snap.eps = double(opt->cfg.eps);
    snap.t = std::uint64_t(opt->t);
    for (const auto& [pname, moments] : opt->moments) {
      snap.m.emplace(pname, moments.m.template cast<double>());
      snap.v.emplace(pname, moments.v.template cast<double>());
    }
    data.adam.emplace(name, std::move(snap));
  }
  data.rng_states = rng_states;
  return data;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const CheckpointData& data) {
  namespace d = ckpt_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(cat("cannot write checkpoint ", path.string()));
  os.write(d::kMagic, 6);
  d::write_u32(os, data.version);
  d::write_u64(os, data.config_hash);
  d::write_u64(os, data.episode_counter);
  os.put(char(data.precision_bytes));

  d::write_u32(os, std::uint32_t(data.params.size()));
  for (const auto& [name, value] : data.params) d::write_tensor(os, name, value);

  d::write_u32(os, std::uint32_t(data.adam.size()));
  for (const auto& [name, snap] : data.adam) {
    d::write_string(os, name);
    d::write_f64(os, snap.lr);
    d::write_f64(os, snap.beta1);
    d::write_f64(os, snap.beta2);
    d::write_f64(os, snap.eps);
    d::write_u64(os, snap.t);
    d::write_u32(os, std::uint32_t(snap.m.size()));
    for (const auto& [pname, m] : snap.m) {
      d::write_tensor(os, pname, m);
      d::write_tensor(os, pname, snap.v.at(pname));
    }
  }

  d::write_u32(os, std::uint32_t(data.norm_stats.size()));
  for (const auto& [name, stats] : data.norm_stats) {
    d::write_string(os, name);
    d::write_tensor(os, "mean", stats.first);
    d::write_tensor(os, "var", stats.second);
  }

  d::write_u32(os, std::uint32_t(data.rng_states.size()));
  for (const auto& [name, state] : data.rng_states) {
    d::write_string(os, name);
    for (std::uint64_t word : state) d::write_u64(os, word);
  }
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  namespace d = ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(cat("cannot open checkpoint ", path.string()));
  char magic[6];
  d::read_exact(is, magic, 6, "magic");
  if (std::memcmp(magic, d::kMagic, 6) != 0) {
    throw FormatError(cat(path.string(), ": bad magic, expected TGMZC1"));
  }
  CheckpointData data;
  data.version = d::read_u32(is, "version");
  if (data.version != d::kVersion) {
    throw FormatError(cat(path.string(), ": unsupported version ", data.version));
  }
  data.config_hash = d::read_u64(is, "config hash");
  data.episode_counter = d::read_u64(is, "episode counter");
  int prec = is.get();
  if (prec != 4 && prec != 8) throw FormatError("checkpoint: bad precision byte");
  data.precision_bytes = std::uint8_t(prec);

  const std::uint32_t n_params = d::read_u32(is, "param count");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto [name, value] = d::read_tensor(is);
    data.params.emplace(std::move(name), std::move(value));
  }

  const std::uint32_t n_opts = d::read_u32(is, "optimizer count");
  for (std::uint32_t i = 0; i < n_opts; ++i) {
    std::string name = d::read_string(is, "optimizer name");
    CheckpointData::AdamSnapshot snap;
    snap.lr = d::read_f64(is, "lr");
    snap.beta1 = d::read_f64(is, "beta1");
    snap.beta2 = d::read_f64(is, "beta2");
    snap.eps = d::read_f64(is, "eps");
    snap.t = d::read_u64(is, "t");
    const std::uint32_t n_moments = d::read_u32(is, "moment count");
    for (std::uint32_t k = 0; k < n_moments; ++k) {
      auto [mname, m] = d::read_tensor(is);
      auto [vname, v] = d::read_tensor(is);
      if (mname != vname) throw FormatError("checkpoint: moment name mismatch");
      snap.m.emplace(mname, std::move(m));
      snap.v.emplace(vname, std::move(v));
    }
    data.adam.emplace(std::move(name), std::move(snap));
  }

  const std::uint32_t n_norm = d::read_u32(is, "norm-stat count");
  for (std::uint32_t i = 0; i < n_norm; ++i) {
    std::string name = d::read_string(is, "norm-stat name");
    auto [mname, mean] = d::read_tensor(is);
    auto [vname, var] = d::read_tensor(is);
    data.norm_stats.emplace(std::move(name), std::pair{std::move(mean), std::move(var)});
  }

  const std::uint32_t n_rng = d::read_u32(is, "rng count");
  for (std::uint32_t i = 0; i < n_rng; ++i) {
    std::string name = d::read_string(is, "rng name");
    Rng::State state{};
    for (std::uint64_t& word : state) word = d::read_u64(is, "rng state");
    data.rng_states.emplace(std::move(name), state);
  }
  return data;
}

// Model geometry is recoverable from the stored parameter shapes.
template <class S>
ModelDims<S> dims_from_checkpoint(const CheckpointData& data) {
  auto shape = [&](const char* name) {
    auto it = data.params.find(name);
    if (it == data.params.end()) {
      throw FormatError(cat("checkpoint: missing parameter '", name, "'"));
    }
    return std::pair{it->second.rows(), it->second.cols()};
  };
  ModelDims<S> dims;
  dims.d_x = shape("tae.te.l1.w").first;
  dims.d_e = shape("tae.te.l2.w").second;
  dims.gen_hidden = shape("tae.te.l1.w").second;
  dims.dis_hidden = shape("tae.tdis.l1.w").second;
  dims.d_a = shape("tae.tdis.l1.w").first - dims.d_e;
  dims.tasks = int(shape("tae.tdis.l2.w").second);
  dims.c_train = int(shape("cls.l2.w").second);
  dims.d_z = shape("mgan.g.l1.w").first - dims.d_a;
  return dims;
}

template <class S>
void apply_checkpoint_params(const CheckpointData& data, Model<S>& model) {
  for (Parameter<S>* p : model.all_params()) {
    auto it = data.params.find(p->name);
    if (it == data.params.end()) {
      throw FormatError(cat("checkpoint: missing parameter '", p->name, "'"));
    }
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw FormatError(cat("checkpoint: parameter '", p->name, "' has shape ",
                            shape_str(it->second), ", expected ",
                            shape_str(p->value)));
    }
    p->value = it->second.template cast<S>();
  }
}

template <class S>
void apply_checkpoint_adam(const CheckpointData& data, const std::string& name,
                           AdamState<S>& opt) {
  auto it = data.adam.find(name);
  if (it == data.adam.end()) {
    throw FormatError(cat("checkpoint: missing optimizer state '", name, "'"));
  }
  const auto& snap = it->second;
  opt.cfg.lr = S(snap.lr);
  opt.cfg.beta1 = S(snap.beta1);
  opt.cfg.beta2 = S(snap.beta2);
  opt.cfg.eps = S(snap.eps);
  opt.t = std::int64_t(snap.t);
  opt.moments.clear();
  for (const auto& [pname, m] : snap.m) {
    typename AdamState<S>::Moments moments;
    moments.m = m.template cast<S>();
    moments.v = snap.v.at(pname).template cast<S>();
    opt.moments.emplace(pname, std::move(moments));
  }
}

struct RoundtripReport {
  bool params_bitwise = false;
  bool probe_bitwise = false;
  std::string detail;

  bool ok() const { return params_bitwise && probe_bitwise; }
};

// save -> load -> compare every tensor bitwise, then compare forward outputs
// of the original and the reloaded model on a deterministic probe batch.
template <class S>
RoundtripReport checkpoint_roundtrip(Model<S>& model,
                                     const std::map<std::string, const AdamState<S>*>& opts,
                                     const std::map<std::string, Rng::State>& rng_states,
                                     std::uint64_t config_hash_value,
                                     std::uint64_t episode_counter,
                                     const std::filesystem::path& path) {
  RoundtripReport report;
  CheckpointData original =
      make_checkpoint(config_hash_value, episode_counter, model, opts, rng_states);
  save_checkpoint(path, original);
  CheckpointData loaded = load_checkpoint(path);

  report.params_bitwise = true;
  for (const auto& [name, value] : original.params) {
    auto it = loaded.params.find(name);
    if (it == loaded.params.end() || !bitwise_equal(value, it->second)) {
      report.params_bitwise = false;
      report.detail = cat("parameter '", name, "' did not round-trip");
    }
  }
  if (loaded.config_hash != original.config_hash ||
      loaded.episode_counter != original.episode_counter ||
      loaded.rng_states != original.rng_states) {
    report.params_bitwise = false;
    report.detail = "header or rng state did not round-trip";
  }

  // probe forward through every network on a synthetic batch
  Rng probe_rng(config_hash_value ^ 0x9e3779b97f4a7c15ULL);
  Model<S> reloaded(model.dims, probe_rng);
  apply_checkpoint_params(loaded, reloaded);
  Mat<S> x(4, model.dims.d_x);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = S(probe_rng.uniform(-1.0, 1.0));
  Mat<S> a(4, model.dims.d_a);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = S(probe_rng.uniform(-1.0, 1.0));
  Mat<S> z(4, model.dims.noise_width());
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = S(probe_rng.uniform(-1.0, 1.0));

  Mat<S> e0 = forward(model.tae.te, x);
  Mat<S> e1 = forward(reloaded.tae.te, x);
  bool probe_ok = bitwise_equal(e0, e1);
  probe_ok = probe_ok && bitwise_equal(forward(model.tae.td, e0), forward(reloaded.tae.td, e1));
  {
    Mat<S> ea(4, model.dims.d_e + model.dims.d_a);
    ea << e0, a;
    probe_ok = probe_ok && bitwise_equal(forward(model.tae.tdis, ea),
                                         forward(reloaded.tae.tdis, ea));
    probe_ok = probe_ok &&
               bitwise_equal(forward(model.tae.cls, e0), forward(reloaded.tae.cls, e0));
    Mat<S> za(4, model.dims.noise_width() + model.dims.d_a);
    za << z, a;
    probe_ok = probe_ok &&
               bitwise_equal(forward(model.mgan.g, za), forward(reloaded.mgan.g, za));
    probe_ok = probe_ok && bitwise_equal(forward(model.mgan.dis, ea),
                                         forward(reloaded.mgan.dis, ea));
  }
  report.probe_bitwise = probe_ok;
  if (!probe_ok && report.detail.empty()) {
    report.detail = "probe forward outputs diverged after reload";
  }
  return report;
}

}  // namespace tgmz
