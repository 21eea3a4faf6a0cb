#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tgmz/common.hpp"
#include "tgmz/rng.hpp"

namespace tgmz {

// Provenance of one source inside a fused dataset.
struct SourceSpan {
  std::string name;
  int class_offset = 0;
  int class_count = 0;
  Index attribute_dim = 0;  // before zero-padding
};

// Visual features X (n x d_x), per-class attributes A (C x d_a), labels Y.
// Feature rows are only reachable through feature_row(), which records the
// access; the inductive-training audit checks that no unseen-class row was
// read before evaluation.
template <class S>
class Dataset {
 public:
  std::string name;
  Mat<S> A;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<SourceSpan> sources;

  Dataset() = default;
  Dataset(std::string dataset_name, Mat<S> features, Mat<S> attributes,
          std::vector<int> instance_labels)
      : name(std::move(dataset_name)),
        A(std::move(attributes)),
        labels(std::move(instance_labels)),
        X_(std::move(features)),
        touched_(std::size_t(X_.rows()), 0) {
    validate();
  }

  Index num_instances() const { return X_.rows(); }
  int num_classes() const { return int(A.rows()); }
  Index feature_dim() const { return X_.cols(); }
  Index attribute_dim() const { return A.cols(); }

  auto feature_row(Index i) const {
    touched_[std::size_t(i)] = 1;
    return X_.row(i);
  }

  // Unaudited access for serialization, fusion and preprocessing.
  const Mat<S>& raw_features() const { return X_; }
  Mat<S>& mutable_features() { return X_; }

  void reset_audit() const { std::fill(touched_.begin(), touched_.end(), 0); }
  const std::vector<std::uint8_t>& touched_rows() const { return touched_; }

  std::vector<std::vector<Index>> rows_by_class() const {
    std::vector<std::vector<Index>> rows(static_cast<std::size_t>(num_classes()));
    for (Index i = 0; i < Index(labels.size()); ++i) {
      rows[std::size_t(labels[std::size_t(i)])].push_back(i);
    }
    return rows;
  }

  void validate() const {
    if (Index(labels.size()) != X_.rows()) {
      throw FormatError(cat("dataset '", name, "': ", labels.size(), " labels for ",
                            X_.rows(), " feature rows"));
    }
    const int c = num_classes();
    std::vector<int> counts(std::size_t(std::max(c, 0)), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= c) {
        throw FormatError(cat("dataset '", name, "': label ", labels[i], " at row ",
                              i, " outside [0, ", c, ")"));
      }
      counts[std::size_t(labels[i])] += 1;
    }
    for (int k = 0; k < c; ++k) {
      if (counts[std::size_t(k)] == 0) {
        throw FormatError(cat("dataset '", name, "': class ", k, " has no instances"));
      }
    }
    if (!A.allFinite()) {
      throw FormatError(cat("dataset '", name, "': attribute matrix has non-finite entries"));
    }
  }

 private:
  Mat<S> X_;
  mutable std::vector<std::uint8_t> touched_;
};

// Seen/unseen class partition plus the within-seen support/query partition
// used for episodic training.
struct SplitSpec {
  std::vector<int> seen;
  std::vector<int> unseen;
  std::vector<int> sup;
  std::vector<int> qry;

  void validate(int num_classes) const {
    auto check_sorted_ids = [&](const std::vector<int>& ids, const char* what) {
      for (int c : ids) {
        if (c < 0 || c >= num_classes) {
          throw ConfigError(cat("split: ", what, " class ", c, " outside [0, ",
                                num_classes, ")"));
        }
      }
    };
    check_sorted_ids(seen, "seen");
    check_sorted_ids(unseen, "unseen");
    check_sorted_ids(sup, "sup");
    check_sorted_ids(qry, "qry");
    std::vector<int> cover(std::size_t(num_classes), 0);
    for (int c : seen) cover[std::size_t(c)] += 1;
    for (int c : unseen) cover[std::size_t(c)] += 1;
    for (int i = 0; i < num_classes; ++i) {
      if (cover[std::size_t(i)] != 1) {
        throw ConfigError(cat("split: class ", i, " covered ", cover[std::size_t(i)],
                              " times by seen/unseen"));
      }
    }
    std::vector<int> within(std::size_t(num_classes), 0);
    for (int c : sup) within[std::size_t(c)] += 1;
    for (int c : qry) within[std::size_t(c)] += 1;
    for (int c : seen) {
      if (within[std::size_t(c)] != 1) {
        throw ConfigError(cat("split: seen class ", c, " covered ",
                              within[std::size_t(c)], " times by sup/qry"));
      }
    }
    for (int c : unseen) {
      if (within[std::size_t(c)] != 0) {
        throw ConfigError(cat("split: unseen class ", c, " appears in sup/qry"));
      }
    }
  }

  bool is_seen(int c) const {
    return std::find(seen.begin(), seen.end(), c) != seen.end();
  }

  // Maps class id -> contiguous training-class index (classifier output slot);
  // -1 for unseen classes.
  std::vector<int> train_class_index(int num_classes) const {
    std::vector<int> idx(std::size_t(num_classes), -1);
    int next = 0;
    std::vector<int> ordered = seen;
    std::sort(ordered.begin(), ordered.end());
    for (int c : ordered) idx[std::size_t(c)] = next++;
    return idx;
  }
};

// Random class split with exact-count rounding, deterministic given seed.
template <class S>
SplitSpec split_classes(const Dataset<S>& d, double seen_fraction,
                        double sup_fraction, std::uint64_t seed) {
  if (!(seen_fraction > 0.0 && seen_fraction < 1.0) ||
      !(sup_fraction > 0.0 && sup_fraction < 1.0)) {
    throw ConfigError(cat("split_classes: fractions must lie in (0,1), got ",
                          seen_fraction, " and ", sup_fraction));
  }
  const int c = d.num_classes();
  std::vector<int> ids(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) ids[std::size_t(i)] = i;
  Rng rng(seed);
  rng.shuffle(ids);

  const int n_seen = int(std::llround(seen_fraction * c));
  if (n_seen < 2 || n_seen >= c) {
    throw ConfigError(cat("split_classes: seen fraction ", seen_fraction, " of ", c,
                          " classes leaves an empty or degenerate set"));
  }
  const int n_sup = int(std::llround(sup_fraction * n_seen));
  if (n_sup < 1 || n_sup >= n_seen) {
    throw ConfigError(cat("split_classes: sup fraction ", sup_fraction, " of ",
                          n_seen, " seen classes leaves an empty set"));
  }

  SplitSpec split;
  split.seen.assign(ids.begin(), ids.begin() + n_seen);
  split.unseen.assign(ids.begin() + n_seen, ids.end());
  split.sup.assign(split.seen.begin(), split.seen.begin() + n_sup);
  split.qry.assign(split.seen.begin() + n_sup, split.seen.end());
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  std::sort(split.sup.begin(), split.sup.end());
  std::sort(split.qry.begin(), split.qry.end());
  split.validate(c);
  return split;
}

// Desk-scale stand-in for the pre-extracted benchmark feature files: class
// attributes drawn once, features = (a_c * M + noise) * class_scale.
struct SyntheticSpec {
  std::string name = "synthetic";
  int classes = 12;
  int seen = 9;
  Index d_x = 24;
  Index d_a = 4;
  int per_class = 50;
  double noise = 0.15;
  std::vector<double> scales;  // optional per-class multipliers
  double sup_fraction = 2.0 / 3.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (classes < 3 || seen < 2 || seen >= classes) {
      throw ConfigError(cat("synthetic: need 2 <= seen < classes, got seen ", seen,
                            " of ", classes));
    }
    if (d_x <= 0 || d_a <= 0 || per_class <= 0) {
      throw ConfigError("synthetic: dimensions and per-class count must be positive");
    }
    if (!(noise > 0.0)) throw ConfigError("synthetic: noise scale must be > 0");
    if (!scales.empty() && int(scales.size()) != classes) {
      throw ConfigError(cat("synthetic: ", scales.size(), " scale multipliers for ",
                            classes, " classes"));
    }
    if (!(sup_fraction > 0.0 && sup_fraction < 1.0)) {
      throw ConfigError("synthetic: sup_fraction must lie in (0,1)");
    }
  }
};

template <class S>
Dataset<S> make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng attr_rng = rng_stream(spec.seed, "synthetic.attributes");
  Rng map_rng = rng_stream(spec.seed, "synthetic.map");
  Rng noise_rng = rng_stream(spec.seed, "synthetic.noise");

  Mat<S> attrs(spec.classes, spec.d_a);
  for (Index i = 0; i < attrs.size(); ++i) attrs.data()[i] = S(attr_rng.normal());

  Mat<S> map(spec.d_a, spec.d_x);
  const double map_scale = 1.0 / std::sqrt(double(spec.d_a));
  for (Index i = 0; i < map.size(); ++i) map.data()[i] = S(map_rng.normal() * map_scale);

  const Index n = Index(spec.classes) * spec.per_class;
  Mat<S> x(n, spec.d_x);
  std::vector<int> labels(static_cast<std::size_t>(n));
  Index row = 0;
  for (int c = 0; c < spec.classes; ++c) {
    const S sc = S(spec.scales.empty() ? 1.0 : spec.scales[std::size_t(c)]);
    const Mat<S> mean = attrs.row(c) * map;
    for (int k = 0; k < spec.per_class; ++k, ++row) {
      for (Index j = 0; j < spec.d_x; ++j) {
        x(row, j) = sc * (mean(0, j) + S(spec.noise * noise_rng.normal()));
      }
      labels[std::size_t(row)] = c;
    }
  }
  return Dataset<S>(spec.name, std::move(x), std::move(attrs), std::move(labels));
}

template <class S>
SplitSpec split_for_synthetic(const Dataset<S>& d, const SyntheticSpec& spec) {
  return split_classes(d, double(spec.seen) / double(spec.classes),
                       spec.sup_fraction, spec.seed);
}

// Attribute zero-padding fusion: every original feature row and attribute
// value is preserved bitwise; class ids are remapped by per-source offsets.
template <class S>
std::pair<Dataset<S>, SplitSpec> fuse_datasets(
    const std::vector<std::pair<const Dataset<S>*, const SplitSpec*>>& sources) {
  if (sources.size() < 2) {
    throw ConfigError(cat("fuse: need at least 2 datasets, got ", sources.size()));
  }
  const Index d_x = sources[0].first->feature_dim();
  Index d_a = 0;
  Index total_rows = 0;
  int total_classes = 0;
  for (const auto& [d, split] : sources) {
    if (d->feature_dim() != d_x) {
      throw FormatError(cat("fuse: feature dims disagree: ", d_x, " vs ",
                            d->feature_dim(), " in '", d->name, "'"));
    }
    d_a = std::max(d_a, d->attribute_dim());
    total_rows += d->num_instances();
    total_classes += d->num_classes();
  }

  Mat<S> x(total_rows, d_x);
  Mat<S> attrs = Mat<S>::Zero(total_classes, d_a);
  std::vector<int> labels;
  labels.reserve(std::size_t(total_rows));
  std::vector<SourceSpan> spans;
  SplitSpec fused_split;

  Index row_offset = 0;
  int class_offset = 0;
  std::string fused_name;
  for (const auto& [d, split] : sources) {
    x.middleRows(row_offset, d->num_instances()) = d->raw_features();
    attrs.block(class_offset, 0, d->num_classes(), d->attribute_dim()) = d->A;
    for (int label : d->labels) labels.push_back(label + class_offset);
    for (int c : split->seen) fused_split.seen.push_back(c + class_offset);
    for (int c : split->unseen) fused_split.unseen.push_back(c + class_offset);
    for (int c : split->sup) fused_split.sup.push_back(c + class_offset);
    for (int c : split->qry) fused_split.qry.push_back(c + class_offset);
    spans.push_back(SourceSpan{d->name, class_offset, d->num_classes(),
                               d->attribute_dim()});
    fused_name += (fused_name.empty() ? "" : "+") + d->name;
    row_offset += d->num_instances();
    class_offset += d->num_classes();
  }

  Dataset<S> fused(fused_name, std::move(x), std::move(attrs), std::move(labels));
  fused.sources = std::move(spans);
  fused_split.validate(fused.num_classes());
  return {std::move(fused), std::move(fused_split)};
}

// ---------------------------------------------------------------------------
// On-disk format: features.bin / labels.txt / attributes.txt / splits.txt
// (+ optional classes.txt, sources.txt for fused datasets).
// ---------------------------------------------------------------------------

namespace io_detail {

inline constexpr char kFeatureMagic[6] = {'T', 'G', 'M', 'Z', 'F', '1'};

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& file) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(cat(file, ": truncated header"));
  }
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline std::vector<int> parse_id_line(const std::string& line, const std::string& file,
                                      int lineno, const std::string& prefix) {
  if (line.rfind(prefix, 0) != 0) {
    throw FormatError(cat(file, ":", lineno, ": expected '", prefix, "' line"));
  }
  std::istringstream iss(line.substr(prefix.size()));
  std::vector<int> ids;
  int v = 0;
  while (iss >> v) ids.push_back(v);
  return ids;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace io_detail

template <class S>
void save_features(const std::filesystem::path& dir, const Dataset<S>& d) {
  std::ofstream os(dir / "features.bin", std::ios::binary);
  if (!os) throw FormatError(cat("cannot write ", (dir / "features.bin").string()));
  os.write(io_detail::kFeatureMagic, 6);
  io_detail::write_u32(os, std::uint32_t(d.num_instances()));
  io_detail::write_u32(os, std::uint32_t(d.feature_dim()));
  const Mat<S>& x = d.raw_features();
  for (Index i = 0; i < x.size(); ++i) {
    const float f = float(x.data()[i]);  // row-major storage
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
}

template <class S>
void save_dataset(const std::filesystem::path& dir, const Dataset<S>& d) {
  std::filesystem::create_directories(dir);
  save_features(dir, d);
  {
    std::ofstream os(dir / "labels.txt");
    for (int label : d.labels) os << label << "\n";
  }
  {
    std::ofstream os(dir / "attributes.txt");
    for (Index c = 0; c < d.A.rows(); ++c) {
      for (Index j = 0; j < d.A.cols(); ++j) {
        os << (j ? " " : "") << io_detail::format_real(double(d.A(c, j)));
      }
      os << "\n";
    }
  }
  if (!d.class_names.empty()) {
    std::ofstream os(dir / "classes.txt");
    for (const std::string& n : d.class_names) os << n << "\n";
  }
  if (!d.sources.empty()) {
    std::ofstream os(dir / "sources.txt");
    for (const SourceSpan& s : d.sources) {
      os << s.name << " " << s.class_offset << " " << s.class_count << " "
         << s.attribute_dim << "\n";
    }
  }
}

inline void save_splits(const std::filesystem::path& dir, const SplitSpec& split) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "splits.txt");
  auto line = [&](const char* tag, const std::vector<int>& ids) {
    os << tag << ":";
    for (int c : ids) os << " " << c;
    os << "\n";
  };
  line("seen", split.seen);
  line("unseen", split.unseen);
  line("sup", split.sup);
  line("qry", split.qry);
}

template <class S>
Dataset<S> load_dataset(const std::filesystem::path& dir) {
  const auto feature_path = dir / "features.bin";
  std::ifstream fs(feature_path, std::ios::binary);
  if (!fs) throw FormatError(cat("missing file ", feature_path.string()));
  char magic[6];
  if (!fs.read(magic, 6) || std::memcmp(magic, io_detail::kFeatureMagic, 6) != 0) {
    throw FormatError(cat(feature_path.string(), ": bad magic, expected TGMZF1"));
  }
  const std::uint32_t n = io_detail::read_u32(fs, feature_path.string());
  const std::uint32_t d_x = io_detail::read_u32(fs, feature_path.string());
  Mat<S> x(static_cast<Index>(n), static_cast<Index>(d_x));
  for (Index i = 0; i < x.size(); ++i) {
    float f = 0;
    if (!fs.read(reinterpret_cast<char*>(&f), 4)) {
      throw FormatError(cat(feature_path.string(), ": truncated at value ", i, " of ",
                            x.size()));
    }
    x.data()[i] = S(f);
  }

  const auto label_path = dir / "labels.txt";
  std::ifstream ls(label_path);
  if (!ls) throw FormatError(cat("missing file ", label_path.string()));
  std::vector<int> labels;
  std::string line;
  int lineno = 0;
  while (std::getline(ls, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream iss(line);
    int v = 0;
    if (!(iss >> v)) {
      throw FormatError(cat(label_path.string(), ":", lineno, ": expected an integer"));
    }
    labels.push_back(v);
  }
  if (labels.size() != n) {
    throw FormatError(cat(label_path.string(), ": ", labels.size(), " labels but ",
                          n, " feature rows"));
  }

  const auto attr_path = dir / "attributes.txt";
  std::ifstream as(attr_path);
  if (!as) throw FormatError(cat("missing file ", attr_path.string()));
  std::vector<std::vector<double>> rows;
  lineno = 0;
  while (std::getline(as, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::vector<double> row;
    double v = 0;
    while (iss >> v) row.push_back(v);
    if (rows.empty()) {
      if (row.empty()) {
        throw FormatError(cat(attr_path.string(), ":", lineno, ": empty attribute row"));
      }
    } else if (row.size() != rows[0].size()) {
      throw FormatError(cat(attr_path.string(), ":", lineno, ": expected ",
                            rows[0].size(), " columns, got ", row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(cat(attr_path.string(), ": no attribute rows"));
  Mat<S> attrs(Index(rows.size()), Index(rows[0].size()));
  for (Index c = 0; c < attrs.rows(); ++c) {
    for (Index j = 0; j < attrs.cols(); ++j) {
      attrs(c, j) = S(rows[std::size_t(c)][std::size_t(j)]);
    }
  }

  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= int(attrs.rows())) {
      throw FormatError(cat(label_path.string(), ":", i + 1, ": label ", labels[i],
                            " outside [0, ", attrs.rows(), ")"));
    }
  }

  Dataset<S> d(dir.filename().string(), std::move(x), std::move(attrs),
               std::move(labels));

  const auto names_path = dir / "classes.txt";
  if (std::filesystem::exists(names_path)) {
    std::ifstream ns(names_path);
    while (std::getline(ns, line)) {
      if (!line.empty()) d.class_names.push_back(line);
    }
  }
  const auto sources_path = dir / "sources.txt";
  if (std::filesystem::exists(sources_path)) {
    std::ifstream ss(sources_path);
    lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream iss(line);
      SourceSpan span;
      long long dim = 0;
      if (!(iss >> span.name >> span.class_offset >> span.class_count >> dim)) {
        throw FormatError(cat(sources_path.string(), ":", lineno, ": bad source line"));
      }
      span.attribute_dim = Index(dim);
      d.sources.push_back(std::move(span));
    }
  }
  return d;
}

inline SplitSpec load_splits(const std::filesystem::path& dir, int num_classes) {
  const auto path = dir / "splits.txt";
  std::ifstream is(path);
  if (!is) throw FormatError(cat("missing file ", path.string()));
  std::string line;
  SplitSpec split;
  auto next_line = [&](const char* prefix, int lineno) {
    if (!std::getline(is, line)) {
      throw FormatError(cat(path.string(), ":", lineno, ": missing '", prefix, "' line"));
    }
    return io_detail::parse_id_line(line, path.string(), lineno, prefix);
  };
  split.seen = next_line("seen:", 1);
  split.unseen = next_line("unseen:", 2);
  split.sup = next_line("sup:", 3);
  split.qry = next_line("qry:", 4);
  split.validate(num_classes);
  return split;
}

// Per-dimension z-score over the seen training rows, applied to every row.
// Statistics never touch unseen-class features beyond the in-place transform.
template <class S>
void standardize_features(Dataset<S>& d, const std::vector<Index>& fit_rows) {
  if (fit_rows.empty()) throw ContractError("standardize: no rows to fit");
  Mat<S>& x = d.mutable_features();
  Mat<S> mean = Mat<S>::Zero(1, x.cols());
  for (Index r : fit_rows) mean += x.row(r);
  mean /= S(fit_rows.size());
  Mat<S> var = Mat<S>::Zero(1, x.cols());
  for (Index r : fit_rows) {
    var += (x.row(r) - mean.row(0)).cwiseProduct(x.row(r) - mean.row(0));
  }
  var /= S(fit_rows.size());
  Mat<S> inv_std = (var.array() + S(1e-12)).rsqrt().matrix();
  x = ((x.rowwise() - mean.row(0)).array().rowwise() * inv_std.row(0).array()).matrix();
}

}  // namespace tgmz
