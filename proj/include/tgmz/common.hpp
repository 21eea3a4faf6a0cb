#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace tgmz {

// All tensors in this codebase are dense 2-D row-major matrices; row vectors
// (1 x d) stand in for 1-D quantities like biases and per-feature statistics.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <class T, class... Ts>
void cat_into(std::ostringstream& os, const T& head, const Ts&... tail) {
  os << head;
  cat_into(os, tail...);
}
}  // namespace detail

template <class... Ts>
std::string cat(const Ts&... parts) {
  std::ostringstream os;
  detail::cat_into(os, parts...);
  return os.str();
}

template <class S>
std::string shape_str(const Mat<S>& m) {
  return cat(m.rows(), "x", m.cols());
}

template <class S>
void require_shape(const Mat<S>& m, Index rows, Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(cat(what, ": expected ", rows, "x", cols, ", got ",
                             shape_str(m)));
  }
}

template <class S>
void require_same_shape(const Mat<S>& a, const Mat<S>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(
        cat(what, ": shapes disagree: ", shape_str(a), " vs ", shape_str(b)));
  }
}

}  // namespace tgmz
