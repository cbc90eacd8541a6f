#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace odtk {

enum class ErrorKind {
  MissingFile,
  BadManifest,
  ShapeMismatch,
  NonFiniteValue,
  InvalidRecord,
  MissingTensor,
  InvalidArgument,
  IncompatibleBundles,
  Degenerate,
  MalformedReport,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::MissingFile: return "MissingFile";
  case ErrorKind::BadManifest: return "BadManifest";
  case ErrorKind::ShapeMismatch: return "ShapeMismatch";
  case ErrorKind::NonFiniteValue: return "NonFiniteValue";
  case ErrorKind::InvalidRecord: return "InvalidRecord";
  case ErrorKind::MissingTensor: return "MissingTensor";
  case ErrorKind::InvalidArgument: return "InvalidArgument";
  case ErrorKind::IncompatibleBundles: return "IncompatibleBundles";
  case ErrorKind::Degenerate: return "Degenerate";
  case ErrorKind::MalformedReport: return "MalformedReport";
  case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Process exit status for a failure of this kind: 3 + the enumerator's
/// position. 0 is success, 1 an unclassified failure, 2 a usage error.
constexpr int exit_code(ErrorKind kind) noexcept { return 3 + static_cast<int>(kind); }

/// All toolkit failures. The kind drives the CLI exit code; the message names
/// the offending file, field or argument.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Dense row-major matrix with value semantics.
template <class T> class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw Error(ErrorKind::ShapeMismatch,
                  "matrix buffer holds " + std::to_string(data_.size()) +
                      " values, expected " + std::to_string(rows_ * cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T &operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T> column(std::size_t c) const {
    std::vector<T> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      out[r] = (*this)(r, c);
    return out;
  }

  T *data() noexcept { return data_.data(); }
  const T *data() const noexcept { return data_.data(); }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> values() noexcept { return data_; }

  friend bool operator==(const Matrix &, const Matrix &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// Sorted, duplicate-free list of dimension indices.
using IndexSet = std::vector<std::size_t>;

inline IndexSet make_index_set(std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

inline std::size_t intersection_size(const IndexSet &a, const IndexSet &b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

inline void require(bool cond, ErrorKind kind, const std::string &what) {
  if (!cond)
    throw Error(kind, what);
}

} // namespace odtk
