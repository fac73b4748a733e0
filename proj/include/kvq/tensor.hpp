#pragma once

#include <cstddef>
#include <span>

#include <Eigen/Core>

namespace kvq {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RowMatrixF = RowMatrix<float>;
using RowVectorF = RowVector<float>;

/// Dense row-major matrix of 32-bit floats. Rows are tokens (or output
/// features), columns are channels. Every value is finite; the constructors
/// reject NaN and Inf. Immutable after construction.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols);  // zero-filled
  explicit Tensor2D(RowMatrixF values);
  Tensor2D(std::size_t rows, std::size_t cols, std::span<const float> values);

  std::size_t rows() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(m_.cols()); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(m_.size()); }
  bool empty() const noexcept { return m_.size() == 0; }

  float operator()(std::size_t r, std::size_t c) const {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  std::span<const float> data() const noexcept { return {m_.data(), size()}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {m_.data() + r * cols(), cols()};
  }
  const RowMatrixF& matrix() const noexcept { return m_; }

  /// Rows [begin, begin + count) as a new tensor.
  Tensor2D slice_rows(std::size_t begin, std::size_t count) const;

  friend bool operator==(const Tensor2D& a, const Tensor2D& b);

 private:
  RowMatrixF m_;
};

/// Stack tensors with equal column counts top to bottom.
Tensor2D vstack(std::span<const Tensor2D> parts, std::size_t cols);

/// Byte-level equality of the float payloads (distinguishes -0 from +0).
bool bit_equal(const Tensor2D& a, const Tensor2D& b);

template <typename DerivedA, typename DerivedB>
double mean_squared_error(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() == 0) return 0.0;
  return (a.template cast<double>() - b.template cast<double>()).squaredNorm() /
         static_cast<double>(a.size());
}

template <typename DerivedA, typename DerivedB>
double max_abs_error(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() == 0) return 0.0;
  return (a.template cast<double>() - b.template cast<double>()).cwiseAbs().maxCoeff();
}

inline double mean_squared_error(const Tensor2D& a, const Tensor2D& b) {
  return mean_squared_error(a.matrix(), b.matrix());
}
inline double max_abs_error(const Tensor2D& a, const Tensor2D& b) {
  return max_abs_error(a.matrix(), b.matrix());
}

}  // namespace kvq
