#include "kvq/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "kvq/errors.hpp"

namespace kvq {
namespace {

void require_finite(const RowMatrixF& m) {
  if (!m.allFinite()) {
    throw PreconditionError("Tensor2D values must be finite (no NaN or Inf)");
  }
}

}  // namespace

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols)
    : m_(RowMatrixF::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))) {}

Tensor2D::Tensor2D(RowMatrixF values) : m_(std::move(values)) { require_finite(m_); }

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::span<const float> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("Tensor2D: " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " needs " + std::to_string(rows * cols) + " values, got " +
                     std::to_string(values.size()));
  }
  m_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (!values.empty()) std::memcpy(m_.data(), values.data(), values.size_bytes());
  require_finite(m_);
}

Tensor2D Tensor2D::slice_rows(std::size_t begin, std::size_t count) const {
  if (begin + count > rows()) {
    throw ShapeError("slice_rows: range exceeds " + std::to_string(rows()) + " rows");
  }
  return Tensor2D(count, cols(), data().subspan(begin * cols(), count * cols()));
}

bool operator==(const Tensor2D& a, const Tensor2D& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a.m_ == b.m_;
}

Tensor2D vstack(std::span<const Tensor2D> parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols && !p.empty()) throw ShapeError("vstack: column count mismatch");
    rows += p.rows();
  }
  RowMatrixF out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    out.middleRows(at, static_cast<Eigen::Index>(p.rows())) = p.matrix();
    at += static_cast<Eigen::Index>(p.rows());
  }
  return Tensor2D(std::move(out));
}

bool bit_equal(const Tensor2D& a, const Tensor2D& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

}  // namespace kvq
