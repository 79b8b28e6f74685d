#ifndef DCFF_TYPES_HPP
#define DCFF_TYPES_HPP

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcff {

using Scalar = double;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dimension or shape disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside its legal domain (bad temperature, label range, keep count, ...).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable or malformed file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, int batch)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch)),
        epoch(epoch),
        batch(batch) {}
  int epoch;
  int batch;
};

/// Dense NCHW tensor with an optional paired gradient buffer of the same length.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  Eigen::ArrayXd data;  // length n*c*h*w
  Eigen::ArrayXd grad;  // empty, or same length as data

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw ShapeError("Tensor4: negative dimension");
    data = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(n_) * c_ * h_ * w_);
  }

  Eigen::Index size() const { return data.size(); }

  Eigen::Index index(int i, int j, int y, int x) const {
    return ((static_cast<Eigen::Index>(i) * c + j) * h + y) * w + x;
  }
  Scalar& at(int i, int j, int y, int x) { return data[index(i, j, y, x)]; }
  Scalar at(int i, int j, int y, int x) const { return data[index(i, j, y, x)]; }

  bool has_grad() const { return grad.size() == data.size() && data.size() > 0; }
  void alloc_grad() { grad = Eigen::ArrayXd::Zero(data.size()); }

  /// channels-by-pixels view of one sample, rows are channels.
  Eigen::Map<RowMat> sample(int i) {
    return Eigen::Map<RowMat>(data.data() + index(i, 0, 0, 0), c,
                              static_cast<Eigen::Index>(h) * w);
  }
  Eigen::Map<const RowMat> sample(int i) const {
    return Eigen::Map<const RowMat>(data.data() + index(i, 0, 0, 0), c,
                                    static_cast<Eigen::Index>(h) * w);
  }

  /// samples-by-features view of the whole tensor.
  Eigen::Map<RowMat> rows() {
    return Eigen::Map<RowMat>(data.data(), n, static_cast<Eigen::Index>(c) * h * w);
  }
  Eigen::Map<const RowMat> rows() const {
    return Eigen::Map<const RowMat>(data.data(), n,
                                    static_cast<Eigen::Index>(c) * h * w);
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
  bool all_finite() const { return data.isFinite().all(); }
};

}  // namespace dcff

#endif  // DCFF_TYPES_HPP
