#ifndef DCFF_TENSOR_HPP
#define DCFF_TENSOR_HPP

#include "dcff/types.hpp"

#include <vector>

namespace dcff {

/// Geometry of one convolution. Filter banks are stored as (d+1) x c_out
/// matrices with d = in_channels*kernel_h*kernel_w; column k holds filter k
/// flattened channel-major (then row, then column) with its bias in the last
/// row.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;

  int patch_len() const { return in_channels * kernel_h * kernel_w; }
  int out_dim(int in, int kernel) const {
    return (in + 2 * padding - kernel) / stride + 1;
  }
  void validate(const Tensor4& input, Eigen::Index bank_rows,
                Eigen::Index bank_cols) const;
};

Tensor4 conv2d_forward(const Tensor4& input, const Mat& bank, const ConvSpec& spec);

struct ConvGrads {
  Tensor4 input;
  Mat bank;  // same shape as the forward bank, bias-row gradient included
};
ConvGrads conv2d_backward(const Tensor4& input, const Mat& bank, const ConvSpec& spec,
                          const Tensor4& grad_out);

/// Per-channel batch normalization state. Running statistics follow the
/// usual convention: biased variance normalizes the batch, the unbiased
/// estimate feeds running_var.
struct BatchNorm {
  Vec gamma, beta;
  Vec running_mean, running_var;
  Scalar momentum = 0.1;
  Scalar eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(int channels)
      : gamma(Vec::Ones(channels)),
        beta(Vec::Zero(channels)),
        running_mean(Vec::Zero(channels)),
        running_var(Vec::Ones(channels)) {}
  int channels() const { return static_cast<int>(gamma.size()); }
};

struct BatchNormCache {
  Vec mean, inv_std;  // batch statistics used by the forward pass
};

Tensor4 batchnorm_forward(const Tensor4& input, BatchNorm& bn, bool training,
                          BatchNormCache* cache);

struct BatchNormGrads {
  Tensor4 input;
  Vec gamma, beta;
};
BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNorm& bn,
                                  const BatchNormCache& cache,
                                  const Tensor4& grad_out);

Tensor4 relu_forward(const Tensor4& input);
Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_out);

Tensor4 avgpool_forward(const Tensor4& input, int kernel, int stride);
Tensor4 avgpool_backward(const Tensor4& input, int kernel, int stride,
                         const Tensor4& grad_out);

/// Fully connected layer over (n, features, 1, 1) tensors; weights use the
/// same bias-row bank layout as convolutions: (features+1) x outputs.
Tensor4 linear_forward(const Tensor4& input, const Mat& bank);

struct LinearGrads {
  Tensor4 input;
  Mat bank;
};
LinearGrads linear_backward(const Tensor4& input, const Mat& bank,
                            const Tensor4& grad_out);

Tensor4 flatten(const Tensor4& input);
Tensor4 unflatten(const Tensor4& input, int c, int h, int w);

struct LossResult {
  Scalar loss = 0;
  Tensor4 grad_logits;
};
/// Mean softmax cross-entropy over the batch; logits are (n, classes, 1, 1).
LossResult softmax_cross_entropy(const Tensor4& logits, const std::vector<int>& labels);

}  // namespace dcff

#endif  // DCFF_TENSOR_HPP
