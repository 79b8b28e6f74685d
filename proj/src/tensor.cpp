#include "dcff/tensor.hpp"

#include <cmath>

namespace dcff {
namespace {

// Patch matrix for one sample: (d+1) x (oh*ow), rows ordered channel-major
// then kernel row then kernel column, last row all ones so the bank's bias
// row takes part in the same product.
Mat patch_matrix(const Tensor4& input, int sample, const ConvSpec& s, int oh, int ow) {
  const Eigen::Index cols = static_cast<Eigen::Index>(oh) * ow;
  Mat m = Mat::Zero(s.patch_len() + 1, cols);
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const int row = (c * s.kernel_h + ky) * s.kernel_w + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * s.stride + ky - s.padding;
          if (y < 0 || y >= input.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int x = ox * s.stride + kx - s.padding;
            if (x < 0 || x >= input.w) continue;
            m(row, static_cast<Eigen::Index>(oy) * ow + ox) = input.at(sample, c, y, x);
          }
        }
      }
    }
  }
  m.row(s.patch_len()).setOnes();
  return m;
}

// Scatter the weight rows of a patch-matrix gradient back onto the input.
void scatter_patches(const Mat& grad_patches, int sample, const ConvSpec& s, int oh,
                     int ow, Tensor4& grad_input) {
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const int row = (c * s.kernel_h + ky) * s.kernel_w + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * s.stride + ky - s.padding;
          if (y < 0 || y >= grad_input.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int x = ox * s.stride + kx - s.padding;
            if (x < 0 || x >= grad_input.w) continue;
            grad_input.at(sample, c, y, x) +=
                grad_patches(row, static_cast<Eigen::Index>(oy) * ow + ox);
          }
        }
      }
    }
  }
}

}  // namespace

void ConvSpec::validate(const Tensor4& input, Eigen::Index bank_rows,
                        Eigen::Index bank_cols) const {
  if (in_channels <= 0 || out_channels <= 0 || kernel_h <= 0 || kernel_w <= 0 ||
      stride <= 0 || padding < 0)
    throw ShapeError("conv2d: invalid spec (channels/kernels positive, stride >= 1, padding >= 0)");
  if (input.c != in_channels)
    throw ShapeError("conv2d: input has " + std::to_string(input.c) +
                     " channels, spec expects " + std::to_string(in_channels));
  if (bank_cols != out_channels)
    throw ShapeError("conv2d: bank has " + std::to_string(bank_cols) +
                     " columns, spec expects " + std::to_string(out_channels));
  if (bank_rows != patch_len() + 1)
    throw ShapeError("conv2d: bank has " + std::to_string(bank_rows) +
                     " rows, spec expects " + std::to_string(patch_len() + 1) +
                     " (weights + bias row)");
  if (out_dim(input.h, kernel_h) <= 0 || out_dim(input.w, kernel_w) <= 0)
    throw ShapeError("conv2d: non-positive output dims for input " + input.shape_str());
}

Tensor4 conv2d_forward(const Tensor4& input, const Mat& bank, const ConvSpec& spec) {
  spec.validate(input, bank.rows(), bank.cols());
  const int oh = spec.out_dim(input.h, spec.kernel_h);
  const int ow = spec.out_dim(input.w, spec.kernel_w);
  Tensor4 out(input.n, spec.out_channels, oh, ow);
  for (int i = 0; i < input.n; ++i) {
    const Mat patches = patch_matrix(input, i, spec, oh, ow);
    out.sample(i).noalias() = bank.transpose() * patches;
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor4& input, const Mat& bank, const ConvSpec& spec,
                          const Tensor4& grad_out) {
  spec.validate(input, bank.rows(), bank.cols());
  const int oh = spec.out_dim(input.h, spec.kernel_h);
  const int ow = spec.out_dim(input.w, spec.kernel_w);
  if (grad_out.n != input.n || grad_out.c != spec.out_channels || grad_out.h != oh ||
      grad_out.w != ow)
    throw ShapeError("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                     " does not match forward output");
  ConvGrads g;
  g.input = Tensor4(input.n, input.c, input.h, input.w);
  g.bank = Mat::Zero(bank.rows(), bank.cols());
  for (int i = 0; i < input.n; ++i) {
    const Mat patches = patch_matrix(input, i, spec, oh, ow);
    auto go = grad_out.sample(i);  // c_out x (oh*ow)
    g.bank.noalias() += patches * go.transpose();
    const Mat grad_patches = bank * go;  // (d+1) x (oh*ow); bias row unused
    scatter_patches(grad_patches, i, spec, oh, ow, g.input);
  }
  return g;
}

Tensor4 batchnorm_forward(const Tensor4& input, BatchNorm& bn, bool training,
                          BatchNormCache* cache) {
  if (input.c != bn.channels())
    throw ShapeError("batchnorm: input has " + std::to_string(input.c) +
                     " channels, state has " + std::to_string(bn.channels()));
  const Eigen::Index hw = static_cast<Eigen::Index>(input.h) * input.w;
  const Scalar m = static_cast<Scalar>(input.n) * hw;
  Tensor4 out(input.n, input.c, input.h, input.w);

  Vec mean(input.c), var(input.c);
  if (training) {
    for (int c = 0; c < input.c; ++c) {
      Scalar sum = 0, sumsq = 0;
      for (int i = 0; i < input.n; ++i) {
        auto row = input.sample(i).row(c);
        sum += row.sum();
        sumsq += row.squaredNorm();
      }
      mean[c] = sum / m;
      var[c] = sumsq / m - mean[c] * mean[c];
      if (var[c] < 0) var[c] = 0;  // guard against roundoff
    }
    bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean;
    const Scalar unbias = m > 1 ? m / (m - 1) : 1.0;
    bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * (unbias * var);
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }
  Vec inv_std = (var.array() + bn.eps).rsqrt();
  for (int i = 0; i < input.n; ++i) {
    auto in = input.sample(i);
    auto o = out.sample(i);
    for (int c = 0; c < input.c; ++c)
      o.row(c) = (in.row(c).array() - mean[c]) * inv_std[c] * bn.gamma[c] + bn.beta[c];
  }
  if (cache) {
    cache->mean = mean;
    cache->inv_std = inv_std;
  }
  return out;
}

BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNorm& bn,
                                  const BatchNormCache& cache,
                                  const Tensor4& grad_out) {
  if (!grad_out.same_shape(input))
    throw ShapeError("batchnorm_backward: grad_out shape " + grad_out.shape_str() +
                     " != input shape " + input.shape_str());
  const Eigen::Index hw = static_cast<Eigen::Index>(input.h) * input.w;
  const Scalar m = static_cast<Scalar>(input.n) * hw;
  BatchNormGrads g;
  g.input = Tensor4(input.n, input.c, input.h, input.w);
  g.gamma = Vec::Zero(input.c);
  g.beta = Vec::Zero(input.c);
  for (int c = 0; c < input.c; ++c) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < input.n; ++i) {
      auto dy = grad_out.sample(i).row(c).array();
      auto xhat = (input.sample(i).row(c).array() - cache.mean[c]) * cache.inv_std[c];
      sum_dy += dy.sum();
      sum_dy_xhat += (dy * xhat).sum();
    }
    g.gamma[c] = sum_dy_xhat;
    g.beta[c] = sum_dy;
    const Scalar k = bn.gamma[c] * cache.inv_std[c] / m;
    for (int i = 0; i < input.n; ++i) {
      auto dy = grad_out.sample(i).row(c).array();
      auto xhat = (input.sample(i).row(c).array() - cache.mean[c]) * cache.inv_std[c];
      g.input.sample(i).row(c) = k * (m * dy - sum_dy - xhat * sum_dy_xhat);
    }
  }
  return g;
}

Tensor4 relu_forward(const Tensor4& input) {
  Tensor4 out(input.n, input.c, input.h, input.w);
  out.data = input.data.max(0.0);
  return out;
}

Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_out) {
  if (!grad_out.same_shape(input))
    throw ShapeError("relu_backward: grad_out shape " + grad_out.shape_str() +
                     " != input shape " + input.shape_str());
  Tensor4 g(input.n, input.c, input.h, input.w);
  g.data = (input.data > 0.0).select(grad_out.data, 0.0);
  return g;
}

Tensor4 avgpool_forward(const Tensor4& input, int kernel, int stride) {
  if (kernel <= 0 || stride <= 0 || kernel > input.h || kernel > input.w)
    throw ShapeError("avgpool: kernel " + std::to_string(kernel) +
                     " does not fit input " + input.shape_str());
  const int oh = (input.h - kernel) / stride + 1;
  const int ow = (input.w - kernel) / stride + 1;
  Tensor4 out(input.n, input.c, oh, ow);
  const Scalar inv = 1.0 / (static_cast<Scalar>(kernel) * kernel);
  for (int i = 0; i < input.n; ++i)
    for (int c = 0; c < input.c; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          Scalar s = 0;
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx)
              s += input.at(i, c, oy * stride + ky, ox * stride + kx);
          out.at(i, c, oy, ox) = s * inv;
        }
  return out;
}

Tensor4 avgpool_backward(const Tensor4& input, int kernel, int stride,
                         const Tensor4& grad_out) {
  const int oh = (input.h - kernel) / stride + 1;
  const int ow = (input.w - kernel) / stride + 1;
  if (grad_out.n != input.n || grad_out.c != input.c || grad_out.h != oh ||
      grad_out.w != ow)
    throw ShapeError("avgpool_backward: grad_out shape " + grad_out.shape_str() +
                     " does not match pooled output");
  Tensor4 g(input.n, input.c, input.h, input.w);
  const Scalar inv = 1.0 / (static_cast<Scalar>(kernel) * kernel);
  for (int i = 0; i < input.n; ++i)
    for (int c = 0; c < input.c; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Scalar v = grad_out.at(i, c, oy, ox) * inv;
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx)
              g.at(i, c, oy * stride + ky, ox * stride + kx) += v;
        }
  return g;
}

Tensor4 linear_forward(const Tensor4& input, const Mat& bank) {
  if (input.h != 1 || input.w != 1)
    throw ShapeError("linear: expected (n, features, 1, 1) input, got " +
                     input.shape_str());
  if (bank.rows() != input.c + 1)
    throw ShapeError("linear: bank has " + std::to_string(bank.rows()) +
                     " rows, expected " + std::to_string(input.c + 1));
  Tensor4 out(input.n, static_cast<int>(bank.cols()), 1, 1);
  out.rows().noalias() = input.rows() * bank.topRows(input.c);
  out.rows().rowwise() += bank.row(input.c);
  return out;
}

LinearGrads linear_backward(const Tensor4& input, const Mat& bank,
                            const Tensor4& grad_out) {
  if (grad_out.n != input.n || grad_out.c != bank.cols() || grad_out.h != 1 ||
      grad_out.w != 1)
    throw ShapeError("linear_backward: grad_out shape " + grad_out.shape_str() +
                     " does not match output");
  LinearGrads g;
  g.input = Tensor4(input.n, input.c, 1, 1);
  g.bank = Mat::Zero(bank.rows(), bank.cols());
  auto go = grad_out.rows();
  g.bank.topRows(input.c).noalias() = input.rows().transpose() * go;
  g.bank.row(input.c) = go.colwise().sum();
  g.input.rows().noalias() = go * bank.topRows(input.c).transpose();
  return g;
}

Tensor4 flatten(const Tensor4& input) {
  Tensor4 out(input.n, input.c * input.h * input.w, 1, 1);
  out.data = input.data;
  return out;
}

Tensor4 unflatten(const Tensor4& input, int c, int h, int w) {
  if (static_cast<Eigen::Index>(c) * h * w != static_cast<Eigen::Index>(input.c))
    throw ShapeError("unflatten: cannot reshape " + input.shape_str());
  Tensor4 out(input.n, c, h, w);
  out.data = input.data;
  return out;
}

LossResult softmax_cross_entropy(const Tensor4& logits, const std::vector<int>& labels) {
  if (logits.h != 1 || logits.w != 1)
    throw ShapeError("softmax_cross_entropy: expected (n, classes, 1, 1) logits, got " +
                     logits.shape_str());
  if (static_cast<int>(labels.size()) != logits.n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.n) + " samples");
  const int classes = logits.c;
  for (int i = 0; i < logits.n; ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw ValueError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range [0, " + std::to_string(classes) + ")");
  LossResult r;
  r.grad_logits = Tensor4(logits.n, classes, 1, 1);
  const Scalar inv_n = 1.0 / logits.n;
  Scalar total = 0;
  for (int i = 0; i < logits.n; ++i) {
    Eigen::ArrayXd row =
        logits.data.segment(static_cast<Eigen::Index>(i) * classes, classes);
    const Scalar mx = row.maxCoeff();
    Eigen::ArrayXd ex = (row - mx).exp();
    const Scalar z = ex.sum();
    total += std::log(z) - (row[labels[i]] - mx);
    Eigen::ArrayXd p = ex / z;
    p[labels[i]] -= 1.0;
    r.grad_logits.data.segment(static_cast<Eigen::Index>(i) * classes, classes) =
        p * inv_n;
  }
  r.loss = total * inv_n;
  return r;
}

}  // namespace dcff
