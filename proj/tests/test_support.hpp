#ifndef DCFF_TEST_SUPPORT_HPP
#define DCFF_TEST_SUPPORT_HPP

#include "dcff/tensor.hpp"
#include "dcff/types.hpp"

#include <functional>
#include <random>

namespace dcff::testing {

inline Tensor4 random_tensor(int n, int c, int h, int w, std::mt19937_64& rng,
                             Scalar scale = 1.0) {
  std::normal_distribution<Scalar> normal(0.0, scale);
  Tensor4 t(n, c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = normal(rng);
  return t;
}

inline Mat random_mat(int rows, int cols, std::mt19937_64& rng, Scalar scale = 1.0) {
  std::normal_distribution<Scalar> normal(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// Gradient check pass criterion: relative error below tol with a small
/// absolute floor for entries whose true gradient is zero.
inline bool grad_close(Scalar analytic, Scalar numeric, Scalar tol = 1e-4,
                       Scalar abs_floor = 1e-7) {
  const Scalar diff = std::abs(analytic - numeric);
  return diff <= tol * std::max(std::abs(analytic), std::abs(numeric)) ||
         diff <= abs_floor;
}

/// Central finite difference of a scalar function with respect to one slot.
inline Scalar central_diff(const std::function<Scalar()>& f, Scalar& slot,
                           Scalar step = 1e-5) {
  const Scalar saved = slot;
  slot = saved + step;
  const Scalar up = f();
  slot = saved - step;
  const Scalar down = f();
  slot = saved;
  return (up - down) / (2 * step);
}

/// Plain nested-loop cross-correlation, the independent convolution oracle.
inline Tensor4 reference_conv(const Tensor4& input, const Mat& bank,
                              const ConvSpec& s) {
  const int oh = s.out_dim(input.h, s.kernel_h);
  const int ow = s.out_dim(input.w, s.kernel_w);
  Tensor4 out(input.n, s.out_channels, oh, ow);
  for (int i = 0; i < input.n; ++i)
    for (int k = 0; k < s.out_channels; ++k)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          Scalar acc = bank(s.patch_len(), k);  // bias
          for (int c = 0; c < s.in_channels; ++c)
            for (int ky = 0; ky < s.kernel_h; ++ky)
              for (int kx = 0; kx < s.kernel_w; ++kx) {
                const int y = oy * s.stride + ky - s.padding;
                const int x = ox * s.stride + kx - s.padding;
                if (y < 0 || y >= input.h || x < 0 || x >= input.w) continue;
                acc += input.at(i, c, y, x) *
                       bank((c * s.kernel_h + ky) * s.kernel_w + kx, k);
              }
          out.at(i, k, oy, ox) = acc;
        }
  return out;
}

}  // namespace dcff::testing

#endif  // DCFF_TEST_SUPPORT_HPP
