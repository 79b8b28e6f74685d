#ifndef DCFF_NETWORKS_HPP
#define DCFF_NETWORKS_HPP

#include "dcff/fusion.hpp"
#include "dcff/tensor.hpp"
#include "dcff/types.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace dcff {

enum class Arch { tinycnn, vgg16, resnet20, resnet56, resnet110 };

Arch arch_from_name(const std::string& name);
std::string arch_name(Arch a);

/// Architecture plus per-conv-layer keep counts. The keep vector has one
/// entry per convolution in execution order; entries for layers that cannot
/// shrink (the ResNet stem and every block's second convolution, which must
/// match the shortcut width) are required to equal the full width.
struct NetSpec {
  Arch arch = Arch::tinycnn;
  int in_channels = 1, in_h = 8, in_w = 8;
  int classes = 10;
  std::vector<int> keep;  // empty means full widths everywhere
};

NetSpec default_spec(Arch a, int classes = 10);
std::vector<int> full_widths(Arch a);
std::vector<bool> prunable_mask(Arch a);

/// One trainable convolution: the full-width original bank plus its fusion
/// snapshot, batch norm sized to the kept width, and SGD scratch buffers.
struct ConvLayer {
  ConvSpec spec;  // in_channels already reflects the previous layer's keep;
                  // out_channels is the kept width used by the forward pass
  int full_width = 0;
  int keep_width = 0;
  bool prunable = true;
  bool relu_after = true;

  Mat bank;           // (d+1) x full_width
  Mat bank_velocity;  // momentum buffer, same shape
  Mat bank_grad;
  BatchNorm bn;  // keep_width channels
  Vec bn_gamma_velocity, bn_beta_velocity;
  Vec bn_gamma_grad, bn_beta_grad;
  FusionState fusion;
};

struct ClassifierLayer {
  Mat bank;  // (features+1) x classes
  Mat velocity;
  Mat grad;
};

struct StemUnit {
  int conv;  // index into LayerGraph::convs
};
struct PoolUnit {
  int kernel, stride;
};
struct ClassifierUnit {};

struct BasicBlockUnit {
  int conv_a, conv_b;
  int stride;
  bool pad_shortcut;  // zero-pad channels and subsample spatially (stage entry)
};

using Unit = std::variant<StemUnit, BasicBlockUnit, PoolUnit, ClassifierUnit>;

struct LayerGraph {
  NetSpec spec;
  std::vector<ConvLayer> convs;
  std::vector<Unit> units;
  ClassifierLayer classifier;
  int classifier_features = 0;
  bool fusion_on = true;  // false: fused banks are plain column gathers

  void zero_grads();
};

/// Instantiate the graph with seeded He-initialized weights. Throws
/// ValueError listing the offending layers when the keep vector is
/// inconsistent with the architecture.
LayerGraph build(const NetSpec& spec, std::mt19937_64& rng);

struct Complexity {
  std::uint64_t flops = 0;   // multiply-accumulates of conv + linear layers
  std::uint64_t params = 0;  // weights + biases + batch-norm affine terms
};
Complexity count_complexity(const NetSpec& spec);

/// Per-unit activations saved by a training forward pass.
struct ConvCache {
  Tensor4 input;
  Tensor4 pre_bn;
  Tensor4 post_bn;
  BatchNormCache bn;
};
struct StemCache {
  ConvCache conv;
};
struct BasicBlockCache {
  ConvCache a, b;
  Tensor4 pre_relu;  // residual sum before the closing relu
};
struct PoolCache {
  Tensor4 input;
};
struct ClassifierCache {
  Tensor4 flat;
  int c = 0, h = 0, w = 0;
};
using UnitCache = std::variant<StemCache, BasicBlockCache, PoolCache, ClassifierCache>;

struct Tape {
  std::vector<UnitCache> units;
};

/// Refresh every layer's fused bank from its current weights and stored
/// proxy rows (or selection when fusion is off). Cheap; run before every
/// forward so the fused filters track the live parameters.
void refresh_fused_banks(LayerGraph& g);

Tensor4 forward(LayerGraph& g, const Tensor4& input, bool training, Tape* tape);

/// Backpropagate per-batch gradients into bank_grad/bn_*_grad/classifier.grad.
/// Bank gradients land in original-filter space via the fusion rule.
void backward(LayerGraph& g, const Tape& tape, const Tensor4& grad_logits);

}  // namespace dcff

#endif  // DCFF_NETWORKS_HPP
