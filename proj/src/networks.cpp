#include "dcff/networks.hpp"

#include <cmath>
#include <sstream>

namespace dcff {
namespace {

// Structural description shared by build() and count_complexity() so the two
// can never disagree about what a spec means.
struct ConvPlan {
  int width = 0;  // full output width
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool prunable = true;
  bool relu_after = true;
};
struct PlanStem {
  ConvPlan conv;
};
struct PlanBlock {
  ConvPlan a, b;
  int stride;
};
struct PlanPool {
  int kernel, stride;  // kernel 0 means "global": pool the full spatial extent
};
struct PlanClassifier {};
using PlanUnit = std::variant<PlanStem, PlanBlock, PlanPool, PlanClassifier>;

std::vector<PlanUnit> architecture_plan(Arch arch) {
  std::vector<PlanUnit> plan;
  switch (arch) {
    case Arch::tinycnn:
      plan.push_back(PlanStem{{16}});
      plan.push_back(PlanPool{2, 2});
      plan.push_back(PlanStem{{32}});
      plan.push_back(PlanPool{2, 2});
      plan.push_back(PlanClassifier{});
      break;
    case Arch::vgg16: {
      const int cfg[] = {64, 64, -1, 128, 128, -1, 256, 256, 256, -1,
                         512, 512, 512, -1, 512, 512, 512, -1};
      for (int v : cfg) {
        if (v < 0)
          plan.push_back(PlanPool{2, 2});
        else
          plan.push_back(PlanStem{{v}});
      }
      plan.push_back(PlanClassifier{});
      break;
    }
    case Arch::resnet20:
    case Arch::resnet56:
    case Arch::resnet110: {
      const int depth = arch == Arch::resnet20 ? 20 : arch == Arch::resnet56 ? 56 : 110;
      const int n = (depth - 2) / 6;
      plan.push_back(PlanStem{{16, 3, 1, 1, /*prunable=*/false}});
      for (int stage = 0; stage < 3; ++stage) {
        const int width = 16 << stage;
        for (int b = 0; b < n; ++b) {
          const int stride = (stage > 0 && b == 0) ? 2 : 1;
          PlanBlock blk;
          blk.a = {width, 3, stride, 1, /*prunable=*/true, /*relu_after=*/true};
          blk.b = {width, 3, 1, 1, /*prunable=*/false, /*relu_after=*/false};
          blk.stride = stride;
          plan.push_back(blk);
        }
      }
      plan.push_back(PlanPool{0, 1});
      plan.push_back(PlanClassifier{});
      break;
    }
  }
  return plan;
}

void collect_convs(const std::vector<PlanUnit>& plan, std::vector<ConvPlan>& out) {
  for (const auto& u : plan) {
    if (const auto* s = std::get_if<PlanStem>(&u)) out.push_back(s->conv);
    if (const auto* b = std::get_if<PlanBlock>(&u)) {
      out.push_back(b->a);
      out.push_back(b->b);
    }
  }
}

void validate_keep(const NetSpec& spec, const std::vector<ConvPlan>& convs) {
  if (spec.keep.size() != convs.size())
    throw ValueError("keep vector has " + std::to_string(spec.keep.size()) +
                     " entries, " + arch_name(spec.arch) + " has " +
                     std::to_string(convs.size()) + " conv layers");
  std::ostringstream bad;
  for (size_t i = 0; i < convs.size(); ++i) {
    const int k = spec.keep[i];
    if (k < 1 || k > convs[i].width)
      bad << " layer " << i << ": keep " << k << " outside [1, " << convs[i].width
          << "];";
    else if (!convs[i].prunable && k != convs[i].width)
      bad << " layer " << i << ": not prunable, keep " << k << " must equal "
          << convs[i].width << ";";
  }
  if (bad.tellp() > 0)
    throw ValueError("inconsistent keep vector:" + bad.str());
}

Mat init_bank(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<Scalar> normal(0.0, std::sqrt(2.0 / fan_in));
  Mat bank(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i + 1 < rows; ++i) bank(i, j) = normal(rng);
  bank.row(rows - 1).setZero();  // biases start at zero
  return bank;
}

ConvLayer make_layer(const ConvPlan& p, int in_channels, int keep,
                     std::mt19937_64& rng) {
  ConvLayer layer;
  layer.spec = {in_channels, keep, p.kernel, p.kernel, p.stride, p.padding};
  layer.full_width = p.width;
  layer.keep_width = keep;
  layer.prunable = p.prunable;
  layer.relu_after = p.relu_after;
  const int rows = in_channels * p.kernel * p.kernel + 1;
  layer.bank = init_bank(rows, p.width, rows - 1, rng);
  layer.bank_velocity = Mat::Zero(rows, p.width);
  layer.bank_grad = Mat::Zero(rows, p.width);
  layer.bn = BatchNorm(keep);
  layer.bn_gamma_velocity = Vec::Zero(keep);
  layer.bn_beta_velocity = Vec::Zero(keep);
  layer.bn_gamma_grad = Vec::Zero(keep);
  layer.bn_beta_grad = Vec::Zero(keep);
  // Fusion placeholder before the first refresh: plainly keep the leading
  // columns so a freshly built graph can run a forward pass.
  layer.fusion.selected.resize(keep);
  for (int i = 0; i < keep; ++i) layer.fusion.selected[i] = i;
  layer.fusion.importance = Vec::Zero(p.width);
  layer.fusion.fused = gather_columns(layer.bank, layer.fusion.selected);
  return layer;
}

// Option-A shortcut: subsample every other pixel and zero-pad channels
// evenly front and back.
Tensor4 shortcut_forward(const Tensor4& x, int out_channels, int stride) {
  const int oh = (x.h + stride - 1) / stride;
  const int ow = (x.w + stride - 1) / stride;
  Tensor4 out(x.n, out_channels, oh, ow);
  const int front = (out_channels - x.c) / 2;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          out.at(i, front + c, y, xx) = x.at(i, c, y * stride, xx * stride);
  return out;
}

Tensor4 shortcut_backward(const Tensor4& grad_out, const Tensor4& x, int stride) {
  Tensor4 g(x.n, x.c, x.h, x.w);
  const int front = (grad_out.c - x.c) / 2;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < grad_out.h; ++y)
        for (int xx = 0; xx < grad_out.w; ++xx)
          g.at(i, c, y * stride, xx * stride) = grad_out.at(i, front + c, y, xx);
  return g;
}

Tensor4 conv_unit_forward(ConvLayer& layer, const Tensor4& x, bool training,
                          ConvCache* cache) {
  Tensor4 pre_bn = conv2d_forward(x, layer.fusion.fused, layer.spec);
  BatchNormCache bc;
  Tensor4 post_bn = batchnorm_forward(pre_bn, layer.bn, training, training ? &bc : nullptr);
  Tensor4 out = layer.relu_after ? relu_forward(post_bn) : post_bn;
  if (cache) {
    cache->input = x;
    cache->pre_bn = std::move(pre_bn);
    cache->post_bn = std::move(post_bn);
    cache->bn = std::move(bc);
  }
  return out;
}

Tensor4 conv_unit_backward(LayerGraph& g, ConvLayer& layer, const ConvCache& cache,
                           Tensor4 grad) {
  if (layer.relu_after) grad = relu_backward(cache.post_bn, grad);
  BatchNormGrads bg = batchnorm_backward(cache.pre_bn, layer.bn, cache.bn, grad);
  layer.bn_gamma_grad += bg.gamma;
  layer.bn_beta_grad += bg.beta;
  ConvGrads cg = conv2d_backward(cache.input, layer.fusion.fused, layer.spec, bg.input);
  if (g.fusion_on)
    layer.bank_grad += fuse_backward_rows(cg.bank, layer.fusion.proxy_rows);
  else
    layer.bank_grad += scatter_columns(cg.bank, layer.fusion.selected, layer.full_width);
  return std::move(cg.input);
}

}  // namespace

Arch arch_from_name(const std::string& name) {
  if (name == "tinycnn") return Arch::tinycnn;
  if (name == "vgg16") return Arch::vgg16;
  if (name == "resnet20") return Arch::resnet20;
  if (name == "resnet56") return Arch::resnet56;
  if (name == "resnet110") return Arch::resnet110;
  throw ValueError("unknown architecture '" + name + "'");
}

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::tinycnn: return "tinycnn";
    case Arch::vgg16: return "vgg16";
    case Arch::resnet20: return "resnet20";
    case Arch::resnet56: return "resnet56";
    case Arch::resnet110: return "resnet110";
  }
  return "?";
}

std::vector<int> full_widths(Arch a) {
  std::vector<ConvPlan> convs;
  collect_convs(architecture_plan(a), convs);
  std::vector<int> widths(convs.size());
  for (size_t i = 0; i < convs.size(); ++i) widths[i] = convs[i].width;
  return widths;
}

std::vector<bool> prunable_mask(Arch a) {
  std::vector<ConvPlan> convs;
  collect_convs(architecture_plan(a), convs);
  std::vector<bool> mask(convs.size());
  for (size_t i = 0; i < convs.size(); ++i) mask[i] = convs[i].prunable;
  return mask;
}

NetSpec default_spec(Arch a, int classes) {
  NetSpec s;
  s.arch = a;
  s.classes = classes;
  if (a == Arch::tinycnn) {
    s.in_channels = 1;
    s.in_h = s.in_w = 8;
  } else {
    s.in_channels = 3;
    s.in_h = s.in_w = 32;
  }
  s.keep = full_widths(a);
  return s;
}

LayerGraph build(const NetSpec& spec_in, std::mt19937_64& rng) {
  NetSpec spec = spec_in;
  if (spec.keep.empty()) spec.keep = full_widths(spec.arch);
  const auto plan = architecture_plan(spec.arch);
  std::vector<ConvPlan> convs;
  collect_convs(plan, convs);
  validate_keep(spec, convs);
  if (spec.classes < 2) throw ValueError("network needs at least 2 classes");

  LayerGraph g;
  g.spec = spec;
  int ci = 0;  // conv index
  int channels = spec.in_channels, h = spec.in_h, w = spec.in_w;
  for (const auto& u : plan) {
    if (const auto* s = std::get_if<PlanStem>(&u)) {
      const int keep = spec.keep[ci];
      g.convs.push_back(make_layer(s->conv, channels, keep, rng));
      g.units.push_back(StemUnit{ci});
      ++ci;
      channels = keep;
      h = g.convs.back().spec.out_dim(h, s->conv.kernel);
      w = g.convs.back().spec.out_dim(w, s->conv.kernel);
    } else if (const auto* b = std::get_if<PlanBlock>(&u)) {
      const int in_ch = channels;
      const int keep_a = spec.keep[ci];
      ConvLayer la = make_layer(b->a, in_ch, keep_a, rng);
      const int keep_b = spec.keep[ci + 1];
      ConvLayer lb = make_layer(b->b, keep_a, keep_b, rng);
      BasicBlockUnit unit;
      unit.conv_a = ci;
      unit.conv_b = ci + 1;
      unit.stride = b->stride;
      unit.pad_shortcut = (b->stride != 1) || (keep_b != in_ch);
      g.convs.push_back(std::move(la));
      g.convs.push_back(std::move(lb));
      g.units.push_back(unit);
      ci += 2;
      h = (h + b->stride - 1) / b->stride;
      w = (w + b->stride - 1) / b->stride;
      channels = keep_b;
    } else if (const auto* p = std::get_if<PlanPool>(&u)) {
      const int k = p->kernel == 0 ? h : p->kernel;
      g.units.push_back(PoolUnit{k, p->stride});
      h = (h - k) / p->stride + 1;
      w = (w - k) / p->stride + 1;
    } else {
      g.classifier_features = channels * h * w;
      const int rows = g.classifier_features + 1;
      g.classifier.bank = init_bank(rows, spec.classes, g.classifier_features, rng);
      g.classifier.velocity = Mat::Zero(rows, spec.classes);
      g.classifier.grad = Mat::Zero(rows, spec.classes);
      g.units.push_back(ClassifierUnit{});
    }
  }
  return g;
}

Complexity count_complexity(const NetSpec& spec_in) {
  NetSpec spec = spec_in;
  if (spec.keep.empty()) spec.keep = full_widths(spec.arch);
  const auto plan = architecture_plan(spec.arch);
  std::vector<ConvPlan> convs;
  collect_convs(plan, convs);
  validate_keep(spec, convs);

  Complexity total;
  size_t ci = 0;
  std::uint64_t channels = spec.in_channels;
  std::uint64_t h = spec.in_h, w = spec.in_w;
  auto conv_cost = [&](const ConvPlan& p, std::uint64_t in_ch, std::uint64_t keep) {
    h = (h + 2 * p.padding - p.kernel) / p.stride + 1;
    w = (w + 2 * p.padding - p.kernel) / p.stride + 1;
    const std::uint64_t patch = in_ch * p.kernel * p.kernel;
    total.flops += keep * patch * h * w;
    total.params += (patch + 1) * keep + 2 * keep;  // weights + bias + bn affine
  };
  for (const auto& u : plan) {
    if (const auto* s = std::get_if<PlanStem>(&u)) {
      const std::uint64_t keep = spec.keep[ci++];
      conv_cost(s->conv, channels, keep);
      channels = keep;
    } else if (const auto* b = std::get_if<PlanBlock>(&u)) {
      const std::uint64_t keep_a = spec.keep[ci++];
      const std::uint64_t keep_b = spec.keep[ci++];
      conv_cost(b->a, channels, keep_a);
      conv_cost(b->b, keep_a, keep_b);
      channels = keep_b;
    } else if (const auto* p = std::get_if<PlanPool>(&u)) {
      const std::uint64_t k = p->kernel == 0 ? h : p->kernel;
      h = (h - k) / p->stride + 1;
      w = (w - k) / p->stride + 1;
    } else {
      const std::uint64_t features = channels * h * w;
      total.flops += features * spec.classes;
      total.params += (features + 1) * spec.classes;
    }
  }
  return total;
}

void LayerGraph::zero_grads() {
  for (auto& layer : convs) {
    layer.bank_grad.setZero();
    layer.bn_gamma_grad.setZero();
    layer.bn_beta_grad.setZero();
  }
  classifier.grad.setZero();
}

void refresh_fused_banks(LayerGraph& g) {
  for (auto& layer : g.convs) {
    if (g.fusion_on && layer.fusion.proxy_rows.size() > 0)
      layer.fusion.fused = fuse_with_rows(layer.bank, layer.fusion.proxy_rows);
    else
      layer.fusion.fused = gather_columns(layer.bank, layer.fusion.selected);
  }
}

Tensor4 forward(LayerGraph& g, const Tensor4& input, bool training, Tape* tape) {
  if (input.c != g.spec.in_channels || input.h != g.spec.in_h || input.w != g.spec.in_w)
    throw ShapeError("forward: input " + input.shape_str() + " does not match spec " +
                     std::to_string(g.spec.in_channels) + "x" +
                     std::to_string(g.spec.in_h) + "x" + std::to_string(g.spec.in_w));
  if (tape) tape->units.clear();
  Tensor4 x = input;
  for (const auto& u : g.units) {
    if (const auto* s = std::get_if<StemUnit>(&u)) {
      StemCache cache;
      x = conv_unit_forward(g.convs[s->conv], x, training, tape ? &cache.conv : nullptr);
      if (tape) tape->units.push_back(std::move(cache));
    } else if (const auto* b = std::get_if<BasicBlockUnit>(&u)) {
      BasicBlockCache cache;
      Tensor4 block_in = x;
      Tensor4 ya = conv_unit_forward(g.convs[b->conv_a], block_in, training,
                                     tape ? &cache.a : nullptr);
      Tensor4 yb =
          conv_unit_forward(g.convs[b->conv_b], ya, training, tape ? &cache.b : nullptr);
      Tensor4 sc = b->pad_shortcut ? shortcut_forward(block_in, yb.c, b->stride)
                                   : std::move(block_in);
      yb.data += sc.data;
      Tensor4 out = relu_forward(yb);
      if (tape) {
        cache.pre_relu = std::move(yb);
        tape->units.push_back(std::move(cache));
      }
      x = std::move(out);
    } else if (const auto* p = std::get_if<PoolUnit>(&u)) {
      if (tape) tape->units.push_back(PoolCache{x});
      x = avgpool_forward(x, p->kernel, p->stride);
    } else {
      Tensor4 flat = flatten(x);
      if (tape) tape->units.push_back(ClassifierCache{flat, x.c, x.h, x.w});
      x = linear_forward(flat, g.classifier.bank);
    }
  }
  return x;
}

void backward(LayerGraph& g, const Tape& tape, const Tensor4& grad_logits) {
  if (tape.units.size() != g.units.size())
    throw ShapeError("backward: tape does not match graph (was forward run with a tape?)");
  Tensor4 grad = grad_logits;
  for (size_t ui = g.units.size(); ui-- > 0;) {
    const auto& u = g.units[ui];
    const auto& cache = tape.units[ui];
    if (const auto* s = std::get_if<StemUnit>(&u)) {
      grad = conv_unit_backward(g, g.convs[s->conv], std::get<StemCache>(cache).conv,
                                std::move(grad));
    } else if (const auto* b = std::get_if<BasicBlockUnit>(&u)) {
      const auto& bc = std::get<BasicBlockCache>(cache);
      Tensor4 gsum = relu_backward(bc.pre_relu, grad);
      Tensor4 gb = conv_unit_backward(g, g.convs[b->conv_b], bc.b, gsum);
      Tensor4 ga = conv_unit_backward(g, g.convs[b->conv_a], bc.a, std::move(gb));
      if (b->pad_shortcut) {
        Tensor4 gsc = shortcut_backward(gsum, bc.a.input, b->stride);
        ga.data += gsc.data;
      } else {
        ga.data += gsum.data;
      }
      grad = std::move(ga);
    } else if (const auto* p = std::get_if<PoolUnit>(&u)) {
      grad = avgpool_backward(std::get<PoolCache>(cache).input, p->kernel, p->stride,
                              grad);
    } else {
      const auto& cc = std::get<ClassifierCache>(cache);
      LinearGrads lg = linear_backward(cc.flat, g.classifier.bank, grad);
      g.classifier.grad += lg.bank;
      grad = unflatten(lg.input, cc.c, cc.h, cc.w);
    }
  }
}

}  // namespace dcff
