#include "dcff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dcff {
namespace {

constexpr Scalar kPi = 3.141592653589793238462643383279502884;

std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  if (!state.empty()) {
    std::istringstream in(state);
    in >> rng;
    if (!in) throw FormatError("checkpoint: unreadable rng state");
  }
  return rng;
}

std::string rng_to_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

// One pass over every conv layer: distances, proxies, importance, selection.
// Returns per-layer churn. `count_churn` is false only for the very first
// refresh of a fresh run, which has no previous epoch to compare against.
std::vector<int> refresh_states(LayerGraph& g, Scalar t, const TrainConfig& cfg,
                                std::mt19937_64& rng, bool count_churn) {
  FusionOptions opts{cfg.metric, cfg.importance, cfg.fusion_on};
  std::vector<int> churn(g.convs.size(), 0);
  for (size_t i = 0; i < g.convs.size(); ++i) {
    auto& layer = g.convs[i];
    const std::vector<int> prev = layer.fusion.selected;
    layer.fusion = refresh_fusion(layer.bank, layer.keep_width, t, opts, &rng,
                                  count_churn ? &prev : nullptr);
    churn[i] = layer.fusion.churn;
  }
  return churn;
}

void record_trace(Checkpoint& ck) {
  std::vector<TraceEntry> entries;
  entries.reserve(ck.graph.convs.size());
  for (const auto& layer : ck.graph.convs)
    entries.push_back({layer.fusion.importance, layer.fusion.selected});
  ck.trace.push_back(std::move(entries));
}

void step_all(LayerGraph& g, Scalar lr, Scalar momentum, Scalar weight_decay) {
  for (auto& layer : g.convs) {
    sgd_step(layer.bank, layer.bank_grad, layer.bank_velocity, lr, momentum,
             weight_decay);
    sgd_step(layer.bn.gamma, layer.bn_gamma_grad, layer.bn_gamma_velocity, lr, momentum,
             weight_decay);
    sgd_step(layer.bn.beta, layer.bn_beta_grad, layer.bn_beta_velocity, lr, momentum,
             weight_decay);
  }
  sgd_step(g.classifier.bank, g.classifier.grad, g.classifier.velocity, lr, momentum,
           weight_decay);
}

TrainResult run_epochs(Checkpoint ck, const Dataset& train_set,
                       const Dataset& test_set) {
  const TrainConfig& cfg = ck.config;
  cfg.validate();
  if (train_set.size() == 0) throw ValueError("train: empty training set");
  std::mt19937_64 rng = rng_from_state(ck.rng_state);

  MetricLog log;
  log.layer_count = static_cast<int>(ck.graph.convs.size());
  // The annealing horizon is the configured one; a run stopped short of it
  // must see the same temperatures a full run would.
  const ScheduleParams sched{cfg.schedule.t_start, cfg.schedule.t_end,
                             std::max(cfg.schedule.epochs, std::max(cfg.epochs, 1))};

  for (int e = ck.epoch; e < cfg.epochs; ++e) {
    const Scalar t = cfg.fixed_t ? *cfg.fixed_t : temperature_at(e, sched);
    const Scalar lr = lr_at(cfg.lr, e);
    std::vector<int> churn(ck.graph.convs.size(), 0);
    bool traced = false;
    const bool first_ever = (e == 0);
    if (cfg.refresh == RefreshMode::per_epoch) {
      churn = refresh_states(ck.graph, t, cfg, rng, !first_ever);
      record_trace(ck);
      traced = true;
    }

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    Scalar loss_sum = 0;
    int batch_index = 0;
    for (int start = 0; start < train_set.size(); start += cfg.batch_size) {
      const int count = std::min<int>(cfg.batch_size, train_set.size() - start);
      std::vector<int> indices(order.begin() + start, order.begin() + start + count);
      Tensor4 images;
      std::vector<int> labels;
      gather_batch(train_set, indices, images, labels);
      if (cfg.augment_train) images = augment(images, rng);

      if (cfg.refresh == RefreshMode::per_batch) {
        auto c = refresh_states(ck.graph, t, cfg, rng,
                                !(first_ever && batch_index == 0));
        for (size_t i = 0; i < c.size(); ++i) churn[i] += c[i];
        if (!traced) {
          record_trace(ck);
          traced = true;
        }
      }
      refresh_fused_banks(ck.graph);  // fused filters follow the live weights

      Tape tape;
      Tensor4 logits = forward(ck.graph, images, true, &tape);
      LossResult loss = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss.loss)) throw DivergenceError(e, batch_index);
      loss_sum += loss.loss * count;
      log.step_losses.push_back(loss.loss);

      ck.graph.zero_grads();
      backward(ck.graph, tape, loss.grad_logits);
      step_all(ck.graph, lr, cfg.momentum, cfg.weight_decay);
      ++batch_index;
    }

    refresh_fused_banks(ck.graph);
    const EvalMetrics eval = evaluate_graph(ck.graph, test_set, cfg.batch_size);

    MetricRow row;
    row.epoch = e;
    row.temperature = t;
    row.lr = lr;
    row.train_loss = loss_sum / train_set.size();
    row.test_acc = eval.top1;
    row.churn = churn;
    log.rows.push_back(std::move(row));
    ck.epoch = e + 1;
    ck.rng_state = rng_to_state(rng);
  }
  ck.rng_state = rng_to_state(rng);
  return {std::move(ck), std::move(log)};
}

}  // namespace

Scalar lr_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw ValueError("lr_at: negative epoch");
  if (schedule.kind == LrKind::step) {
    int passed = 0;
    for (int m : schedule.milestones)
      if (epoch >= m) ++passed;
    return schedule.base * std::pow(schedule.factor, passed);
  }
  if (schedule.epochs < 1) throw ValueError("lr_at: cosine schedule needs epochs >= 1");
  return schedule.base * (1.0 + std::cos(kPi * epoch / schedule.epochs)) / 2.0;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValueError("config: epochs must be >= 0");
  if (batch_size < 1) throw ValueError("config: batch size must be >= 1");
  if (!(schedule.t_start > 0) || !(schedule.t_end > schedule.t_start))
    throw ValueError("config: temperature schedule requires t_end > t_start > 0");
  if (fixed_t && !(*fixed_t > 0))
    throw ValueError("config: fixed_t must be positive");
  for (size_t i = 0; i < lr.milestones.size(); ++i) {
    if (lr.milestones[i] >= epochs)
      throw ValueError("config: lr milestone " + std::to_string(lr.milestones[i]) +
                       " not below epochs " + std::to_string(epochs));
    if (i > 0 && lr.milestones[i] <= lr.milestones[i - 1])
      throw ValueError("config: lr milestones must be strictly increasing");
  }
}

std::string MetricLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,temperature,lr,train_loss,test_acc";
  for (int i = 0; i < layer_count; ++i) out << ",churn_layer_" << i;
  out << "\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.temperature << ',' << r.lr << ',' << r.train_loss << ','
        << r.test_acc;
    for (int c : r.churn) out << ',' << c;
    out << "\n";
  }
  return out.str();
}

TrainResult train(const TrainConfig& config, const Dataset& train_set,
                  const Dataset& test_set) {
  config.validate();
  Checkpoint ck;
  ck.config = config;
  std::mt19937_64 rng(config.seed);
  ck.graph = build(config.net, rng);
  ck.graph.fusion_on = config.fusion_on;
  ck.rng_state = rng_to_state(rng);
  ck.epoch = 0;
  return run_epochs(std::move(ck), train_set, test_set);
}

TrainResult resume(Checkpoint checkpoint, const Dataset& train_set,
                   const Dataset& test_set) {
  checkpoint.graph.fusion_on = checkpoint.config.fusion_on;
  return run_epochs(std::move(checkpoint), train_set, test_set);
}

void sgd_step(Mat& param, const Mat& grad, Mat& velocity, Scalar lr, Scalar momentum,
              Scalar weight_decay) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      param.rows() != velocity.rows() || param.cols() != velocity.cols())
    throw ShapeError("sgd_step: parameter/gradient/velocity shapes differ");
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

void sgd_step(Vec& param, const Vec& grad, Vec& velocity, Scalar lr, Scalar momentum,
              Scalar weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw ShapeError("sgd_step: parameter/gradient/velocity sizes differ");
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

EvalMetrics evaluate_graph(LayerGraph& graph, const Dataset& data, int batch_size) {
  EvalMetrics m;
  m.samples = data.size();
  if (data.size() == 0) return m;
  int top1 = 0, top5 = 0;
  for (int start = 0; start < data.size(); start += batch_size) {
    const int count = std::min<int>(batch_size, data.size() - start);
    std::vector<int> indices(count);
    std::iota(indices.begin(), indices.end(), start);
    Tensor4 images;
    std::vector<int> labels;
    gather_batch(data, indices, images, labels);
    Tensor4 logits = forward(graph, images, false, nullptr);
    for (int i = 0; i < count; ++i) {
      Eigen::ArrayXd row = logits.data.segment(
          static_cast<Eigen::Index>(i) * logits.c, logits.c);
      Eigen::Index best;
      row.maxCoeff(&best);
      if (static_cast<int>(best) == labels[i]) ++top1;
      if (logits.c >= 5) {
        const Scalar target = row[labels[i]];
        int above = 0;
        for (Eigen::Index k = 0; k < row.size(); ++k)
          if (row[k] > target) ++above;
        if (above < 5) ++top5;
      }
    }
  }
  m.top1 = static_cast<double>(top1) / data.size();
  m.top5 = static_cast<double>(top5) / data.size();
  return m;
}

CompactModel export_compact(const Checkpoint& checkpoint) {
  const TrainConfig& cfg = checkpoint.config;
  CompactModel m;
  m.net = cfg.net;
  m.data = checkpoint.data;
  std::mt19937_64 rng = rng_from_state(checkpoint.rng_state);
  const FusionOptions opts{cfg.metric, cfg.importance, cfg.fusion_on};
  for (const auto& layer : checkpoint.graph.convs) {
    FusionState st = refresh_fusion(layer.bank, layer.keep_width,
                                    cfg.schedule.t_end, opts, &rng, nullptr);
    m.fused_banks.push_back(std::move(st.fused));
    m.bns.push_back(layer.bn);
  }
  m.classifier = checkpoint.graph.classifier.bank;
  return m;
}

LayerGraph to_graph(const CompactModel& model) {
  std::mt19937_64 rng(0);
  LayerGraph g = build(model.net, rng);
  if (g.convs.size() != model.fused_banks.size() || g.convs.size() != model.bns.size())
    throw FormatError("compact model does not match its architecture");
  for (size_t i = 0; i < g.convs.size(); ++i) {
    if (model.fused_banks[i].rows() != g.convs[i].spec.patch_len() + 1 ||
        model.fused_banks[i].cols() != g.convs[i].keep_width)
      throw FormatError("compact model: fused bank " + std::to_string(i) +
                        " has unexpected shape");
    g.convs[i].fusion.fused = model.fused_banks[i];
    g.convs[i].bn = model.bns[i];
    g.convs[i].bank.setZero();  // originals are not part of a compact model
  }
  if (model.classifier.rows() != g.classifier.bank.rows() ||
      model.classifier.cols() != g.classifier.bank.cols())
    throw FormatError("compact model: classifier has unexpected shape");
  g.classifier.bank = model.classifier;
  return g;
}

Tensor4 compact_forward(const CompactModel& model, const Tensor4& input) {
  LayerGraph g = to_graph(model);
  return forward(g, input, false, nullptr);
}

EvalMetrics evaluate_compact(const CompactModel& model, const Dataset& data,
                             int batch_size) {
  LayerGraph g = to_graph(model);
  return evaluate_graph(g, data, batch_size);
}

std::uint64_t compact_param_count(const CompactModel& model) {
  std::uint64_t total = 0;
  for (const auto& bank : model.fused_banks)
    total += static_cast<std::uint64_t>(bank.size());
  for (const auto& bn : model.bns) total += 2ull * bn.channels();
  total += static_cast<std::uint64_t>(model.classifier.size());
  return total;
}

}  // namespace dcff
