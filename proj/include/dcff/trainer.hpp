#ifndef DCFF_TRAINER_HPP
#define DCFF_TRAINER_HPP

#include "dcff/data.hpp"
#include "dcff/networks.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dcff {

enum class LrKind { step, cosine };

struct LrSchedule {
  LrKind kind = LrKind::step;
  Scalar base = 0.1;
  std::vector<int> milestones;  // step mode; strictly increasing, < epochs
  Scalar factor = 0.1;
  int epochs = 1;  // cosine horizon, mirrors TrainConfig::epochs
};
Scalar lr_at(const LrSchedule& schedule, int epoch);

enum class RefreshMode { per_epoch, per_batch };

struct TrainConfig {
  NetSpec net;
  int epochs = 10;
  int batch_size = 32;
  Scalar momentum = 0.9;
  Scalar weight_decay = 5e-4;
  LrSchedule lr;
  ScheduleParams schedule;  // t_start / t_end; horizon taken from epochs
  bool fusion_on = true;                // false: no-fusion ablation
  std::optional<Scalar> fixed_t;        // set: constant-temperature ablation
  ImportanceMode importance = ImportanceMode::kl;
  DistanceMetric metric = DistanceMetric::euclidean;
  RefreshMode refresh = RefreshMode::per_epoch;
  bool augment_train = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MetricRow {
  int epoch = 0;
  Scalar temperature = 0, lr = 0, train_loss = 0, test_acc = 0;
  std::vector<int> churn;  // one entry per conv layer
};

struct MetricLog {
  int layer_count = 0;
  std::vector<MetricRow> rows;
  std::vector<Scalar> step_losses;  // per-batch, in order
  std::string to_csv() const;       // header + one row per epoch
};

/// Importance scores and selection recorded at each epoch's first refresh.
struct TraceEntry {
  Vec importance;
  std::vector<int> selected;
};

struct Checkpoint {
  TrainConfig config;
  DataSpec data;
  int epoch = 0;  // completed epochs
  LayerGraph graph;
  std::string rng_state;  // serialized mt19937_64
  std::vector<std::vector<TraceEntry>> trace;  // [epoch][conv layer]
};

struct TrainResult {
  Checkpoint checkpoint;
  MetricLog log;
};

/// Run the full fusion training loop from scratch. Per epoch: update the
/// temperature, refresh each layer's proxies/importance/selection, then for
/// every batch rebuild the fused banks from the live weights, forward,
/// backpropagate through the fusion rule and take an SGD step on the
/// original banks, batch norms and classifier.
TrainResult train(const TrainConfig& config, const Dataset& train_set,
                  const Dataset& test_set);

/// Continue a loaded checkpoint to config.epochs. With an untouched
/// checkpoint this reproduces exactly what a single longer run would have
/// logged for the remaining epochs.
TrainResult resume(Checkpoint checkpoint, const Dataset& train_set,
                   const Dataset& test_set);

void sgd_step(Mat& param, const Mat& grad, Mat& velocity, Scalar lr, Scalar momentum,
              Scalar weight_decay);
void sgd_step(Vec& param, const Vec& grad, Vec& velocity, Scalar lr, Scalar momentum,
              Scalar weight_decay);

struct EvalMetrics {
  double top1 = 0;
  double top5 = 0;  // meaningful when classes >= 5
  int samples = 0;
};
EvalMetrics evaluate_graph(LayerGraph& graph, const Dataset& data, int batch_size);

/// Standalone inference model: fused banks, batch-norm inference statistics
/// and the classifier. Original full-width banks are gone.
struct CompactModel {
  NetSpec net;
  DataSpec data;
  std::vector<Mat> fused_banks;
  std::vector<BatchNorm> bns;
  Mat classifier;
};

/// Re-derive the fused banks from the final weights at t = t_end and pack
/// them with the batch-norm statistics and classifier.
CompactModel export_compact(const Checkpoint& checkpoint);

LayerGraph to_graph(const CompactModel& model);
Tensor4 compact_forward(const CompactModel& model, const Tensor4& input);
EvalMetrics evaluate_compact(const CompactModel& model, const Dataset& data,
                             int batch_size);
std::uint64_t compact_param_count(const CompactModel& model);

}  // namespace dcff

#endif  // DCFF_TRAINER_HPP
