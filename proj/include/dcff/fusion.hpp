#ifndef DCFF_FUSION_HPP
#define DCFF_FUSION_HPP

#include "dcff/types.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dcff {

// A filter bank is a (d+1) x c_out matrix: column k is filter k flattened
// with its bias appended as the last entry. Distances, proxies and fusion
// all operate on these bias-augmented columns.

enum class DistanceMetric { euclidean, manhattan, correlation, cosine };
enum class ImportanceMode { kl, l1, inverse, random };

DistanceMetric distance_metric_from_name(const std::string& name);
std::string distance_metric_name(DistanceMetric m);
ImportanceMode importance_mode_from_name(const std::string& name);
std::string importance_mode_name(ImportanceMode m);

/// Symmetric non-negative c_out x c_out distance matrix with zero diagonal.
/// Cosine rejects zero-norm columns, correlation rejects constant columns.
Mat pairwise_distance(const Mat& bank, DistanceMetric metric);

/// Row-stochastic similarity proxies: row k is softmax over -distance(k,.)*t.
/// The log-probabilities are kept alongside so divergences can be taken
/// without re-logging near-zero probabilities.
struct ProxyMatrix {
  Mat p;     // probabilities, rows sum to 1
  Mat logp;  // matching log-softmax values
  int size() const { return static_cast<int>(p.rows()); }
};
ProxyMatrix proxy_distribution(const Mat& distance, Scalar temperature);

/// Training-adaptive temperature: t(0) = t_start, t(epochs) = t_end,
/// increasing in between via scaled tanh factors.
struct ScheduleParams {
  Scalar t_start = 1.0;
  Scalar t_end = 1e4;
  int epochs = 1;
};
Scalar temperature_at(Scalar epoch, const ScheduleParams& params);

/// Mean KL divergence from each filter's proxy row to every other row.
/// Log-probabilities are floored at log(1e-300); zero-probability terms of
/// the leading distribution contribute nothing.
Vec kl_importance(const ProxyMatrix& proxy);

/// Column-wise l1 norms, the magnitude-based importance ablation.
Vec l1_scores(const Mat& bank);

/// Indices of the `keep` largest scores, in descending score order; ties
/// break toward the smaller index.
std::vector<int> select_top(const Vec& scores, int keep);

/// Ranking scores for the configured importance mode. `kl` and `inverse`
/// derive from the proxy divergences, `l1` from column norms, `random`
/// draws fresh scores from the supplied generator on every call.
Vec selection_scores(ImportanceMode mode, const Mat& bank, const ProxyMatrix& proxy,
                     std::mt19937_64* rng);

/// Number of replaced indices between two equal-size selections
/// (half the symmetric difference).
int selection_churn(const std::vector<int>& prev, const std::vector<int>& next);

/// Fused bank: column k is the proxy-weighted average of all original
/// columns, weights taken from row selected[k] of the proxy matrix.
Mat fuse(const Mat& bank, const ProxyMatrix& proxy, const std::vector<int>& selected);
Mat fuse_with_rows(const Mat& bank, const Mat& proxy_rows);

/// Pull a fused-bank gradient back onto the original bank. The proxy rows
/// are constants here: no gradient reaches the distance softmax.
Mat fuse_backward(const Mat& grad_fused, const ProxyMatrix& proxy,
                  const std::vector<int>& selected, int source_count);
Mat fuse_backward_rows(const Mat& grad_fused, const Mat& proxy_rows);

/// Column gather/scatter for the fusion-free ablation: the forward uses the
/// selected original columns verbatim and gradients reach only those columns.
Mat gather_columns(const Mat& bank, const std::vector<int>& selected);
Mat scatter_columns(const Mat& grad_selected, const std::vector<int>& selected,
                    int source_count);

/// Per-layer fusion snapshot refreshed from the current bank: the ranking,
/// the retained proxy rows and the fused bank they produce.
struct FusionState {
  Scalar temperature = 1.0;
  Vec importance;             // ranking scores for the active mode
  std::vector<int> selected;  // keep indices, descending importance
  Mat proxy_rows;             // |selected| x c_out proxy rows (empty if fusion off)
  Mat fused;                  // (d+1) x |selected|
  int churn = 0;              // selections replaced since the previous refresh
};

struct FusionOptions {
  DistanceMetric metric = DistanceMetric::euclidean;
  ImportanceMode mode = ImportanceMode::kl;
  bool fusion_on = true;
};

FusionState refresh_fusion(const Mat& bank, int keep, Scalar temperature,
                           const FusionOptions& opts, std::mt19937_64* rng,
                           const std::vector<int>* previous_selected);

}  // namespace dcff

#endif  // DCFF_FUSION_HPP
