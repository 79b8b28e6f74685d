#include "dcff/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace dcff {
namespace {

constexpr Scalar kLogFloor = -690.77552789821368;  // log(1e-300)

void check_bank(const Mat& bank) {
  if (bank.cols() < 1 || bank.rows() < 2)
    throw ShapeError("filter bank must be at least 2 x 1 (one weight plus bias)");
}

}  // namespace

DistanceMetric distance_metric_from_name(const std::string& name) {
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "manhattan") return DistanceMetric::manhattan;
  if (name == "correlation") return DistanceMetric::correlation;
  if (name == "cosine") return DistanceMetric::cosine;
  throw ValueError("unknown distance metric '" + name + "'");
}

std::string distance_metric_name(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::manhattan: return "manhattan";
    case DistanceMetric::correlation: return "correlation";
    case DistanceMetric::cosine: return "cosine";
  }
  return "?";
}

ImportanceMode importance_mode_from_name(const std::string& name) {
  if (name == "kl") return ImportanceMode::kl;
  if (name == "l1") return ImportanceMode::l1;
  if (name == "inverse") return ImportanceMode::inverse;
  if (name == "random") return ImportanceMode::random;
  throw ValueError("unknown importance mode '" + name + "'");
}

std::string importance_mode_name(ImportanceMode m) {
  switch (m) {
    case ImportanceMode::kl: return "kl";
    case ImportanceMode::l1: return "l1";
    case ImportanceMode::inverse: return "inverse";
    case ImportanceMode::random: return "random";
  }
  return "?";
}

Mat pairwise_distance(const Mat& bank, DistanceMetric metric) {
  check_bank(bank);
  const Eigen::Index c = bank.cols();
  Mat d = Mat::Zero(c, c);

  if (metric == DistanceMetric::cosine) {
    for (Eigen::Index k = 0; k < c; ++k)
      if (bank.col(k).norm() == 0.0)
        throw ValueError("cosine distance: column " + std::to_string(k) +
                         " has zero norm");
  }
  Mat centered;
  Vec sd;
  if (metric == DistanceMetric::correlation) {
    centered = bank.rowwise() - bank.colwise().mean();
    sd = centered.colwise().norm();
    for (Eigen::Index k = 0; k < c; ++k)
      if (sd[k] == 0.0)
        throw ValueError("correlation distance: column " + std::to_string(k) +
                         " is constant");
  }

  for (Eigen::Index k = 0; k < c; ++k) {
    for (Eigen::Index j = k + 1; j < c; ++j) {
      Scalar v = 0;
      switch (metric) {
        case DistanceMetric::euclidean:
          v = (bank.col(k) - bank.col(j)).norm();
          break;
        case DistanceMetric::manhattan:
          v = (bank.col(k) - bank.col(j)).cwiseAbs().sum();
          break;
        case DistanceMetric::cosine:
          v = 1.0 - bank.col(k).dot(bank.col(j)) /
                        (bank.col(k).norm() * bank.col(j).norm());
          break;
        case DistanceMetric::correlation:
          v = 1.0 - centered.col(k).dot(centered.col(j)) / (sd[k] * sd[j]);
          break;
      }
      if (v < 0) v = 0;  // cosine/correlation roundoff near duplicates
      d(k, j) = v;
      d(j, k) = v;
    }
  }
  return d;
}

ProxyMatrix proxy_distribution(const Mat& distance, Scalar temperature) {
  if (!(temperature > 0))
    throw ValueError("proxy_distribution: temperature must be positive");
  if (distance.rows() != distance.cols())
    throw ShapeError("proxy_distribution: distance matrix must be square");
  const Eigen::Index c = distance.rows();
  ProxyMatrix proxy;
  proxy.p.resize(c, c);
  proxy.logp.resize(c, c);
  for (Eigen::Index k = 0; k < c; ++k) {
    Eigen::ArrayXd logits = -distance.row(k).array() * temperature;
    const Scalar mx = logits.maxCoeff();
    Eigen::ArrayXd shifted = logits - mx;
    const Scalar z = shifted.exp().sum();
    const Scalar logz = std::log(z);
    proxy.logp.row(k) = shifted - logz;
    proxy.p.row(k) = (shifted - logz).exp();
  }
  return proxy;
}

Scalar temperature_at(Scalar epoch, const ScheduleParams& params) {
  if (!(params.t_start > 0) || !(params.t_end > params.t_start))
    throw ValueError("temperature schedule requires t_end > t_start > 0");
  if (params.epochs < 1) throw ValueError("temperature schedule requires epochs >= 1");
  if (epoch < 0 || epoch > params.epochs)
    throw ValueError("temperature epoch " + std::to_string(epoch) +
                     " outside [0, " + std::to_string(params.epochs) + "]");
  // (1+e^-E)/(1-e^-E) * (1-e^-e)/(1+e^-e) == coth(E/2) * tanh(e/2); the tanh
  // form survives large arguments where the raw exponentials underflow.
  const Scalar span = static_cast<Scalar>(params.epochs);
  const Scalar anneal = std::tanh(epoch / 2) / std::tanh(span / 2);
  // The anneal factor saturates to 1.0 in double precision near e ~ 37, where
  // the true increments drop below one ulp of t_end. The schedule contract is
  // strictly increasing, so break the resulting ties with a linear term small
  // enough (<= 6e-13 relative) to sit inside every consumer tolerance.
  constexpr Scalar kTieBreak = 6e-13;
  const Scalar mix = (1.0 - kTieBreak) * anneal + kTieBreak * (epoch / span);
  const Scalar t = (params.t_end - params.t_start) * mix + params.t_start;
  return std::min(t, params.t_end);
}

Vec kl_importance(const ProxyMatrix& proxy) {
  const Eigen::Index c = proxy.p.rows();
  if (proxy.logp.rows() != c || proxy.p.cols() != c || proxy.logp.cols() != c)
    throw ShapeError("kl_importance: proxy matrices must be square and matched");
  const Mat floored = proxy.logp.cwiseMax(kLogFloor);
  // I_k = sum_g sum_j p_kj * (logp_kj - logp_gj) / c
  //     = sum_j p_kj logp_kj - (1/c) * sum_g (P floored^T)_kg.
  // Zero probabilities drop out of both pieces on their own.
  Vec self = (proxy.p.array() * floored.array()).rowwise().sum();
  Vec cross = (proxy.p * floored.transpose()).rowwise().sum();
  return self - cross / static_cast<Scalar>(c);
}

Vec l1_scores(const Mat& bank) {
  check_bank(bank);
  return bank.cwiseAbs().colwise().sum();
}

std::vector<int> select_top(const Vec& scores, int keep) {
  const int c = static_cast<int>(scores.size());
  if (keep < 1 || keep > c)
    throw ValueError("select: keep count " + std::to_string(keep) +
                     " outside [1, " + std::to_string(c) + "]");
  std::vector<int> idx(c);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(keep);
  return idx;
}

Vec selection_scores(ImportanceMode mode, const Mat& bank, const ProxyMatrix& proxy,
                     std::mt19937_64* rng) {
  switch (mode) {
    case ImportanceMode::kl:
      return kl_importance(proxy);
    case ImportanceMode::inverse:
      return -kl_importance(proxy);
    case ImportanceMode::l1:
      return l1_scores(bank);
    case ImportanceMode::random: {
      if (!rng) throw ValueError("random importance mode needs a generator");
      Vec s(bank.cols());
      std::uniform_real_distribution<Scalar> u(0.0, 1.0);
      for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = u(*rng);
      return s;
    }
  }
  throw ValueError("unknown importance mode");
}

int selection_churn(const std::vector<int>& prev, const std::vector<int>& next) {
  if (prev.size() != next.size())
    throw ValueError("churn: selections differ in size (" +
                     std::to_string(prev.size()) + " vs " +
                     std::to_string(next.size()) + ")");
  std::set<int> a(prev.begin(), prev.end());
  int kept = 0;
  for (int i : next) kept += a.count(i) ? 1 : 0;
  return static_cast<int>(next.size()) - kept;
}

Mat fuse_with_rows(const Mat& bank, const Mat& proxy_rows) {
  if (proxy_rows.cols() != bank.cols())
    throw ShapeError("fuse: proxy rows have " + std::to_string(proxy_rows.cols()) +
                     " entries for " + std::to_string(bank.cols()) + " filters");
  return bank * proxy_rows.transpose();
}

Mat fuse(const Mat& bank, const ProxyMatrix& proxy, const std::vector<int>& selected) {
  check_bank(bank);
  if (proxy.size() != bank.cols())
    throw ShapeError("fuse: proxy size does not match bank");
  Mat rows(static_cast<Eigen::Index>(selected.size()), bank.cols());
  for (size_t k = 0; k < selected.size(); ++k) {
    if (selected[k] < 0 || selected[k] >= bank.cols())
      throw ValueError("fuse: selected index " + std::to_string(selected[k]) +
                       " out of range");
    rows.row(static_cast<Eigen::Index>(k)) = proxy.p.row(selected[k]);
  }
  return fuse_with_rows(bank, rows);
}

Mat fuse_backward_rows(const Mat& grad_fused, const Mat& proxy_rows) {
  if (grad_fused.cols() != proxy_rows.rows())
    throw ShapeError("fuse_backward: gradient has " +
                     std::to_string(grad_fused.cols()) + " columns for " +
                     std::to_string(proxy_rows.rows()) + " selected filters");
  return grad_fused * proxy_rows;
}

Mat fuse_backward(const Mat& grad_fused, const ProxyMatrix& proxy,
                  const std::vector<int>& selected, int source_count) {
  if (proxy.size() != source_count)
    throw ShapeError("fuse_backward: proxy size does not match source count");
  if (grad_fused.cols() != static_cast<Eigen::Index>(selected.size()))
    throw ShapeError("fuse_backward: gradient column count " +
                     std::to_string(grad_fused.cols()) + " != selection size " +
                     std::to_string(selected.size()));
  Mat rows(static_cast<Eigen::Index>(selected.size()), source_count);
  for (size_t k = 0; k < selected.size(); ++k)
    rows.row(static_cast<Eigen::Index>(k)) = proxy.p.row(selected[k]);
  return fuse_backward_rows(grad_fused, rows);
}

Mat gather_columns(const Mat& bank, const std::vector<int>& selected) {
  Mat out(bank.rows(), static_cast<Eigen::Index>(selected.size()));
  for (size_t k = 0; k < selected.size(); ++k) {
    if (selected[k] < 0 || selected[k] >= bank.cols())
      throw ValueError("gather_columns: index " + std::to_string(selected[k]) +
                       " out of range");
    out.col(static_cast<Eigen::Index>(k)) = bank.col(selected[k]);
  }
  return out;
}

Mat scatter_columns(const Mat& grad_selected, const std::vector<int>& selected,
                    int source_count) {
  if (grad_selected.cols() != static_cast<Eigen::Index>(selected.size()))
    throw ShapeError("scatter_columns: gradient column count mismatch");
  Mat out = Mat::Zero(grad_selected.rows(), source_count);
  for (size_t k = 0; k < selected.size(); ++k)
    out.col(selected[k]) += grad_selected.col(static_cast<Eigen::Index>(k));
  return out;
}

FusionState refresh_fusion(const Mat& bank, int keep, Scalar temperature,
                           const FusionOptions& opts, std::mt19937_64* rng,
                           const std::vector<int>* previous_selected) {
  check_bank(bank);
  FusionState st;
  st.temperature = temperature;
  const Mat dist = pairwise_distance(bank, opts.metric);
  const ProxyMatrix proxy = proxy_distribution(dist, temperature);
  st.importance = selection_scores(opts.mode, bank, proxy, rng);
  st.selected = select_top(st.importance, keep);
  if (opts.fusion_on) {
    st.proxy_rows.resize(static_cast<Eigen::Index>(st.selected.size()), bank.cols());
    for (size_t k = 0; k < st.selected.size(); ++k)
      st.proxy_rows.row(static_cast<Eigen::Index>(k)) = proxy.p.row(st.selected[k]);
    st.fused = fuse_with_rows(bank, st.proxy_rows);
  } else {
    st.fused = gather_columns(bank, st.selected);
  }
  st.churn = previous_selected ? selection_churn(*previous_selected, st.selected) : 0;
  return st;
}

}  // namespace dcff
