// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits non-zero if any fail.

#include "dcff/serialize.hpp"

#include "benchmark_config.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

using namespace dcff;
using namespace dcff::testing;

namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

int g_failures = 0;

void run_criterion(int id, const std::string& name, double budget_seconds,
                   const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.require(false, std::string("exception: ") + e.what());
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (elapsed >= budget_seconds)
    out.require(false, "runtime " + std::to_string(elapsed) + "s over budget");
  std::printf("%s  criterion %2d: %s (%.2fs%s%s)\n", out.pass ? "PASS" : "FAIL", id,
              name.c_str(), elapsed, out.detail.empty() ? "" : "; ",
              out.detail.c_str());
  std::fflush(stdout);
  if (!out.pass) ++g_failures;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Mat random_bank(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

double mean_churn(const MetricRow& row) {
  double s = 0;
  for (int c : row.churn) s += c;
  return s / row.churn.size();
}

// ---- criterion bodies ------------------------------------------------------

void complexity_baselines(Outcome& out) {
  struct Row {
    Arch arch;
    double flops, params;
  };
  for (const Row& row : {Row{Arch::vgg16, 314.59e6, 14.73e6},
                         Row{Arch::resnet56, 127.62e6, 0.85e6},
                         Row{Arch::resnet110, 257.09e6, 1.73e6}}) {
    const Complexity c = count_complexity(default_spec(row.arch));
    const double flops_err = double(c.flops) / row.flops - 1.0;
    const double params_err = double(c.params) / row.params - 1.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s flops %+.2f%% params %+.2f%%",
                  arch_name(row.arch).c_str(), 100 * flops_err, 100 * params_err);
    out.note(buf);
    out.require(std::abs(flops_err) < 0.02, arch_name(row.arch) + " flops off");
    out.require(std::abs(params_err) < 0.01, arch_name(row.arch) + " params off");
  }
}

void schedule_endpoints(Outcome& out) {
  const ScheduleParams p{1.0, 1e4, 300};
  out.require(std::abs(temperature_at(0, p) - 1.0) <= 1e-12 * 1.0, "t(0) != t_start");
  out.require(std::abs(temperature_at(300, p) - 1e4) <= 1e-12 * 1e4, "t(E) != t_end");
  int non_strict = 0;
  Scalar prev = temperature_at(0, p);
  for (int i = 1; i < 1000; ++i) {
    const Scalar t = temperature_at(300.0 * i / 999.0, p);
    if (!(t > prev)) ++non_strict;
    prev = t;
  }
  out.require(non_strict == 0,
              std::to_string(non_strict) + " non-strict steps of 999");
}

void proxy_invariants(Outcome& out) {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> pick_c(2, 32), pick_d(4, 64);
  int separated_checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = pick_c(rng);
    const Mat bank = random_bank(pick_d(rng) + 1, c, rng);
    const Mat dist = pairwise_distance(bank, DistanceMetric::euclidean);
    for (Scalar t : {1.0, 10.0, 1e4}) {
      const ProxyMatrix proxy = proxy_distribution(dist, t);
      for (int k = 0; k < c; ++k) {
        out.require(std::abs(proxy.p.row(k).sum() - 1.0) < 1e-9, "row sum");
        out.require(proxy.p(k, k) >= proxy.p.row(k).maxCoeff() - 1e-15,
                    "diagonal not a row max");
      }
    }
    Scalar min_off = 1e300;
    for (int a = 0; a < c; ++a)
      for (int b = a + 1; b < c; ++b) min_off = std::min(min_off, dist(a, b));
    if (min_off >= 0.01) {
      ++separated_checked;
      const ProxyMatrix hard = proxy_distribution(dist, 1e4);
      std::vector<int> keep(std::max(1, c / 2));
      std::iota(keep.begin(), keep.end(), 0);
      const Mat fused = fuse(bank, hard, keep);
      const Mat gathered = gather_columns(bank, keep);
      out.require((fused - gathered).cwiseAbs().maxCoeff() < 1e-6,
                  "hardened fusion != selection");
    }
  }
  out.note(std::to_string(separated_checked) + "/100 banks separated");
  out.require(separated_checked >= 90, "too few separated banks to test the limit");
}

void kl_oracle(Outcome& out) {
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> pick_c(2, 8), pick_d(4, 64);
  const Scalar floor_v = std::log(1e-300);
  Scalar worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = pick_c(rng);
    const Mat bank = random_bank(pick_d(rng) + 1, c, rng);
    std::uniform_real_distribution<Scalar> pick_t(0.5, 50.0);
    const ProxyMatrix proxy = proxy_distribution(
        pairwise_distance(bank, DistanceMetric::euclidean),
        trial % 3 == 0 ? 1e4 : pick_t(rng));
    const Vec fast = kl_importance(proxy);
    for (int k = 0; k < c; ++k) {
      Scalar total = 0;
      for (int g = 0; g < c; ++g)
        for (int j = 0; j < c; ++j) {
          if (proxy.p(k, j) == 0.0) continue;
          total += proxy.p(k, j) * (std::max(proxy.logp(k, j), floor_v) -
                                    std::max(proxy.logp(g, j), floor_v));
        }
      worst = std::max(worst, std::abs(fast[k] - total / c));
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max |diff| %.2e", worst);
  out.note(buf);
  out.require(worst < 1e-9, "importance disagrees with the naive double loop");
}

void gradient_fidelity(Outcome& out) {
  std::mt19937_64 rng(1003);
  int checked = 0;
  Scalar worst = 0;
  for (int net = 0; net < 20; ++net) {
    std::uniform_int_distribution<int> pick_cin(1, 3), pick_full(3, 6), pick_hw(5, 6);
    const int cin = pick_cin(rng);
    const int full = pick_full(rng);
    std::uniform_int_distribution<int> pick_keep(1, full);
    const int keep_n = pick_keep(rng);
    const int hw = pick_hw(rng);
    const int classes = 3;
    ConvSpec spec{cin, keep_n, 3, 3, 1, 1};

    Mat bank = random_bank(spec.patch_len() + 1, full, rng) * 0.5;
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    Tensor4 x(2, cin, hw, hw);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data[i] = normal(rng);
    BatchNorm bn(keep_n);
    for (int c = 0; c < keep_n; ++c) {
      bn.gamma[c] = 1.0 + 0.1 * normal(rng);
      bn.beta[c] = 0.1 * normal(rng);
    }
    Mat classifier = random_bank(keep_n + 1, classes, rng) * 0.5;
    std::vector<int> labels = {net % classes, (net + 1) % classes};

    // proxies and selection held fixed; gradients flow only through the
    // fusion weights into the original bank
    const ProxyMatrix proxy =
        proxy_distribution(pairwise_distance(bank, DistanceMetric::euclidean), 1.0);
    const Vec importance = kl_importance(proxy);
    const std::vector<int> selected = select_top(importance, keep_n);
    Mat proxy_rows(keep_n, full);
    for (int k = 0; k < keep_n; ++k) proxy_rows.row(k) = proxy.p.row(selected[k]);

    auto loss_of = [&]() {
      const Mat fused = fuse_with_rows(bank, proxy_rows);
      Tensor4 y = conv2d_forward(x, fused, spec);
      BatchNorm scratch = bn;
      Tensor4 yn = batchnorm_forward(y, scratch, true, nullptr);
      Tensor4 ya = relu_forward(yn);
      Tensor4 yp = avgpool_forward(ya, hw, 1);
      Tensor4 logits = linear_forward(flatten(yp), classifier);
      return softmax_cross_entropy(logits, labels).loss;
    };

    // analytic pass
    const Mat fused = fuse_with_rows(bank, proxy_rows);
    Tensor4 y = conv2d_forward(x, fused, spec);
    BatchNorm scratch = bn;
    BatchNormCache cache;
    Tensor4 yn = batchnorm_forward(y, scratch, true, &cache);
    Tensor4 ya = relu_forward(yn);
    Tensor4 yp = avgpool_forward(ya, hw, 1);
    Tensor4 flat = flatten(yp);
    Tensor4 logits = linear_forward(flat, classifier);
    LossResult lr = softmax_cross_entropy(logits, labels);
    LinearGrads lg = linear_backward(flat, classifier, lr.grad_logits);
    Tensor4 gp = avgpool_backward(ya, hw, 1, unflatten(lg.input, keep_n, 1, 1));
    Tensor4 gn = relu_backward(yn, gp);
    BatchNormGrads bg = batchnorm_backward(y, bn, cache, gn);
    ConvGrads cg = conv2d_backward(x, fused, spec, bg.input);
    const Mat grad_bank = fuse_backward_rows(cg.bank, proxy_rows);

    for (Eigen::Index i = 0; i < bank.size(); ++i) {
      const Scalar saved = bank.data()[i];
      const Scalar step = 1e-5;
      bank.data()[i] = saved + step;
      const Scalar up = loss_of();
      bank.data()[i] = saved - step;
      const Scalar down = loss_of();
      bank.data()[i] = saved;
      const Scalar fd = (up - down) / (2 * step);
      const Scalar analytic = grad_bank.data()[i];
      const Scalar denom = std::max(std::abs(fd), std::abs(analytic));
      const Scalar rel = std::abs(fd - analytic) / std::max(denom, 1e-3);
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d entries over 20 nets, worst rel err %.2e",
                checked, worst);
  out.note(buf);
  out.require(worst < 1e-4, "finite differences disagree");
}

void dense_equivalence(Outcome& out) {
  auto [train_set, test_set] = benchmark_data();
  TrainConfig fused_cfg = benchmark_config(7, /*pruned=*/false);
  fused_cfg.fixed_t = 1e8;  // pins every proxy row to an exact one-hot
  fused_cfg.epochs = 7;
  TrainConfig dense_cfg = fused_cfg;
  dense_cfg.fusion_on = false;
  const TrainResult a = train(fused_cfg, train_set, test_set);
  const TrainResult b = train(dense_cfg, train_set, test_set);
  out.require(a.log.step_losses.size() >= 100, "fewer than 100 steps");
  out.require(a.log.step_losses.size() == b.log.step_losses.size(), "step mismatch");
  Scalar worst = 0;
  for (size_t i = 0; i < a.log.step_losses.size(); ++i)
    worst = std::max(worst, std::abs(a.log.step_losses[i] - b.log.step_losses[i]));
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu steps, max |loss diff| %.2e",
                a.log.step_losses.size(), worst);
  out.note(buf);
  out.require(worst < 1e-6, "fused and dense step losses diverge");
}

// Shared by criteria 7 and 8.
struct BenchmarkRuns {
  TrainResult pruned, dense, fixed_t;
  Dataset train_set, test_set;
};
BenchmarkRuns* g_bench = nullptr;

void desk_scale_training(Outcome& out) {
  static BenchmarkRuns runs;
  auto [train_set, test_set] = benchmark_data();
  runs.train_set = train_set;
  runs.test_set = test_set;
  runs.pruned = train(benchmark_config(7, true), train_set, test_set);
  runs.dense = train(benchmark_config(7, false), train_set, test_set);
  TrainConfig fixed_cfg = benchmark_config(7, true);
  fixed_cfg.fixed_t = 1.0;
  runs.fixed_t = train(fixed_cfg, train_set, test_set);
  g_bench = &runs;

  const double pruned_acc = runs.pruned.log.rows.back().test_acc;
  const double dense_acc = runs.dense.log.rows.back().test_acc;
  char buf[128];
  std::snprintf(buf, sizeof buf, "pruned %.2f%%, unpruned twin %.2f%%",
                100 * pruned_acc, 100 * dense_acc);
  out.note(buf);
  out.require(pruned_acc >= 0.95, "pruned accuracy below 95%");
  out.require(dense_acc - pruned_acc <= 0.02, "more than 2 points behind the twin");

  refresh_fused_banks(runs.pruned.checkpoint.graph);
  std::vector<int> idx(100);
  std::iota(idx.begin(), idx.end(), 0);
  Tensor4 images;
  std::vector<int> labels;
  gather_batch(test_set, idx, images, labels);
  const Tensor4 live = forward(runs.pruned.checkpoint.graph, images, false, nullptr);
  const CompactModel model = export_compact(runs.pruned.checkpoint);
  const Tensor4 compact = compact_forward(model, images);
  const Scalar diff = (live.data - compact.data).abs().maxCoeff();
  std::snprintf(buf, sizeof buf, "export max |logit diff| %.2e", diff);
  out.note(buf);
  out.require(diff < 1e-5, "exported model deviates from the fused forward");
}

void churn_behavior(Outcome& out) {
  out.require(g_bench != nullptr, "criterion 7 runs unavailable");
  if (!g_bench) return;
  const auto& rows = g_bench->pruned.log.rows;
  const auto& fixed_rows = g_bench->fixed_t.log.rows;
  const size_t slice = std::max<size_t>(1, rows.size() / 10);
  double first = 0, last = 0, fixed_last = 0;
  for (size_t i = 0; i < slice; ++i) {
    first += mean_churn(rows[i]);
    last += mean_churn(rows[rows.size() - 1 - i]);
    fixed_last += mean_churn(fixed_rows[fixed_rows.size() - 1 - i]);
  }
  first /= slice;
  last /= slice;
  fixed_last /= slice;
  char buf[128];
  std::snprintf(buf, sizeof buf,
                "adaptive first %.2f, adaptive last %.2f, fixed-t last %.2f", first,
                last, fixed_last);
  out.note(buf);
  out.require(last <= first, "adaptive churn grew over training");
  out.require(last < fixed_last, "fixed-t run did not churn more at the end");
}

void ablation_ordering(Outcome& out) {
  auto [train_set, test_set] = benchmark_data();
  double full = 0, no_fusion = 0, random_mode = 0;
  for (std::uint64_t seed : {7, 8, 9}) {
    TrainConfig base = benchmark_config(seed, true);
    TrainConfig nf = base;
    nf.fusion_on = false;
    TrainConfig rnd = base;
    rnd.importance = ImportanceMode::random;
    full += train(base, train_set, test_set).log.rows.back().test_acc / 3;
    no_fusion += train(nf, train_set, test_set).log.rows.back().test_acc / 3;
    random_mode += train(rnd, train_set, test_set).log.rows.back().test_acc / 3;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "full %.2f%%, no-fusion %.2f%%, random %.2f%%",
                100 * full, 100 * no_fusion, 100 * random_mode);
  out.note(buf);
  out.require(full >= no_fusion, "fusion lost to plain selection");
  out.require(full >= random_mode, "fusion lost to random guidance");
}

void format_round_trips(Outcome& out) {
  const fs::path dir = fs::temp_directory_path() / "dcff_acceptance";
  fs::create_directories(dir);

  // IDX: byte-quantized dataset -> file -> dataset -> file, bit-identical
  Dataset d = synth(4, 16, 42);
  for (Eigen::Index i = 0; i < d.images.size(); ++i) {
    const Scalar clamped = std::min(1.0, std::abs(d.images.data[i]) / 4);
    d.images.data[i] = std::lround(clamped * 255.0) / 255.0;
  }
  auto write_idx = [](const Dataset& ds, const std::string& ip, const std::string& lp) {
    auto be32 = [](std::ofstream& s, std::uint32_t v) {
      const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
      s.write(reinterpret_cast<const char*>(b), 4);
    };
    std::ofstream imgs(ip, std::ios::binary | std::ios::trunc);
    be32(imgs, 0x803);
    be32(imgs, static_cast<std::uint32_t>(ds.size()));
    be32(imgs, static_cast<std::uint32_t>(ds.images.h));
    be32(imgs, static_cast<std::uint32_t>(ds.images.w));
    for (Eigen::Index i = 0; i < ds.images.size(); ++i) {
      const auto byte =
          static_cast<unsigned char>(std::lround(ds.images.data[i] * 255.0));
      imgs.write(reinterpret_cast<const char*>(&byte), 1);
    }
    std::ofstream labs(lp, std::ios::binary | std::ios::trunc);
    be32(labs, 0x801);
    be32(labs, static_cast<std::uint32_t>(ds.size()));
    for (int label : ds.labels) {
      const auto byte = static_cast<unsigned char>(label);
      labs.write(reinterpret_cast<const char*>(&byte), 1);
    }
  };
  write_idx(d, (dir / "a_img").string(), (dir / "a_lab").string());
  const Dataset back = load_idx((dir / "a_img").string(), (dir / "a_lab").string());
  write_idx(back, (dir / "b_img").string(), (dir / "b_lab").string());
  out.require(slurp((dir / "a_img").string()) == slurp((dir / "b_img").string()) &&
                  slurp((dir / "a_lab").string()) == slurp((dir / "b_lab").string()),
              "idx round-trip not bit-identical");

  // checkpoint: save -> load -> save, bit-identical
  auto [train_set, test_set] = benchmark_data();
  TrainConfig cfg = benchmark_config(7, true);
  cfg.epochs = 2;
  const TrainResult r = train(cfg, train_set, test_set);
  save_checkpoint(r.checkpoint, (dir / "ck1.dcff").string());
  const Checkpoint loaded = load_checkpoint((dir / "ck1.dcff").string());
  save_checkpoint(loaded, (dir / "ck2.dcff").string());
  out.require(slurp((dir / "ck1.dcff").string()) == slurp((dir / "ck2.dcff").string()),
              "checkpoint round-trip not bit-identical");

  // re-export determinism
  save_compact(export_compact(r.checkpoint), (dir / "m1.dcff").string());
  save_compact(export_compact(loaded), (dir / "m2.dcff").string());
  out.require(slurp((dir / "m1.dcff").string()) == slurp((dir / "m2.dcff").string()),
              "re-export is not byte-identical");
  fs::remove_all(dir);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  run_criterion(1, "complexity counter matches published baselines", 1.0,
                complexity_baselines);
  run_criterion(2, "temperature schedule endpoints and strict monotonicity", 1.0,
                schedule_endpoints);
  run_criterion(3, "proxy row-stochasticity, diagonal dominance, one-hot limit", 10.0,
                proxy_invariants);
  run_criterion(4, "divergence importance matches the naive oracle", 5.0, kl_oracle);
  run_criterion(5, "full-chain gradients match finite differences", 60.0,
                gradient_fidelity);
  run_criterion(6, "fused trainer equals dense trainer under one-hot proxies", 60.0,
                dense_equivalence);
  run_criterion(7, "desk-scale pruned training accuracy and export fidelity", 600.0,
                desk_scale_training);
  run_criterion(8, "selection churn settles under the adaptive schedule", 600.0,
                churn_behavior);
  run_criterion(9, "fusion outperforms its no-fusion and random ablations", 1800.0,
                ablation_ordering);
  run_criterion(10, "idx, checkpoint and export round-trips are exact", 5.0,
                format_round_trips);
  if (g_failures == 0)
    std::printf("all criteria passed\n");
  else
    std::printf("%d criteria FAILED\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
