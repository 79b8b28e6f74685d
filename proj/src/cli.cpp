#include "dcff/cli.hpp"

#include "dcff/serialize.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace dcff {
namespace {

std::pair<Dataset, Dataset> load_train_test(const DataSpec& spec,
                                            const std::string& data_dir, int classes) {
  if (spec.kind == "synth") {
    Dataset pool = synth(classes, spec.synth_n + spec.synth_test, spec.synth_seed);
    return split_dataset(pool, spec.synth_n);
  }
  if (spec.kind == "cifar10") {
    return {load_cifar10(data_dir, Dataset::Split::train),
            load_cifar10(data_dir, Dataset::Split::test)};
  }
  if (spec.kind == "mnist") {
    Dataset tr = load_idx(data_dir + "/train-images-idx3-ubyte",
                          data_dir + "/train-labels-idx1-ubyte");
    Dataset te = load_idx(data_dir + "/t10k-images-idx3-ubyte",
                          data_dir + "/t10k-labels-idx1-ubyte");
    te.split = Dataset::Split::test;
    return {std::move(tr), std::move(te)};
  }
  throw ValueError("unknown dataset kind '" + spec.kind + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << text;
  if (!out) throw FormatError(path + ": write failed");
}

std::string millions(std::uint64_t v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
  return buf;
}

std::string rate_percent(std::uint64_t pruned, std::uint64_t baseline) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * (1.0 - double(pruned) / double(baseline)));
  return buf;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const RunConfig rc = parse_config_file(config_path);
  auto [train_set, test_set] =
      load_train_test(rc.data, data_dir, rc.train.net.classes);
  TrainResult result = train(rc.train, train_set, test_set);
  result.checkpoint.data = rc.data;
  std::filesystem::create_directories(out_dir);
  save_checkpoint(result.checkpoint, out_dir + "/checkpoint.dcff");
  write_text_file(out_dir + "/metrics.csv", result.log.to_csv());
  if (!result.log.rows.empty()) {
    const auto& last = result.log.rows.back();
    std::printf("trained %d epochs: train_loss %.4f, test_acc %.2f%%\n",
                rc.train.epochs, last.train_loss, 100.0 * last.test_acc);
  } else {
    std::printf("trained 0 epochs: wrote initial checkpoint\n");
  }
  std::printf("checkpoint: %s\nmetrics: %s\n", (out_dir + "/checkpoint.dcff").c_str(),
              (out_dir + "/metrics.csv").c_str());
  return 0;
}

Dataset load_eval_set(const DataSpec& spec, const std::string& data_dir, int classes) {
  if (spec.kind == "synth") {
    Dataset pool = synth(classes, spec.synth_n + spec.synth_test, spec.synth_seed);
    return split_dataset(pool, spec.synth_n).second;
  }
  if (spec.kind == "cifar10") return load_cifar10(data_dir, Dataset::Split::test);
  if (spec.kind == "mnist") {
    Dataset te = load_idx(data_dir + "/t10k-images-idx3-ubyte",
                          data_dir + "/t10k-labels-idx1-ubyte");
    te.split = Dataset::Split::test;
    return te;
  }
  throw ValueError("unknown dataset kind '" + spec.kind + "'");
}

int cmd_eval(const std::string& model_path, const std::string& data_dir, int batch) {
  const CompactModel model = load_compact(model_path);
  const Dataset test_set = load_eval_set(model.data, data_dir, model.net.classes);
  const EvalMetrics m = evaluate_compact(model, test_set, batch);
  std::printf("top-1 accuracy: %.2f%% (%d samples)\n", 100.0 * m.top1, m.samples);
  if (model.net.classes >= 5)
    std::printf("top-5 accuracy: %.2f%%\n", 100.0 * m.top5);
  return 0;
}

int cmd_export(const std::string& checkpoint_path, const std::string& out_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const CompactModel model = export_compact(ck);
  save_compact(model, out_path);
  std::printf("compact model: %s (%llu parameters)\n", out_path.c_str(),
              static_cast<unsigned long long>(compact_param_count(model)));
  return 0;
}

std::vector<int> read_keep_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<int> keep;
  std::string tok;
  while (in >> tok) {
    std::stringstream ss(tok);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) keep.push_back(std::stoi(item));
  }
  if (keep.empty()) throw FormatError(path + ": no keep counts found");
  return keep;
}

int cmd_count(const std::string& arch, const std::string& keep_path) {
  NetSpec spec = default_spec(arch_from_name(arch));
  if (!keep_path.empty()) spec.keep = read_keep_file(keep_path);
  const Complexity pruned = count_complexity(spec);
  const Complexity base = count_complexity(default_spec(spec.arch));
  std::printf("arch: %s\n", arch.c_str());
  std::printf("flops: %s (%llu)  pruning rate: %s\n", millions(pruned.flops).c_str(),
              static_cast<unsigned long long>(pruned.flops),
              rate_percent(pruned.flops, base.flops).c_str());
  std::printf("params: %s (%llu)  pruning rate: %s\n", millions(pruned.params).c_str(),
              static_cast<unsigned long long>(pruned.params),
              rate_percent(pruned.params, base.params).c_str());
  return 0;
}

int cmd_trace(const std::string& checkpoint_path, int layer, const std::string& out_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const int layers = static_cast<int>(ck.graph.convs.size());
  if (layer < 0 || layer >= layers)
    throw ValueError("trace: layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(layers) + ")");
  const int full = ck.graph.convs[layer].full_width;
  const int keep = ck.graph.convs[layer].keep_width;
  std::ostringstream csv;
  csv << "epoch";
  for (int i = 0; i < full; ++i) csv << ",importance_" << i;
  for (int i = 0; i < keep; ++i) csv << ",selected_" << i;
  csv << "\n";
  csv.precision(17);
  for (size_t e = 0; e < ck.trace.size(); ++e) {
    const TraceEntry& entry = ck.trace[e][layer];
    csv << e;
    for (Eigen::Index i = 0; i < entry.importance.size(); ++i)
      csv << ',' << entry.importance[i];
    for (int s : entry.selected) csv << ',' << s;
    csv << "\n";
  }
  write_text_file(out_path, csv.str());
  std::printf("trace for layer %d (%zu epochs): %s\n", layer, ck.trace.size(),
              out_path.c_str());
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"dcff: train compact CNNs by temperature-annealed filter fusion"};
  app.require_subcommand(1);

  std::string config_path, data_dir = ".", out_dir = "out";
  auto* train_cmd = app.add_subcommand("train", "train a compact model from a config file");
  train_cmd->add_option("--config", config_path, "key = value config file")->required();
  train_cmd->add_option("--data", data_dir, "dataset directory (ignored for synth)");
  train_cmd->add_option("--out", out_dir, "output directory for checkpoint + metrics.csv");

  std::string model_path;
  int eval_batch = 256;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a compact model on the test split");
  eval_cmd->add_option("--model", model_path, "compact model file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory (ignored for synth)");
  eval_cmd->add_option("--batch", eval_batch, "evaluation batch size");

  std::string checkpoint_path, export_out;
  auto* export_cmd = app.add_subcommand("export", "export the fused compact model");
  export_cmd->add_option("--checkpoint", checkpoint_path, "training checkpoint")->required();
  export_cmd->add_option("--out", export_out, "compact model output file")->required();

  std::string arch, keep_path;
  auto* count_cmd = app.add_subcommand("count", "FLOPs/parameter counts and pruning rates");
  count_cmd->add_option("--arch", arch, "tinycnn|vgg16|resnet20|resnet56|resnet110")
      ->required();
  count_cmd->add_option("--keep", keep_path, "file with per-layer keep counts");

  int trace_layer = 0;
  std::string trace_out;
  auto* trace_cmd =
      app.add_subcommand("trace", "dump per-epoch importance/selection for one layer");
  trace_cmd->add_option("--checkpoint", checkpoint_path, "training checkpoint")->required();
  trace_cmd->add_option("--layer", trace_layer, "conv layer index")->required();
  trace_cmd->add_option("--out", trace_out, "output CSV path")->required();

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (eval_cmd->parsed()) return cmd_eval(model_path, data_dir, eval_batch);
    if (export_cmd->parsed()) return cmd_export(checkpoint_path, export_out);
    if (count_cmd->parsed()) return cmd_count(arch, keep_path);
    if (trace_cmd->parsed()) return cmd_trace(checkpoint_path, trace_layer, trace_out);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dcff
