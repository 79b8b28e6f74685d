#include "dcff/config.hpp"

#include <cstdio>
#include <optional>
#include <fstream>
#include <map>
#include <sstream>

namespace dcff {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Scalar parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const Scalar x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "': bad number '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "': bad integer '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "': bad integer '" + v + "'");
  }
}

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ValueError("config: key '" + key + "': expected on/off, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v == "none" || v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<int>(parse_int(key, item)));
  }
  return out;
}

std::string fmt_real(Scalar x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError(origin + ":" + std::to_string(lineno) +
                       ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValueError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ValueError(origin + ": duplicate key '" + key + "'");
  }

  RunConfig cfg;
  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return "";
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  // Architecture first: it sets the default input shape and keep vector.
  const std::string arch = take("arch");
  if (arch.empty()) throw ValueError(origin + ": missing required key 'arch'");
  cfg.train.net = default_spec(arch_from_name(arch));

  if (auto v = take("classes"); !v.empty())
    cfg.train.net.classes = static_cast<int>(parse_int("classes", v));
  if (auto v = take("input_channels"); !v.empty())
    cfg.train.net.in_channels = static_cast<int>(parse_int("input_channels", v));
  if (auto v = take("input_h"); !v.empty())
    cfg.train.net.in_h = static_cast<int>(parse_int("input_h", v));
  if (auto v = take("input_w"); !v.empty())
    cfg.train.net.in_w = static_cast<int>(parse_int("input_w", v));
  if (auto v = take("keep"); !v.empty() && v != "full")
    cfg.train.net.keep = parse_int_list("keep", v);

  if (auto v = take("epochs"); !v.empty())
    cfg.train.epochs = static_cast<int>(parse_int("epochs", v));
  if (auto v = take("batch_size"); !v.empty())
    cfg.train.batch_size = static_cast<int>(parse_int("batch_size", v));
  if (auto v = take("momentum"); !v.empty()) cfg.train.momentum = parse_real("momentum", v);
  if (auto v = take("weight_decay"); !v.empty())
    cfg.train.weight_decay = parse_real("weight_decay", v);

  if (auto v = take("lr"); !v.empty()) cfg.train.lr.base = parse_real("lr", v);
  if (auto v = take("lr_schedule"); !v.empty()) {
    if (v == "step")
      cfg.train.lr.kind = LrKind::step;
    else if (v == "cosine")
      cfg.train.lr.kind = LrKind::cosine;
    else
      throw ValueError("config: lr_schedule must be step or cosine, got '" + v + "'");
  }
  if (auto v = take("lr_milestones"); !v.empty())
    cfg.train.lr.milestones = parse_int_list("lr_milestones", v);
  if (auto v = take("lr_factor"); !v.empty())
    cfg.train.lr.factor = parse_real("lr_factor", v);

  if (auto v = take("t_start"); !v.empty())
    cfg.train.schedule.t_start = parse_real("t_start", v);
  if (auto v = take("t_end"); !v.empty()) cfg.train.schedule.t_end = parse_real("t_end", v);
  std::optional<int> t_epochs;
  if (auto v = take("t_epochs"); !v.empty())
    t_epochs = static_cast<int>(parse_int("t_epochs", v));
  if (auto v = take("fixed_t"); !v.empty() && v != "none")
    cfg.train.fixed_t = parse_real("fixed_t", v);
  if (auto v = take("fusion"); !v.empty()) cfg.train.fusion_on = parse_switch("fusion", v);
  if (auto v = take("importance"); !v.empty())
    cfg.train.importance = importance_mode_from_name(v);
  if (auto v = take("distance"); !v.empty())
    cfg.train.metric = distance_metric_from_name(v);
  if (auto v = take("refresh"); !v.empty()) {
    if (v == "per_epoch")
      cfg.train.refresh = RefreshMode::per_epoch;
    else if (v == "per_batch")
      cfg.train.refresh = RefreshMode::per_batch;
    else
      throw ValueError("config: refresh must be per_epoch or per_batch, got '" + v + "'");
  }
  if (auto v = take("augment"); !v.empty())
    cfg.train.augment_train = parse_switch("augment", v);
  if (auto v = take("seed"); !v.empty()) cfg.train.seed = parse_u64("seed", v);

  if (auto v = take("dataset"); !v.empty()) {
    if (v != "synth" && v != "cifar10" && v != "mnist")
      throw ValueError("config: dataset must be synth, cifar10 or mnist, got '" + v + "'");
    cfg.data.kind = v;
  }
  if (auto v = take("synth_n"); !v.empty())
    cfg.data.synth_n = static_cast<int>(parse_int("synth_n", v));
  if (auto v = take("synth_test"); !v.empty())
    cfg.data.synth_test = static_cast<int>(parse_int("synth_test", v));
  if (auto v = take("synth_seed"); !v.empty())
    cfg.data.synth_seed = parse_u64("synth_seed", v);

  if (!kv.empty())
    throw ValueError(origin + ": unknown key '" + kv.begin()->first + "'");

  cfg.train.lr.epochs = std::max(cfg.train.epochs, 1);
  cfg.train.schedule.epochs =
      t_epochs ? *t_epochs : std::max(cfg.train.epochs, 1);
  cfg.train.lr.epochs = std::max(cfg.train.lr.epochs, cfg.train.schedule.epochs);
  cfg.train.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string config_to_text(const RunConfig& config) {
  const TrainConfig& t = config.train;
  std::ostringstream out;
  out << "arch = " << arch_name(t.net.arch) << "\n";
  out << "classes = " << t.net.classes << "\n";
  out << "input_channels = " << t.net.in_channels << "\n";
  out << "input_h = " << t.net.in_h << "\n";
  out << "input_w = " << t.net.in_w << "\n";
  out << "keep = " << fmt_int_list(t.net.keep) << "\n";
  out << "epochs = " << t.epochs << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "momentum = " << fmt_real(t.momentum) << "\n";
  out << "weight_decay = " << fmt_real(t.weight_decay) << "\n";
  out << "lr = " << fmt_real(t.lr.base) << "\n";
  out << "lr_schedule = " << (t.lr.kind == LrKind::step ? "step" : "cosine") << "\n";
  out << "lr_milestones = " << fmt_int_list(t.lr.milestones) << "\n";
  out << "lr_factor = " << fmt_real(t.lr.factor) << "\n";
  out << "t_start = " << fmt_real(t.schedule.t_start) << "\n";
  out << "t_end = " << fmt_real(t.schedule.t_end) << "\n";
  out << "t_epochs = " << t.schedule.epochs << "\n";
  out << "fixed_t = " << (t.fixed_t ? fmt_real(*t.fixed_t) : std::string("none")) << "\n";
  out << "fusion = " << (t.fusion_on ? "on" : "off") << "\n";
  out << "importance = " << importance_mode_name(t.importance) << "\n";
  out << "distance = " << distance_metric_name(t.metric) << "\n";
  out << "refresh = " << (t.refresh == RefreshMode::per_epoch ? "per_epoch" : "per_batch")
      << "\n";
  out << "augment = " << (t.augment_train ? "on" : "off") << "\n";
  out << "seed = " << t.seed << "\n";
  out << "dataset = " << config.data.kind << "\n";
  out << "synth_n = " << config.data.synth_n << "\n";
  out << "synth_test = " << config.data.synth_test << "\n";
  out << "synth_seed = " << config.data.synth_seed << "\n";
  return out.str();
}

}  // namespace dcff
