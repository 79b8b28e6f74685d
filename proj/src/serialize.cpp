#include "dcff/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace dcff {
namespace {

constexpr const char* kMagic = "DCFF1";

std::string fmt_real(Scalar x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class ContainerWriter {
 public:
  explicit ContainerWriter(std::string kind) : kind_(std::move(kind)) {}

  void config(const std::string& text) { config_text_ = text; }
  void field(const std::string& name, const std::string& value) {
    fields_ << "field " << name << ' ' << value << "\n";
  }
  void blob(const std::string& name, Mat m) {
    decls_ << "blob " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
    blobs_.push_back(std::move(m));
  }
  void blob(const std::string& name, const Vec& v) { blob(name, Mat(v)); }
  void blob_ints(const std::string& name, const std::vector<int>& v) {
    Mat m(static_cast<Eigen::Index>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
    blob(name, std::move(m));
  }

  void write(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw FormatError(tmp + ": cannot open for writing");
      out << kMagic << "\n";
      out << "kind " << kind_ << "\n";
      out << "config-begin\n" << config_text_ << "config-end\n";
      out << fields_.str();
      out << decls_.str();
      out << "end\n";
      for (const Mat& m : blobs_)
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
      if (!out) throw FormatError(tmp + ": write failed");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw FormatError(path + ": rename from temp file failed");
  }

 private:
  std::string kind_;
  std::string config_text_;
  std::ostringstream fields_;
  std::ostringstream decls_;
  std::vector<Mat> blobs_;
};

class ContainerReader {
 public:
  explicit ContainerReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open");
    std::ostringstream buf;
    buf << in.rdbuf();
    raw_ = buf.str();

    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
      const auto nl = raw_.find('\n', pos);
      if (nl == std::string::npos) throw FormatError(path_ + ": truncated header");
      std::string line = raw_.substr(pos, nl - pos);
      pos = nl + 1;
      return line;
    };

    if (next_line() != kMagic) throw FormatError(path + ": bad magic (expected DCFF1)");
    std::string line = next_line();
    if (line.rfind("kind ", 0) != 0) throw FormatError(path + ": missing kind line");
    kind_ = line.substr(5);
    if (next_line() != "config-begin")
      throw FormatError(path + ": missing config block");
    while (true) {
      line = next_line();
      if (line == "config-end") break;
      config_text_ += line + "\n";
    }
    while (true) {
      line = next_line();
      if (line == "end") break;
      std::istringstream ls(line);
      std::string tag, name;
      ls >> tag >> name;
      if (tag == "field") {
        std::string value;
        std::getline(ls, value);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        fields_[name] = value;
      } else if (tag == "blob") {
        Eigen::Index rows = 0, cols = 0;
        ls >> rows >> cols;
        if (!ls || rows < 0 || cols < 0)
          throw FormatError(path + ": bad blob declaration '" + line + "'");
        decls_.push_back({name, rows, cols});
      } else {
        throw FormatError(path + ": unexpected header line '" + line + "'");
      }
    }
    data_offset_ = pos;
    std::size_t expected = 0;
    for (const auto& d : decls_) expected += sizeof(Scalar) * d.rows * d.cols;
    if (raw_.size() - data_offset_ != expected)
      throw FormatError(path + ": blob section has " +
                        std::to_string(raw_.size() - data_offset_) + " bytes, header declares " +
                        std::to_string(expected));
  }

  const std::string& kind() const { return kind_; }
  const std::string& config_text() const { return config_text_; }

  std::string field(const std::string& name) const {
    auto it = fields_.find(name);
    if (it == fields_.end()) throw FormatError(path_ + ": missing field '" + name + "'");
    return it->second;
  }

  Mat blob(const std::string& name) {
    if (next_ >= decls_.size())
      throw FormatError(path_ + ": expected blob '" + name + "' but header is exhausted");
    const Decl& d = decls_[next_];
    if (d.name != name)
      throw FormatError(path_ + ": expected blob '" + name + "', found '" + d.name + "'");
    Mat m(d.rows, d.cols);
    std::memcpy(m.data(), raw_.data() + data_offset_ + offset_of(next_),
                sizeof(Scalar) * d.rows * d.cols);
    ++next_;
    return m;
  }
  Vec blob_vec(const std::string& name) {
    Mat m = blob(name);
    if (m.cols() != 1 && m.size() != 0)
      throw FormatError(path_ + ": blob '" + name + "' is not a vector");
    return Vec(m.reshaped());
  }
  std::vector<int> blob_ints(const std::string& name) {
    const Vec v = blob_vec(name);
    std::vector<int> out(static_cast<size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      out[static_cast<size_t>(i)] = static_cast<int>(std::llround(v[i]));
    return out;
  }

 private:
  struct Decl {
    std::string name;
    Eigen::Index rows, cols;
  };
  std::size_t offset_of(std::size_t idx) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx; ++i)
      off += sizeof(Scalar) * decls_[i].rows * decls_[i].cols;
    return off;
  }

  std::string path_;
  std::string raw_;
  std::string kind_;
  std::string config_text_;
  std::map<std::string, std::string> fields_;
  std::vector<Decl> decls_;
  std::size_t next_ = 0;
  std::size_t data_offset_ = 0;
};

std::string conv_name(size_t i, const char* suffix) {
  return "conv" + std::to_string(i) + "." + suffix;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  ContainerWriter w("checkpoint");
  w.config(config_to_text(RunConfig{checkpoint.config, checkpoint.data}));
  w.field("epoch", std::to_string(checkpoint.epoch));
  w.field("rng", checkpoint.rng_state);
  w.field("trace_epochs", std::to_string(checkpoint.trace.size()));
  const auto& g = checkpoint.graph;
  for (size_t i = 0; i < g.convs.size(); ++i) {
    const auto& L = g.convs[i];
    w.field(conv_name(i, "temperature"), fmt_real(L.fusion.temperature));
    w.field(conv_name(i, "churn"), std::to_string(L.fusion.churn));
    w.blob(conv_name(i, "bank"), L.bank);
    w.blob(conv_name(i, "velocity"), L.bank_velocity);
    w.blob(conv_name(i, "bn.gamma"), L.bn.gamma);
    w.blob(conv_name(i, "bn.beta"), L.bn.beta);
    w.blob(conv_name(i, "bn.running_mean"), L.bn.running_mean);
    w.blob(conv_name(i, "bn.running_var"), L.bn.running_var);
    w.blob(conv_name(i, "bn.gamma_velocity"), L.bn_gamma_velocity);
    w.blob(conv_name(i, "bn.beta_velocity"), L.bn_beta_velocity);
    w.blob(conv_name(i, "importance"), L.fusion.importance);
    w.blob_ints(conv_name(i, "selected"), L.fusion.selected);
    w.blob(conv_name(i, "proxy_rows"), L.fusion.proxy_rows);
    w.blob(conv_name(i, "fused"), L.fusion.fused);
  }
  w.blob("classifier.bank", g.classifier.bank);
  w.blob("classifier.velocity", g.classifier.velocity);
  for (size_t e = 0; e < checkpoint.trace.size(); ++e)
    for (size_t l = 0; l < checkpoint.trace[e].size(); ++l) {
      const auto& entry = checkpoint.trace[e][l];
      const std::string base = "trace." + std::to_string(e) + "." + std::to_string(l);
      w.blob(base + ".importance", entry.importance);
      w.blob_ints(base + ".selected", entry.selected);
    }
  w.write(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  ContainerReader r(path);
  if (r.kind() != "checkpoint")
    throw FormatError(path + ": not a checkpoint (kind '" + r.kind() + "')");
  const RunConfig rc = parse_config_text(r.config_text(), path + " (embedded config)");
  Checkpoint ck;
  ck.config = rc.train;
  ck.data = rc.data;
  ck.epoch = std::stoi(r.field("epoch"));
  ck.rng_state = r.field("rng");
  std::mt19937_64 scratch_rng(0);
  ck.graph = build(ck.config.net, scratch_rng);
  ck.graph.fusion_on = ck.config.fusion_on;
  auto& g = ck.graph;
  auto expect_shape = [&](const Mat& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& what) {
    if (m.rows() != rows || m.cols() != cols)
      throw FormatError(path + ": blob '" + what + "' has shape " +
                        std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                        ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  };
  for (size_t i = 0; i < g.convs.size(); ++i) {
    auto& L = g.convs[i];
    L.fusion.temperature = std::stod(r.field(conv_name(i, "temperature")));
    L.fusion.churn = std::stoi(r.field(conv_name(i, "churn")));
    Mat bank = r.blob(conv_name(i, "bank"));
    expect_shape(bank, L.bank.rows(), L.bank.cols(), conv_name(i, "bank"));
    L.bank = std::move(bank);
    L.bank_velocity = r.blob(conv_name(i, "velocity"));
    expect_shape(L.bank_velocity, L.bank.rows(), L.bank.cols(), conv_name(i, "velocity"));
    L.bn.gamma = r.blob_vec(conv_name(i, "bn.gamma"));
    L.bn.beta = r.blob_vec(conv_name(i, "bn.beta"));
    L.bn.running_mean = r.blob_vec(conv_name(i, "bn.running_mean"));
    L.bn.running_var = r.blob_vec(conv_name(i, "bn.running_var"));
    L.bn_gamma_velocity = r.blob_vec(conv_name(i, "bn.gamma_velocity"));
    L.bn_beta_velocity = r.blob_vec(conv_name(i, "bn.beta_velocity"));
    if (L.bn.gamma.size() != L.keep_width)
      throw FormatError(path + ": batch norm " + std::to_string(i) + " sized " +
                        std::to_string(L.bn.gamma.size()) + ", expected " +
                        std::to_string(L.keep_width));
    L.fusion.importance = r.blob_vec(conv_name(i, "importance"));
    L.fusion.selected = r.blob_ints(conv_name(i, "selected"));
    L.fusion.proxy_rows = r.blob(conv_name(i, "proxy_rows"));
    L.fusion.fused = r.blob(conv_name(i, "fused"));
  }
  g.classifier.bank = r.blob("classifier.bank");
  g.classifier.velocity = r.blob("classifier.velocity");
  const int trace_epochs = std::stoi(r.field("trace_epochs"));
  ck.trace.resize(trace_epochs);
  for (int e = 0; e < trace_epochs; ++e) {
    ck.trace[e].resize(g.convs.size());
    for (size_t l = 0; l < g.convs.size(); ++l) {
      const std::string base = "trace." + std::to_string(e) + "." + std::to_string(l);
      ck.trace[e][l].importance = r.blob_vec(base + ".importance");
      ck.trace[e][l].selected = r.blob_ints(base + ".selected");
    }
  }
  return ck;
}

void save_compact(const CompactModel& model, const std::string& path) {
  ContainerWriter w("compact");
  RunConfig rc;
  rc.train.net = model.net;
  rc.data = model.data;
  w.config(config_to_text(rc));
  for (size_t i = 0; i < model.fused_banks.size(); ++i) {
    w.blob(conv_name(i, "fused"), model.fused_banks[i]);
    w.blob(conv_name(i, "bn.gamma"), model.bns[i].gamma);
    w.blob(conv_name(i, "bn.beta"), model.bns[i].beta);
    w.blob(conv_name(i, "bn.running_mean"), model.bns[i].running_mean);
    w.blob(conv_name(i, "bn.running_var"), model.bns[i].running_var);
  }
  w.blob("classifier.bank", model.classifier);
  w.write(path);
}

CompactModel load_compact(const std::string& path) {
  ContainerReader r(path);
  if (r.kind() != "compact")
    throw FormatError(path + ": not a compact model (kind '" + r.kind() + "')");
  const RunConfig rc = parse_config_text(r.config_text(), path + " (embedded config)");
  CompactModel m;
  m.net = rc.train.net;
  m.data = rc.data;
  const size_t layers = full_widths(m.net.arch).size();
  for (size_t i = 0; i < layers; ++i) {
    m.fused_banks.push_back(r.blob(conv_name(i, "fused")));
    BatchNorm bn;
    bn.gamma = r.blob_vec(conv_name(i, "bn.gamma"));
    bn.beta = r.blob_vec(conv_name(i, "bn.beta"));
    bn.running_mean = r.blob_vec(conv_name(i, "bn.running_mean"));
    bn.running_var = r.blob_vec(conv_name(i, "bn.running_var"));
    m.bns.push_back(std::move(bn));
  }
  m.classifier = r.blob("classifier.bank");
  return m;
}

}  // namespace dcff
