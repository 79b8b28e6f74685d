#include "dcff/data.hpp"

#include <array>
#include <fstream>

namespace dcff {
namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw FormatError(path + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::vector<unsigned char> read_bytes(std::istream& in, std::size_t count,
                                      const std::string& path) {
  std::vector<unsigned char> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw FormatError(path + ": truncated file (wanted " + std::to_string(count) +
                      " more bytes)");
  return buf;
}

std::ifstream open_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  return in;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs = open_file(images_path);
  const std::uint32_t magic_i = read_be32(imgs, images_path);
  if (magic_i != 0x00000803u)
    throw FormatError(images_path + ": bad magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic_i);
      return std::string(buf);
    }() + " (expected 0x00000803 image file)");
  const std::uint32_t n = read_be32(imgs, images_path);
  const std::uint32_t rows = read_be32(imgs, images_path);
  const std::uint32_t cols = read_be32(imgs, images_path);

  std::ifstream labs = open_file(labels_path);
  const std::uint32_t magic_l = read_be32(labs, labels_path);
  if (magic_l != 0x00000801u)
    throw FormatError(labels_path + ": bad magic (expected 0x00000801 label file)");
  const std::uint32_t n_labels = read_be32(labs, labels_path);
  if (n_labels != n)
    throw FormatError("idx: " + std::to_string(n) + " images but " +
                      std::to_string(n_labels) + " labels");

  const std::size_t pixels = std::size_t(n) * rows * cols;
  const auto raw = read_bytes(imgs, pixels, images_path);
  const auto raw_labels = read_bytes(labs, n, labels_path);

  Dataset d;
  d.images = Tensor4(static_cast<int>(n), 1, static_cast<int>(rows),
                     static_cast<int>(cols));
  for (std::size_t i = 0; i < pixels; ++i)
    d.images.data[static_cast<Eigen::Index>(i)] = raw[i] / 255.0;
  d.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    d.labels[i] = raw_labels[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.classes = max_label + 1;
  return d;
}

namespace {

void append_cifar_file(const std::string& path, std::vector<unsigned char>& records) {
  std::ifstream in = open_file(path);
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (len % 3073 != 0)
    throw FormatError(path + ": length " + std::to_string(len) +
                      " is not a multiple of 3073");
  const auto data = read_bytes(in, len, path);
  records.insert(records.end(), data.begin(), data.end());
}

}  // namespace

Dataset load_cifar10(const std::string& dir, Dataset::Split split) {
  std::vector<unsigned char> records;
  if (split == Dataset::Split::train) {
    for (int i = 1; i <= 5; ++i)
      append_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin", records);
  } else {
    append_cifar_file(dir + "/test_batch.bin", records);
  }
  const int n = static_cast<int>(records.size() / 3073);
  Dataset d;
  d.split = split;
  d.classes = 10;
  d.images = Tensor4(n, 3, 32, 32);
  d.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = records.data() + std::size_t(i) * 3073;
    const int label = rec[0];
    if (label > 9) throw FormatError("cifar10: label " + std::to_string(label) +
                                     " out of range in record " + std::to_string(i));
    d.labels[i] = label;
    for (int c = 0; c < 3; ++c) {
      const unsigned char* plane = rec + 1 + c * 1024;
      for (int p = 0; p < 1024; ++p)
        d.images.data[d.images.index(i, c, p / 32, p % 32)] =
            (plane[p] / 255.0 - kCifarMean[c]) / kCifarStd[c];
    }
  }
  return d;
}

Tensor4 augment(const Tensor4& batch, std::mt19937_64& rng, int pad) {
  Tensor4 out(batch.n, batch.c, batch.h, batch.w);
  std::uniform_int_distribution<int> offset(0, 2 * pad);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < batch.n; ++i) {
    const int dy = offset(rng);
    const int dx = offset(rng);
    const bool flip = coin(rng);
    for (int c = 0; c < batch.c; ++c)
      for (int y = 0; y < batch.h; ++y)
        for (int x = 0; x < batch.w; ++x) {
          const int sx = flip ? batch.w - 1 - x : x;
          const int src_y = y + dy - pad;
          const int src_x = sx + dx - pad;
          out.at(i, c, y, x) =
              (src_y >= 0 && src_y < batch.h && src_x >= 0 && src_x < batch.w)
                  ? batch.at(i, c, src_y, src_x)
                  : 0.0;
        }
  }
  return out;
}

Dataset synth(int classes, int n, std::uint64_t seed) {
  if (classes < 2) throw ValueError("synth: need at least 2 classes");
  if (n < classes) throw ValueError("synth: need at least one sample per class");
  constexpr int kSide = 8;
  constexpr Scalar kNoise = 1.1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0);

  Mat templates(kSide * kSide, classes);
  for (int c = 0; c < classes; ++c)
    for (int p = 0; p < kSide * kSide; ++p) templates(p, c) = normal(rng);

  Dataset d;
  d.classes = classes;
  d.images = Tensor4(n, 1, kSide, kSide);
  d.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    d.labels[i] = label;
    for (int p = 0; p < kSide * kSide; ++p)
      d.images.data[static_cast<Eigen::Index>(i) * kSide * kSide + p] =
          templates(p, label) + kNoise * normal(rng);
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, int head) {
  if (head < 0 || head > d.size())
    throw ValueError("split_dataset: head " + std::to_string(head) + " outside [0, " +
                     std::to_string(d.size()) + "]");
  Dataset a, b;
  a.classes = b.classes = d.classes;
  a.split = Dataset::Split::train;
  b.split = Dataset::Split::test;
  const Eigen::Index chw = static_cast<Eigen::Index>(d.images.c) * d.images.h * d.images.w;
  a.images = Tensor4(head, d.images.c, d.images.h, d.images.w);
  b.images = Tensor4(d.size() - head, d.images.c, d.images.h, d.images.w);
  a.images.data = d.images.data.head(head * chw);
  b.images.data = d.images.data.tail((d.size() - head) * chw);
  a.labels.assign(d.labels.begin(), d.labels.begin() + head);
  b.labels.assign(d.labels.begin() + head, d.labels.end());
  return {std::move(a), std::move(b)};
}

void gather_batch(const Dataset& d, const std::vector<int>& indices, Tensor4& images,
                  std::vector<int>& labels) {
  const Eigen::Index chw = static_cast<Eigen::Index>(d.images.c) * d.images.h * d.images.w;
  images = Tensor4(static_cast<int>(indices.size()), d.images.c, d.images.h, d.images.w);
  labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    images.data.segment(static_cast<Eigen::Index>(i) * chw, chw) =
        d.images.data.segment(static_cast<Eigen::Index>(indices[i]) * chw, chw);
    labels[i] = d.labels[indices[i]];
  }
}

}  // namespace dcff
