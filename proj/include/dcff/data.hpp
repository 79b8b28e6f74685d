#ifndef DCFF_DATA_HPP
#define DCFF_DATA_HPP

#include "dcff/types.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dcff {

struct Dataset {
  enum class Split { train, test };
  Tensor4 images;
  std::vector<int> labels;
  int classes = 0;
  Split split = Split::train;

  int size() const { return images.n; }
};

/// Which data a run trains on; carried through checkpoints so eval tooling
/// can rebuild the matching test set.
struct DataSpec {
  std::string kind = "synth";  // synth | cifar10 | mnist
  int synth_n = 512;           // synth training samples
  int synth_test = 256;        // synth held-out samples
  std::uint64_t synth_seed = 1;
};

/// Big-endian IDX pair (magic 0x00000803 images / 0x00000801 labels).
/// Pixels come out scaled by 1/255, no further normalization.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary batches (3073-byte records: label + RGB planes), scaled
/// to [0,1] and normalized with the usual per-channel statistics.
Dataset load_cifar10(const std::string& dir, Dataset::Split split);

inline constexpr Scalar kCifarMean[3] = {0.4914, 0.4822, 0.4465};
inline constexpr Scalar kCifarStd[3] = {0.2470, 0.2435, 0.2616};

/// Zero-pad by `pad`, crop back to the original size at a random offset,
/// then flip horizontally with probability 1/2. Per image the generator is
/// consumed in the order: row offset, column offset, flip.
Tensor4 augment(const Tensor4& batch, std::mt19937_64& rng, int pad = 4);

/// Seeded synthetic set: one Gaussian 8x8 template per class, samples are
/// template + noise with labels assigned round-robin.
Dataset synth(int classes, int n, std::uint64_t seed);

/// First `head` samples and the rest as two datasets (train/test carving).
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, int head);

/// Single batch extraction by index list.
void gather_batch(const Dataset& d, const std::vector<int>& indices, Tensor4& images,
                  std::vector<int>& labels);

}  // namespace dcff

#endif  // DCFF_DATA_HPP
