#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mpt/tensor.hpp"

namespace mpt::data {

enum class Split { Train, Test };

struct Normalization {
  std::vector<float> mean;    // per channel (images) or per feature
  std::vector<float> stddev;
};

// In-memory labelled dataset. Image sets keep raw bytes and normalize when a
// batch is gathered; toy sets keep float features.
struct Dataset {
  std::string name;
  Split split = Split::Train;
  Shape sample_shape;  // {C, H, W} or {D}
  int num_classes = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // [N, C, H, W], 0..255
  std::vector<float> features;       // [N, D]
  Normalization norm;
  bool augment = false;  // random crop (pad 4) + horizontal flip

  std::size_t size() const { return labels.size(); }
  std::int64_t sample_size() const { return numel(sample_shape); }

  // x becomes [idx.size(), sample_shape...]. aug_seed drives augmentation; ignored when augment is off.
  void gather(std::span<const std::int64_t> idx, Tensor& x, std::vector<int>& y, std::uint64_t aug_seed = 0) const;
  // Whole split (or its first `limit` items) without augmentation.
  Tensor all_inputs(std::size_t limit = 0) const;
  std::vector<int> all_labels(std::size_t limit = 0) const;
  // Throws FormatError if a label is outside [0, num_classes).
  void validate() const;
  // Keep only the first n items (n == 0 keeps all).
  void truncate(std::size_t n);
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

// Order of sample indices for one epoch; a pure function of (n, seed, epoch).
std::vector<std::int64_t> batch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle = true);
std::uint64_t augmentation_seed(std::uint64_t seed, int epoch);

// IDX pair readers. Throw FormatError with byte offsets on malformed input.
std::vector<std::uint8_t> read_idx_images(const std::filesystem::path& file, std::int64_t& rows, std::int64_t& cols);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& file, std::size_t max_label = 9);

// train-images-idx3-ubyte / train-labels-idx1-ubyte / t10k-* under dir.
DatasetPair load_mnist_idx(const std::filesystem::path& dir);

// One CIFAR-10 binary batch: records of 1 label byte + 3072 channel-planar pixels.
Dataset read_cifar10_file(const std::filesystem::path& file);
// data_batch_1..5.bin + test_batch.bin, each exactly 10000 records.
DatasetPair load_cifar10_bin(const std::filesystem::path& dir, bool augment = true);

// Two interleaving half circles in 2-D, labels 0/1.
Dataset toy_two_moons(std::size_t n, double noise, std::uint64_t seed);

// Per-channel mean/std of pixels/255 over a split.
Normalization image_stats(const Dataset& d);

}  // namespace mpt::data
