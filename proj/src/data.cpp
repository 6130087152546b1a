#include "mpt/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "mpt/errors.hpp"

namespace mpt::data {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 1 + 3072;
constexpr std::size_t kCifarBatchRecords = 10000;

std::vector<std::uint8_t> read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(len);
  if (len && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(len))) {
    throw IoError("read failed for " + file.string());
  }
  return buf;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& file) {
  if (off + 4 > b.size()) throw FormatError(file + ": truncated header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void finalize_image_pair(DatasetPair& p) {
  p.test.norm = p.train.norm = image_stats(p.train);
}

}  // namespace

void Dataset::gather(std::span<const std::int64_t> idx, Tensor& x, std::vector<int>& y, std::uint64_t aug_seed) const {
  Shape shape{static_cast<std::int64_t>(idx.size())};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  if (x.shape() != shape) x = Tensor(shape);
  y.resize(idx.size());
  const auto per = sample_size();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto i = idx[b];
    if (i < 0 || static_cast<std::size_t>(i) >= size()) throw DimensionError("sample index out of range");
    y[b] = labels[static_cast<std::size_t>(i)];
    float* dst = x.ptr() + static_cast<std::int64_t>(b) * per;
    if (!features.empty()) {
      const float* src = features.data() + i * per;
      for (std::int64_t k = 0; k < per; ++k) {
        const auto f = static_cast<std::size_t>(k);
        dst[k] = norm.mean.empty() ? src[k] : (src[k] - norm.mean[f]) / norm.stddev[f];
      }
      continue;
    }
    const std::int64_t c = sample_shape[0], h = sample_shape.size() == 3 ? sample_shape[1] : 1,
                       w = sample_shape.size() == 3 ? sample_shape[2] : per / c;
    const std::uint8_t* src = pixels.data() + i * per;
    int dy = 0, dx = 0;
    bool flip = false;
    if (augment && split == Split::Train) {
      std::seed_seq seq{static_cast<std::uint32_t>(aug_seed), static_cast<std::uint32_t>(aug_seed >> 32),
                        static_cast<std::uint32_t>(i)};
      std::mt19937 rng(seq);
      std::uniform_int_distribution<int> shift(-4, 4);
      dy = shift(rng);
      dx = shift(rng);
      flip = std::bernoulli_distribution(0.5)(rng);
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float mu = norm.mean.empty() ? 0.0f : norm.mean[static_cast<std::size_t>(ch)];
      const float sd = norm.stddev.empty() ? 1.0f : norm.stddev[static_cast<std::size_t>(ch)];
      // Zero padding happens before normalization, so padded pixels map to (0 - mu) / sd.
      for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t q = 0; q < w; ++q) {
          const std::int64_t sr = r + dy;
          const std::int64_t sq = (flip ? w - 1 - q : q) + dx;
          float v = 0.0f;
          if (sr >= 0 && sr < h && sq >= 0 && sq < w) v = src[(ch * h + sr) * w + sq] / 255.0f;
          dst[(ch * h + r) * w + q] = (v - mu) / sd;
        }
      }
    }
  }
}

Tensor Dataset::all_inputs(std::size_t limit) const {
  const std::size_t n = limit ? std::min(limit, size()) : size();
  std::vector<std::int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Dataset view = *this;
  view.augment = false;
  Tensor x;
  std::vector<int> y;
  view.gather(idx, x, y);
  return x;
}

std::vector<int> Dataset::all_labels(std::size_t limit) const {
  const std::size_t n = limit ? std::min(limit, size()) : size();
  return std::vector<int>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw FormatError(name + ": label " + std::to_string(labels[i]) + " outside [0," + std::to_string(num_classes) +
                            ")",
                        i);
    }
  }
}

void Dataset::truncate(std::size_t n) {
  if (n == 0 || n >= size()) return;
  const auto per = static_cast<std::size_t>(sample_size());
  labels.resize(n);
  if (!pixels.empty()) pixels.resize(n * per);
  if (!features.empty()) features.resize(n * per);
}

std::vector<std::int64_t> batch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle) {
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (!shuffle) return order;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on std::shuffle's implementation.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::uint64_t augmentation_seed(std::uint64_t seed, int epoch) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<std::uint8_t> read_idx_images(const std::filesystem::path& file, std::int64_t& rows, std::int64_t& cols) {
  const auto buf = read_file(file);
  const auto name = file.filename().string();
  const auto magic = be32(buf, 0, name);
  if (magic != kIdxImagesMagic) throw FormatError(name + ": bad IDX image magic", 0);
  const auto count = be32(buf, 4, name);
  rows = be32(buf, 8, name);
  cols = be32(buf, 12, name);
  const std::size_t expected = 16 + std::size_t{count} * static_cast<std::size_t>(rows * cols);
  if (buf.size() < expected) {
    throw FormatError(name + ": truncated image data, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(buf.size()),
                      buf.size());
  }
  return std::vector<std::uint8_t>(buf.begin() + 16, buf.begin() + static_cast<std::ptrdiff_t>(expected));
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& file, std::size_t max_label) {
  const auto buf = read_file(file);
  const auto name = file.filename().string();
  if (be32(buf, 0, name) != kIdxLabelsMagic) throw FormatError(name + ": bad IDX label magic", 0);
  const auto count = be32(buf, 4, name);
  const std::size_t expected = 8 + std::size_t{count};
  if (buf.size() < expected) {
    throw FormatError(name + ": truncated label data, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(buf.size()),
                      buf.size());
  }
  std::vector<std::uint8_t> labels(buf.begin() + 8, buf.begin() + static_cast<std::ptrdiff_t>(expected));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > max_label) {
      throw FormatError(name + ": label value " + std::to_string(labels[i]) + " exceeds " + std::to_string(max_label),
                        8 + i);
    }
  }
  return labels;
}

DatasetPair load_mnist_idx(const std::filesystem::path& dir) {
  auto load = [&](const std::string& prefix, Split split) {
    Dataset d;
    d.name = "mnist-" + std::string(split == Split::Train ? "train" : "test");
    d.split = split;
    d.num_classes = 10;
    std::int64_t r = 0, c = 0;
    d.pixels = read_idx_images(dir / (prefix + "-images-idx3-ubyte"), r, c);
    d.labels = read_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
    d.sample_shape = {1, r, c};
    if (d.pixels.size() != d.labels.size() * static_cast<std::size_t>(r * c)) {
      throw FormatError(d.name + ": image and label counts differ", 4);
    }
    return d;
  };
  DatasetPair p{load("train", Split::Train), load("t10k", Split::Test)};
  finalize_image_pair(p);
  return p;
}

Dataset read_cifar10_file(const std::filesystem::path& file) {
  const auto buf = read_file(file);
  const auto name = file.filename().string();
  if (buf.empty() || buf.size() % kCifarRecord != 0) {
    throw FormatError(name + ": size " + std::to_string(buf.size()) + " is not a multiple of the 3073-byte record",
                      buf.size() - buf.size() % kCifarRecord);
  }
  Dataset d;
  d.name = name;
  d.num_classes = 10;
  d.sample_shape = {3, 32, 32};
  const std::size_t n = buf.size() / kCifarRecord;
  d.labels.resize(n);
  d.pixels.resize(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = buf.data() + i * kCifarRecord;
    if (rec[0] > 9) throw FormatError(name + ": label " + std::to_string(rec[0]) + " exceeds 9", i * kCifarRecord);
    d.labels[i] = rec[0];
    std::copy(rec + 1, rec + kCifarRecord, d.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3072));
  }
  return d;
}

DatasetPair load_cifar10_bin(const std::filesystem::path& dir, bool augment) {
  auto load_exact = [&](const std::string& file) {
    const auto path = dir / file;
    std::error_code ec;
    const auto sz = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot open " + path.string());
    if (sz != kCifarRecord * kCifarBatchRecords) {
      throw FormatError(file + ": expected " + std::to_string(kCifarRecord * kCifarBatchRecords) + " bytes, got " +
                            std::to_string(sz),
                        std::min<std::uintmax_t>(sz, kCifarRecord * kCifarBatchRecords));
    }
    return read_cifar10_file(path);
  };
  DatasetPair p;
  p.train.name = "cifar10-train";
  p.train.split = Split::Train;
  p.train.num_classes = 10;
  p.train.sample_shape = {3, 32, 32};
  p.train.augment = augment;
  for (int b = 1; b <= 5; ++b) {
    auto part = load_exact("data_batch_" + std::to_string(b) + ".bin");
    p.train.labels.insert(p.train.labels.end(), part.labels.begin(), part.labels.end());
    p.train.pixels.insert(p.train.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  p.test = load_exact("test_batch.bin");
  p.test.name = "cifar10-test";
  p.test.split = Split::Test;
  p.test.augment = false;
  finalize_image_pair(p);
  return p;
}

Dataset toy_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  Dataset d;
  d.name = "two-moons";
  d.num_classes = 2;
  d.sample_shape = {2};
  d.labels.resize(n);
  d.features.resize(n * 2);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, noise > 0.0 ? noise : 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool inner = (i % 2) == 1;
    const double t = angle(rng);
    double x = inner ? 1.0 - std::cos(t) : std::cos(t);
    double y = inner ? 0.5 - std::sin(t) : std::sin(t);
    if (noise > 0.0) {
      x += jitter(rng);
      y += jitter(rng);
    }
    d.features[2 * i] = static_cast<float>(x);
    d.features[2 * i + 1] = static_cast<float>(y);
    d.labels[i] = inner ? 1 : 0;
  }
  return d;
}

Normalization image_stats(const Dataset& d) {
  Normalization norm;
  if (d.pixels.empty() || d.sample_shape.size() != 3) return norm;
  const auto c = static_cast<std::size_t>(d.sample_shape[0]);
  const auto plane = static_cast<std::size_t>(d.sample_shape[1] * d.sample_shape[2]);
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto* p = d.pixels.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = p[k] / 255.0;
        sum[ch] += v;
        sq[ch] += v * v;
      }
    }
  }
  const double count = static_cast<double>(d.size() * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = sum[ch] / count;
    norm.mean.push_back(static_cast<float>(mean));
    norm.stddev.push_back(static_cast<float>(std::sqrt(std::max(sq[ch] / count - mean * mean, 1e-12))));
  }
  return norm;
}

}  // namespace mpt::data
