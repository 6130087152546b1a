#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "mpt/data.hpp"
#include "mpt/errors.hpp"
#include "support.hpp"

using namespace mpt;
using namespace mpt::data;

namespace {

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols, std::uint8_t base) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x803);
  put_be32(b, count);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::uint32_t i = 0; i < count * rows * cols; ++i) b.push_back(static_cast<std::uint8_t>(base + i));
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x801);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

template <class F>
std::uint64_t format_offset(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("IDX pair: counts, shape and normalization from the train split") {
    const auto dir = mpt::testing::scratch_dir("idx");
    write_bytes(dir / "train-images-idx3-ubyte", idx_images(3, 2, 2, 0));
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels({0, 9, 4}));
    write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(2, 2, 2, 200));
    write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels({1, 2}));
    const auto p = load_mnist_idx(dir);
    CHECK(p.train.size() == 3);
    CHECK(p.test.size() == 2);
    CHECK(p.train.sample_shape == Shape{1, 2, 2});
    CHECK(p.train.labels == std::vector<std::uint8_t>{0, 9, 4});
    // Train pixels are 0..11.
    const double mean = 5.5 / 255.0;
    CHECK(p.train.norm.mean[0] == doctest::Approx(mean));
    CHECK(p.test.norm.mean == p.train.norm.mean);
    CHECK(p.test.norm.stddev == p.train.norm.stddev);
    const auto x = p.train.all_inputs();
    CHECK(x.shape() == Shape{3, 1, 2, 2});
    CHECK(x[5] == doctest::Approx((5.0 / 255.0 - mean) / p.train.norm.stddev[0]).epsilon(1e-5));
  }

  TEST_CASE("IDX errors carry byte offsets") {
    const auto dir = mpt::testing::scratch_dir("idx-bad");
    auto img = idx_images(2, 3, 3, 0);
    img[3] = 0x04;
    write_bytes(dir / "bad-magic", img);
    std::int64_t r = 0, c = 0;
    CHECK(format_offset([&] { read_idx_images(dir / "bad-magic", r, c); }) == 0);

    img = idx_images(2, 3, 3, 0);
    img.resize(img.size() - 4);
    write_bytes(dir / "short", img);
    try {
      read_idx_images(dir / "short", r, c);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
      CHECK(e.offset() == img.size());
    }

    write_bytes(dir / "labels", idx_labels({3, 10, 1}));
    CHECK(format_offset([&] { read_idx_labels(dir / "labels"); }) == 9);
    CHECK_THROWS_AS(read_idx_labels(dir / "missing"), IoError);
  }

  TEST_CASE("CIFAR record: label byte then channel-planar pixels") {
    const auto dir = mpt::testing::scratch_dir("cifar");
    std::vector<std::uint8_t> rec(2 * 3073);
    rec[0] = 7;
    for (int i = 0; i < 3072; ++i) rec[1 + i] = static_cast<std::uint8_t>(i % 251);
    rec[3073] = 2;
    write_bytes(dir / "b.bin", rec);
    const auto d = read_cifar10_file(dir / "b.bin");
    CHECK(d.size() == 2);
    CHECK(d.sample_shape == Shape{3, 32, 32});
    CHECK(d.labels == std::vector<std::uint8_t>{7, 2});
    // Green channel, row 1, column 2 of the first image.
    CHECK(d.pixels[1024 + 32 + 2] == static_cast<std::uint8_t>((1024 + 32 + 2) % 251));

    rec.push_back(0);
    write_bytes(dir / "odd.bin", rec);
    CHECK_THROWS_AS(read_cifar10_file(dir / "odd.bin"), FormatError);
    rec.pop_back();
    rec[3073] = 10;
    write_bytes(dir / "label.bin", rec);
    CHECK(format_offset([&] { read_cifar10_file(dir / "label.bin"); }) == 3073);
  }

  TEST_CASE("augmentation: deterministic, train only, and off at eval") {
    Dataset d;
    d.sample_shape = {1, 6, 6};
    d.num_classes = 2;
    d.labels = {0, 1};
    for (int i = 0; i < 72; ++i) d.pixels.push_back(static_cast<std::uint8_t>(i * 3));
    d.augment = true;
    const std::vector<std::int64_t> idx{0, 1};
    Tensor a, b, plain;
    std::vector<int> y;
    d.gather(idx, a, y, 5);
    d.gather(idx, b, y, 5);
    CHECK(a.storage() == b.storage());
    d.split = Split::Test;
    d.gather(idx, plain, y, 5);
    CHECK(plain.storage() == d.all_inputs().storage());
    CHECK(plain[7] == doctest::Approx(21.0 / 255.0));
  }

  TEST_CASE("two moons: sizes, labels and determinism") {
    const auto e = toy_two_moons(0, 0.1, 1);
    CHECK(e.size() == 0);
    const auto a = toy_two_moons(50, 0.1, 3), b = toy_two_moons(50, 0.1, 3), c = toy_two_moons(50, 0.1, 4);
    CHECK(a.features == b.features);
    CHECK(a.features != c.features);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 25);
    CHECK_NOTHROW(a.validate());
    const auto clean = toy_two_moons(20, 0.0, 1);
    for (std::size_t i = 0; i < 20; i += 2) {
      const double x = clean.features[2 * i], y = clean.features[2 * i + 1];
      CHECK(x * x + y * y == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("batch order is a permutation and a pure function of (n, seed, epoch)") {
    const auto a = batch_order(100, 1, 0), b = batch_order(100, 1, 0);
    CHECK(a == b);
    CHECK(a != batch_order(100, 1, 1));
    CHECK(a != batch_order(100, 2, 0));
    auto s = a;
    std::sort(s.begin(), s.end());
    for (std::int64_t i = 0; i < 100; ++i) CHECK(s[static_cast<std::size_t>(i)] == i);
    CHECK(batch_order(5, 1, 0, false) == std::vector<std::int64_t>{0, 1, 2, 3, 4});
    CHECK(batch_order(0, 1, 0).empty());
  }

  TEST_CASE("truncate and validate") {
    auto d = toy_two_moons(10, 0.1, 1);
    d.truncate(4);
    CHECK(d.size() == 4);
    CHECK(d.features.size() == 8);
    d.labels[2] = 5;
    CHECK(format_offset([&] { d.validate(); }) == 2);
  }
}
