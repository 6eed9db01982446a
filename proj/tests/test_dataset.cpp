// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "himapper/dataset.hpp"
#include "himapper/errors.hpp"
#include "test_util.hpp"

namespace himapper {
namespace {

SyntheticSpec small_spec(std::size_t classes = 2, std::size_t per_class = 10) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.per_class = per_class;
  s.image_size = 16;
  return s;
}

TEST(GenerateDataset, ClassesAreBalanced) {
  auto d = generate_dataset(small_spec(2, 10), 1);
  ASSERT_EQ(d.size(), 20u);
  std::size_t zeros = 0;
  for (auto l : d.labels) zeros += l == 0 ? 1 : 0;
  EXPECT_EQ(zeros, 10u);
  EXPECT_EQ(d.pixels.size(), 20u * 3 * 16 * 16);
  EXPECT_EQ(d.masks.size(), 20u * 16 * 16);
}

TEST(GenerateDataset, SameSeedIsByteIdentical) {
  auto a = generate_dataset(small_spec(), 5), b = generate_dataset(small_spec(), 5);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.masks, b.masks);
  EXPECT_EQ(a.labels, b.labels);
  auto c = generate_dataset(small_spec(), 6);
  EXPECT_NE(a.pixels, c.pixels);
}

// Bounding box of the pixels of one mask value; empty when absent.
struct Box {
  std::size_t y0 = SIZE_MAX, x0 = SIZE_MAX, y1 = 0, x1 = 0, count = 0;
  std::size_t area() const { return count == 0 ? 0 : (y1 - y0 + 1) * (x1 - x0 + 1); }
};

TEST(GenerateDataset, PartMasksTileTheObjectWithoutOverlap) {
  for (std::size_t size : {16u, 32u}) {
    auto spec = small_spec(10, 5);
    spec.image_size = size;
    auto d = generate_dataset(spec, 9);
    const std::size_t cell = size / 4;
    for (std::size_t i = 0; i < d.size(); ++i) {
      auto m = d.mask(i);
      std::array<Box, 5> boxes;
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const std::size_t v = m[y * size + x];
          ASSERT_LE(v, 4u);
          Box& b = boxes[v];
          b.y0 = std::min(b.y0, y), b.x0 = std::min(b.x0, x);
          b.y1 = std::max(b.y1, y), b.x1 = std::max(b.x1, x);
          ++b.count;
        }
      }
      // Each part is a solid cell x cell square...
      for (std::size_t k = 1; k <= 4; ++k) {
        EXPECT_EQ(boxes[k].count, cell * cell) << "image " << i << " part " << k;
        EXPECT_EQ(boxes[k].area(), cell * cell) << "image " << i << " part " << k;
      }
      // ...the four squares form a 2x2 block: left column parts 1 (top), 2
      // (bottom), right column parts 3, 4.
      const std::size_t oy = boxes[1].y0, ox = boxes[1].x0;
      EXPECT_EQ(boxes[2].y0, oy + cell);
      EXPECT_EQ(boxes[2].x0, ox);
      EXPECT_EQ(boxes[3].y0, oy);
      EXPECT_EQ(boxes[3].x0, ox + cell);
      EXPECT_EQ(boxes[4].y0, oy + cell);
      EXPECT_EQ(boxes[4].x0, ox + cell);
      EXPECT_EQ(boxes[0].count, size * size - 4 * cell * cell);
    }
  }
}

// Colour index whose RGB direction best matches the mean of a region.
std::size_t nearest_colour(const std::array<double, 3>& rgb) {
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const auto ref = part_colour(c);
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t k = 0; k < 3; ++k) dot += rgb[k] * ref[k], n1 += rgb[k] * rgb[k], n2 += ref[k] * ref[k];
    const double cos = dot / std::sqrt(n1 * n2);
    if (cos > best_cos) best_cos = cos, best = c;
  }
  return best;
}

TEST(GenerateDataset, PartsFollowTheClassGrammar) {
  auto spec = small_spec(10, 3);
  spec.pixel_noise = 0.0;
  auto d = generate_dataset(spec, 4);
  const std::size_t n = spec.image_size;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto m = d.mask(i);
    auto px = d.raw_image(i);
    std::array<std::size_t, 5> colour{};
    for (std::size_t k = 1; k <= 4; ++k) {
      std::array<double, 3> sum{};
      for (std::size_t p = 0; p < n * n; ++p)
        if (m[p] == k)
          for (std::size_t c = 0; c < 3; ++c) sum[c] += px[c * n * n + p];
      colour[k] = nearest_colour(sum);
    }
    auto [a, b] = class_sub_objects(d.labels[i]);
    auto matches = [&](std::size_t left, std::size_t right) {
      const auto &l = sub_object(left), &r = sub_object(right);
      return colour[1] == l.top.colour && colour[2] == l.bottom.colour && colour[3] == r.top.colour &&
             colour[4] == r.bottom.colour;
    };
    EXPECT_TRUE(matches(a, b) || matches(b, a)) << "image " << i << " label " << d.labels[i];
  }
}

TEST(GenerateDataset, ClassesAreDistinctUnorderedPairs) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t c = 0; c < max_synthetic_classes(); ++c) {
    auto [a, b] = class_sub_objects(c);
    EXPECT_LT(a, b);
    EXPECT_TRUE(seen.insert({a, b}).second);
  }
  // The first ten classes use every sub-object.
  std::set<std::size_t> used;
  for (std::size_t c = 0; c < 10; ++c) used.insert(class_sub_objects(c).first), used.insert(class_sub_objects(c).second);
  EXPECT_EQ(used.size(), sub_object_count());
}

TEST(GenerateDataset, InconsistentSpecIsConfigError) {
  auto s = small_spec();
  s.num_classes = max_synthetic_classes() + 1;
  EXPECT_THROW(generate_dataset(s, 1), ConfigError);
  s = small_spec();
  s.image_size = 18;
  EXPECT_THROW(generate_dataset(s, 1), ConfigError);
  s = small_spec();
  s.per_class = 0;
  EXPECT_THROW(generate_dataset(s, 1), ConfigError);
  s = small_spec();
  s.channels = 2;
  EXPECT_THROW(generate_dataset(s, 1), ConfigError);
}

TEST(GenerateDataset, GreyscaleHasOneChannel) {
  auto s = small_spec();
  s.channels = 1;
  auto d = generate_dataset(s, 2);
  EXPECT_EQ(d.image(0).shape(), (Shape{1, 16, 16}));
}

TEST(Dataset, ImageScaling) {
  Dataset d;
  d.channels = 1;
  d.image_size = 2;
  d.num_classes = 1;
  d.labels = {0};
  d.pixels = {0, 255, 51, 128};
  Tensor t = d.image(0);
  EXPECT_EQ(t.values()[0], -2.0);
  EXPECT_EQ(t.values()[1], 2.0);
  EXPECT_NEAR(t.values()[2], (0.2 - 0.5) / 0.25, 1e-15);
  EXPECT_THROW(d.image(1), ArgumentError);
  EXPECT_THROW(d.mask(0), ArgumentError);
}

TEST(DatasetFile, RoundTripIsExact) {
  auto dir = testing::scratch_dir("dataset-roundtrip");
  auto d = generate_dataset(small_spec(3, 4), 11);
  save_dataset(d, (dir / "d.hmd").string());
  auto back = load_dataset((dir / "d.hmd").string());
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.masks, d.masks);
  EXPECT_EQ(back.num_classes, 3u);
  EXPECT_EQ(back.image_size, 16u);
}

TEST(DatasetFile, DamagedFilesAreIoErrors) {
  auto dir = testing::scratch_dir("dataset-damaged");
  EXPECT_THROW(load_dataset((dir / "missing.hmd").string()), IoError);
  {
    std::ofstream(dir / "junk.hmd") << "not a dataset";
  }
  EXPECT_THROW(load_dataset((dir / "junk.hmd").string()), IoError);
  auto d = generate_dataset(small_spec(), 1);
  save_dataset(d, (dir / "full.hmd").string());
  std::filesystem::resize_file(dir / "full.hmd", std::filesystem::file_size(dir / "full.hmd") - 10);
  EXPECT_THROW(load_dataset((dir / "full.hmd").string()), IoError);
  EXPECT_THROW(save_dataset(d, (dir / "no" / "such" / "dir.hmd").string()), IoError);
}

TEST(ImageDirectory, ReadsBinaryAndAsciiNetpbm) {
  auto root = testing::scratch_dir("ingest");
  std::filesystem::create_directories(root / "b_dogs");
  std::filesystem::create_directories(root / "a_cats");
  {
    // 2x2 binary PPM: red, green / blue, white.
    std::ofstream f(root / "a_cats" / "one.ppm", std::ios::binary);
    f << "P6\n# comment\n2 2\n255\n";
    const unsigned char px[] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255};
    f.write(reinterpret_cast<const char*>(px), sizeof px);
  }
  {
    std::ofstream f(root / "b_dogs" / "two.pgm");
    f << "P2\n2 2\n15\n0 15\n15 0\n";
  }
  std::ofstream(root / "b_dogs" / "notes.txt") << "ignored";
  auto d = load_image_directory(root.string(), 4, 3);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.num_classes, 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{0, 1}));
  EXPECT_FALSE(d.has_masks());
  auto cat = d.raw_image(0);
  // Nearest-neighbour upscale: pixel (0,0) red, (0,3) green, (3,0) blue.
  EXPECT_EQ(cat[0 * 16 + 0], 255);
  EXPECT_EQ(cat[1 * 16 + 0], 0);
  EXPECT_EQ(cat[1 * 16 + 3], 255);
  EXPECT_EQ(cat[2 * 16 + 12], 255);
  auto dog = d.raw_image(1);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(dog[c * 16 + 0], 0);
    EXPECT_EQ(dog[c * 16 + 3], 255);
  }
  auto grey = load_image_directory(root.string(), 2, 1);
  EXPECT_EQ(grey.raw_image(0)[3], 255);  // white
  EXPECT_EQ(grey.raw_image(0)[0], 85);   // red averages to a third
}

TEST(ImageDirectory, ProblemsAreReported) {
  auto root = testing::scratch_dir("ingest-bad");
  EXPECT_THROW(load_image_directory((root / "nope").string(), 4, 3), IoError);
  EXPECT_THROW(load_image_directory(root.string(), 4, 3), IoError);  // no classes
  std::filesystem::create_directories(root / "x");
  EXPECT_THROW(load_image_directory(root.string(), 4, 3), IoError);  // no images
  std::ofstream(root / "x" / "bad.ppm") << "P6\n2 2\n255\nab";
  EXPECT_THROW(load_image_directory(root.string(), 4, 3), IoError);  // truncated
  EXPECT_THROW(load_image_directory(root.string(), 4, 2), ConfigError);
}

TEST(Augment, FlipAndCropKeepPixelsOrZero) {
  Rng rng(3);
  Tensor img({2, 5, 5}, rng.normal_vector(50));
  std::set<double> source(img.values().begin(), img.values().end());
  bool saw_flip = false, saw_identity = false;
  for (int t = 0; t < 40; ++t) {
    Tensor no_crop = augment(img, rng, 0);
    bool same = true, mirrored = true;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          const double v = no_crop.values()[(c * 5 + y) * 5 + x];
          same = same && v == img.values()[(c * 5 + y) * 5 + x];
          mirrored = mirrored && v == img.values()[(c * 5 + y) * 5 + 4 - x];
        }
    EXPECT_TRUE(same || mirrored);
    saw_flip = saw_flip || (mirrored && !same);
    saw_identity = saw_identity || same;
    Tensor cropped = augment(img, rng, 2);
    EXPECT_EQ(cropped.shape(), img.shape());
    for (double v : cropped.values()) EXPECT_TRUE(v == 0.0 || source.count(v));
  }
  EXPECT_TRUE(saw_flip);
  EXPECT_TRUE(saw_identity);
}

}  // namespace
}  // namespace himapper
