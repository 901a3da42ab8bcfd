#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gfpc/checkpoint.hpp"
#include "gfpc/data.hpp"
#include "oracles.hpp"

using namespace gfpc;
namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::trunc) << text;
}

void write_rgb(const std::string& path, std::uint32_t w, std::uint32_t h, std::uint16_t v = 128) {
  write_png(path, PngImage{w, h, 3, 8, std::vector<std::uint16_t>(std::size_t{3} * w * h, v)});
}

void write_depth(const std::string& path, std::uint32_t w, std::uint32_t h, std::vector<std::uint16_t> mm) {
  write_png(path, PngImage{w, h, 1, 16, std::move(mm)});
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Manifest, EmptyCsvIsEmptyManifest) {
  oracle::TempDir dir("data");
  write_text(dir / "manifest.csv", "");
  EXPECT_TRUE(load_manifest(dir.path.string(), Split::train, false).entries.empty());
}

TEST(Manifest, RowsComeBackInLexicographicOrder) {
  oracle::TempDir dir("data");
  for (const char* n : {"b.png", "c.png", "a.png"}) write_rgb(dir / n, 4, 4);
  write_text(dir / "manifest.csv", "rgb\nc.png\na.png\nb.png\n");
  const auto m = load_manifest(dir.path.string(), Split::train, false);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].rgb, "a.png");
  EXPECT_EQ(m.entries[1].rgb, "b.png");
  EXPECT_EQ(m.entries[2].rgb, "c.png");
}

TEST(Manifest, ErrorsNameTheRow) {
  oracle::TempDir dir("data");
  write_rgb(dir / "a.png", 4, 4);
  write_depth(dir / "d.png", 4, 4, std::vector<std::uint16_t>(16, 1000));
  auto expect_row_error = [&](const std::string& csv, bool labeled, const std::string& needle) {
    write_text(dir / "manifest.csv", csv);
    try {
      load_manifest(dir.path.string(), Split::train, labeled);
      ADD_FAILURE() << "no error for " << csv;
    } catch (const IngestionError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_row_error("rgb,depth\na.png,d.png\na.png\n", true, "row 3");
  expect_row_error("rgb,depth\na.png,missing.png\n", false, "row 2");
  expect_row_error("rgb,depth\na.png,d.png,extra\n", false, "row 2");
  expect_row_error("rgb,depth,split\na.png,d.png,val\n", false, "row 2");
  expect_row_error("path\na.png\n", false, "row 1");
  EXPECT_THROW(load_manifest((dir / "nowhere"), Split::train, false), IngestionError);
}

TEST(Manifest, SplitColumnFilters) {
  oracle::TempDir dir("data");
  write_rgb(dir / "a.png", 4, 4);
  write_rgb(dir / "b.png", 4, 4);
  write_text(dir / "manifest.csv", "rgb,depth,split\na.png,,train\nb.png,,test\n");
  EXPECT_EQ(load_manifest(dir.path.string(), Split::train, false).entries.size(), 1u);
  EXPECT_EQ(load_manifest(dir.path.string(), Split::test, false).entries[0].rgb, "b.png");
}

TEST(LoadSample, UnitConversionMaskAndAreaPooling) {
  oracle::TempDir dir("data");
  write_rgb(dir / "a.png", 4, 2, 255);
  // Full-resolution depth: left 2x2 block {1500, 1500, 0, 2500}, right block all zero.
  write_depth(dir / "d.png", 4, 2, {1500, 1500, 0, 0, 0, 2500, 0, 0});
  write_text(dir / "manifest.csv", "rgb,depth\na.png,d.png\n");
  const auto m = load_manifest(dir.path.string(), Split::train, true);
  const auto s = load_sample(m, m.entries[0]);
  EXPECT_EQ(s.rgb.shape(), (Shape{3, 2, 4}));
  for (float v : s.rgb.values()) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(s.depth.shape(), (Shape{1, 2}));
  EXPECT_FLOAT_EQ(s.depth[0], static_cast<float>((1500.0 + 1500.0 + 2500.0) / 3.0 / 1000.0));
  EXPECT_EQ(s.mask[0], 1.0f);
  EXPECT_EQ(s.mask[1], 0.0f);
}

TEST(LoadSample, HalfResolutionDepthIsUsedDirectly) {
  oracle::TempDir dir("data");
  write_rgb(dir / "a.png", 4, 4);
  write_depth(dir / "d.png", 2, 2, {1500, 0, 65535, 1});
  write_text(dir / "manifest.csv", "rgb,depth\na.png,d.png\n");
  const auto m = load_manifest(dir.path.string(), Split::train, true);
  const auto s = load_sample(m, m.entries[0]);
  EXPECT_FLOAT_EQ(s.depth[0], 1.5f);
  EXPECT_EQ(s.mask[1], 0.0f);
  EXPECT_FLOAT_EQ(s.depth[2], 65.535f);
  EXPECT_FLOAT_EQ(s.depth[3], 0.001f);
  for (std::size_t i = 0; i < s.depth.size(); ++i) {
    EXPECT_TRUE(std::isfinite(s.depth[i]));
    if (s.mask[i] > 0) {
      EXPECT_GT(s.depth[i], 0.0f);
    }
  }
}

TEST(LoadSample, FullSizeShapeContract) {
  oracle::TempDir dir("data");
  write_rgb(dir / "a.png", 640, 480);
  write_depth(dir / "d.png", 640, 480, std::vector<std::uint16_t>(640 * 480, 2000));
  write_text(dir / "manifest.csv", "rgb,depth\na.png,d.png\n");
  const auto m = load_manifest(dir.path.string(), Split::train, true);
  EXPECT_EQ(load_sample(m, m.entries[0]).depth.shape(), (Shape{240, 320}));
}

TEST(LoadSample, FormatErrors) {
  oracle::TempDir dir("data");
  write_rgb(dir / "a.png", 4, 4);
  write_depth(dir / "odd.png", 3, 3, std::vector<std::uint16_t>(9, 1));
  write_png(dir / "eight.png", PngImage{4, 4, 1, 8, std::vector<std::uint16_t>(16, 1)});
  for (const char* d : {"odd.png", "eight.png"}) {
    write_text(dir / "manifest.csv", std::string("rgb,depth\na.png,") + d + "\n");
    const auto m = load_manifest(dir.path.string(), Split::train, true);
    EXPECT_THROW(load_sample(m, m.entries[0]), FormatError) << d;
  }
  write_text(dir / "manifest.csv", "rgb,depth\nodd.png,\n");
  const auto m = load_manifest(dir.path.string(), Split::train, false);
  EXPECT_THROW(load_sample(m, m.entries[0]), FormatError);
}

TEST(Subset, SizesIdentityAndDeterminism) {
  EXPECT_EQ(subset_size(10, 0.5), 5u);
  EXPECT_EQ(subset_size(100, 0.07), 7u);
  EXPECT_EQ(subset_size(10, 0.01), 1u);
  EXPECT_EQ(subset_indices(6, 1.0, 3), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(subset_indices(50, 0.2, 9), subset_indices(50, 0.2, 9));
  EXPECT_NE(subset_indices(50, 0.2, 9), subset_indices(50, 0.2, 10));
  EXPECT_THROW(subset_indices(10, 0.0, 0), InputError);
  EXPECT_THROW(subset_indices(0, 0.5, 0), InputError);
}

TEST(Subset, NestedAcrossFractions) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    std::vector<std::set<std::size_t>> sets;
    for (double f : {0.01, 0.03, 0.05, 0.10}) {
      const auto idx = subset_indices(1000, f, seed);
      EXPECT_EQ(idx.size(), subset_size(1000, f));
      sets.emplace_back(idx.begin(), idx.end());
    }
    for (std::size_t i = 0; i + 1 < sets.size(); ++i)
      EXPECT_TRUE(std::includes(sets[i + 1].begin(), sets[i + 1].end(), sets[i].begin(), sets[i].end()));
  }
}

TEST(Synthetic, DeterministicRangeAndOcclusion) {
  SyntheticSceneParams p;
  p.width = 48;
  p.height = 32;
  p.seed = 5;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto s = render_scene(p, i);
    EXPECT_EQ(s.rgb, render_scene(p, i).rgb);
    for (float d : s.depth.values()) {
      EXPECT_GE(d, p.depth_min - 1e-6);
      EXPECT_LE(d, p.depth_max + 1e-6);
    }
    for (float v : s.rgb.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    // Paint order is far to near, and each pixel shows its nearest covering box.
    for (std::size_t b = 1; b < s.boxes.size(); ++b) EXPECT_GE(s.boxes[b - 1].depth, s.boxes[b].depth);
    for (long r = 0; r < static_cast<long>(p.height); ++r)
      for (long c = 0; c < static_cast<long>(p.width); ++c) {
        const SceneBox* top = nullptr;
        for (const auto& b : s.boxes)
          if (r >= b.top && r <= b.bottom && c >= b.left && c <= b.right) top = &b;
        if (top) {
          EXPECT_NEAR(s.depth[static_cast<std::size_t>(r) * p.width + static_cast<std::size_t>(c)],
                      std::clamp(top->depth, p.depth_min, p.depth_max), 1e-3);
        }
      }
  }
}

TEST(Synthetic, RegenerationIsByteIdentical) {
  oracle::TempDir a("synth"), b("synth");
  SyntheticSceneParams p;
  p.width = p.height = 16;
  p.count = 4;
  p.test_count = 1;
  p.seed = 3;
  generate_synthetic(p, a.path.string());
  generate_synthetic(p, b.path.string());
  for (const char* f : {"manifest.csv", "rgb/000000.png", "depth/000003.png"})
    EXPECT_EQ(read_bytes(a / f), read_bytes(b / f)) << f;
  EXPECT_EQ(load_manifest(a.path.string(), Split::train, true).entries.size(), 3u);
  EXPECT_EQ(load_manifest(a.path.string(), Split::test, true).entries.size(), 1u);
  p.seed = 4;
  generate_synthetic(p, b.path.string());
  EXPECT_NE(read_bytes(a / "rgb/000000.png"), read_bytes(b / "rgb/000000.png"));
}

TEST(Synthetic, ParameterValidation) {
  SyntheticSceneParams p;
  p.depth_min = 5;
  p.depth_max = 2;
  EXPECT_THROW(p.validate(), ConfigError);
  p = SyntheticSceneParams{};
  p.width = 15;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitwiseEqual) {
  oracle::TempDir dir("ckpt");
  std::mt19937_64 rng(1);
  ParameterSet<float> p{{"a.weight", oracle::random_tensor<float>({3, 2, 3, 3}, rng)},
                        {"a.bias", Tensor<float>::vector({-0.0f, 1e-38f, 3.4e38f})}};
  save_checkpoint(p, 0xabcdef, dir / "x.ckpt");
  const auto ck = load_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(ck.digest, 0xabcdefu);
  EXPECT_EQ(params_digest(ck.params), params_digest(p));
  EXPECT_TRUE(std::signbit(ck.params.at("a.bias")[0]));
  EXPECT_EQ(std::string(read_bytes(dir / "x.ckpt").data(), 5), "GFPC1");
}

TEST(Checkpoint, TruncationAndCorruptionAreCheckpointErrors) {
  oracle::TempDir dir("ckpt");
  ParameterSet<float> p{{"w", Tensor<float>::vector({1, 2, 3, 4})}};
  save_checkpoint(p, 7, dir / "x.ckpt");
  const auto bytes = read_bytes(dir / "x.ckpt");
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() - 1}) {
    std::ofstream(dir / "t.ckpt", std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(cut));
    EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), CheckpointError) << cut;
  }
  auto bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "m.ckpt", std::ios::binary | std::ios::trunc).write(bad.data(), static_cast<std::streamsize>(bad.size()));
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST(Checkpoint, DigestMismatchNamesBothDigests) {
  oracle::TempDir dir("ckpt");
  save_checkpoint({{"w", Tensor<float>::vector({1})}}, 0x1111, dir / "x.ckpt");
  try {
    load_checkpoint(dir / "x.ckpt", 0x2222);
    ADD_FAILURE() << "expected a digest error";
  } catch (const DigestError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(digest_hex(0x1111)), std::string::npos) << msg;
    EXPECT_NE(msg.find(digest_hex(0x2222)), std::string::npos) << msg;
  }
}
