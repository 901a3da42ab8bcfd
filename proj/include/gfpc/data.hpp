#pragma once

// On-disk dataset layout:
//
//   root/manifest.csv   header "rgb,depth[,split]", paths relative to root
//   root/rgb/*.png      8-bit RGB
//   root/depth/*.png    16-bit grayscale, millimeters, 0 = no reading
//
// Depth maps are stored either at the RGB resolution or at half of it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gfpc/errors.hpp"
#include "gfpc/png_io.hpp"
#include "gfpc/tensor.hpp"

namespace gfpc {

namespace fs = std::filesystem;

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

struct ManifestEntry {
  std::string rgb;                   // path as written in the manifest
  std::optional<std::string> depth;  // same
};

struct DatasetManifest {
  std::string root;
  Split split = Split::train;
  std::vector<ManifestEntry> entries;

  std::string path(const std::string& rel) const { return (fs::path(root) / rel).string(); }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Reads root/manifest.csv. Rows carrying a split column are filtered by
/// `split`; rows without one belong to every split. With `labeled`, every
/// row must name a depth map. Entries come back sorted by rgb path.
inline DatasetManifest load_manifest(const std::string& root, Split split, bool labeled) {
  const fs::path file = fs::path(root) / "manifest.csv";
  std::ifstream in(file);
  if (!in) throw IngestionError("missing manifest " + file.string());
  DatasetManifest m{root, split, {}};
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv(line);
    if (header.empty()) {
      header = cells;
      if (header.empty() || header[0] != "rgb" || header.size() > 3 || (header.size() >= 2 && header[1] != "depth") ||
          (header.size() == 3 && header[2] != "split"))
        throw IngestionError(file.string() + " row " + std::to_string(row) +
                             ": header must be rgb[,depth[,split]]");
      continue;
    }
    if (cells.size() > header.size() || cells.empty() || cells[0].empty())
      throw IngestionError(file.string() + " row " + std::to_string(row) + ": malformed row '" + line + "'");
    if (cells.size() == 3 && !cells[2].empty() && cells[2] != "train" && cells[2] != "test")
      throw IngestionError(file.string() + " row " + std::to_string(row) + ": unknown split '" + cells[2] + "'");
    if (cells.size() == 3 && !cells[2].empty() && cells[2] != split_name(split)) continue;
    ManifestEntry e{cells[0], std::nullopt};
    if (cells.size() >= 2 && !cells[1].empty()) e.depth = cells[1];
    if (labeled && !e.depth)
      throw IngestionError(file.string() + " row " + std::to_string(row) + ": labeled split needs a depth path");
    if (!fs::exists(m.path(e.rgb)))
      throw IngestionError(file.string() + " row " + std::to_string(row) + ": missing file " + e.rgb);
    if (e.depth && !fs::exists(m.path(*e.depth)))
      throw IngestionError(file.string() + " row " + std::to_string(row) + ": missing file " + *e.depth);
    m.entries.push_back(std::move(e));
  }
  std::stable_sort(m.entries.begin(), m.entries.end(),
                   [](const ManifestEntry& a, const ManifestEntry& b) { return a.rgb < b.rgb; });
  return m;
}

/// rgb [3,h,w] in [0,1]; depth and mask [h/2,w/2], depth in meters.
struct DepthSample {
  Tensor<float> rgb;
  Tensor<float> depth;
  Tensor<float> mask;
};

inline Tensor<float> load_rgb(const std::string& path) {
  const PngImage png = read_png(path);
  if (png.bit_depth != 8) throw FormatError(path + ": rgb must be 8-bit, found " + std::to_string(png.bit_depth));
  if (png.channels != 3) throw FormatError(path + ": rgb must have 3 channels");
  Tensor<float> rgb({3, png.height, png.width});
  for (std::size_t r = 0; r < png.height; ++r)
    for (std::size_t c = 0; c < png.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) rgb.at(ch, r, c) = static_cast<float>(png.at(r, c, ch)) / 255.0f;
  return rgb;
}

inline DepthSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  DepthSample s;
  s.rgb = load_rgb(manifest.path(entry.rgb));
  if (!entry.depth) return s;
  const std::size_t h = s.rgb.dim(1), w = s.rgb.dim(2);
  const std::string dpath = manifest.path(*entry.depth);
  const PngImage d = read_png(dpath);
  if (d.bit_depth != 16 || d.channels != 1)
    throw FormatError(dpath + ": depth must be 16-bit grayscale");
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw FormatError(manifest.path(entry.rgb) + ": image too small");
  s.depth = Tensor<float>({oh, ow});
  s.mask = Tensor<float>({oh, ow});
  if (d.height == h && d.width == w && h % 2 == 0 && w % 2 == 0) {
    // Area pooling over valid readings only.
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double sum = 0;
        int n = 0;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const auto raw = d.at(2 * r + a, 2 * c + b);
            if (raw > 0) {
              sum += raw;
              ++n;
            }
          }
        if (n > 0) {
          s.depth[r * ow + c] = static_cast<float>(sum / n / 1000.0);
          s.mask[r * ow + c] = 1.0f;
        }
      }
  } else if (d.height == oh && d.width == ow) {
    for (std::size_t i = 0; i < oh * ow; ++i)
      if (d.samples[i] > 0) {
        s.depth[i] = static_cast<float>(d.samples[i] / 1000.0);
        s.mask[i] = 1.0f;
      }
  } else {
    throw FormatError(dpath + ": depth " + std::to_string(d.width) + "x" + std::to_string(d.height) +
                      " is neither the rgb size nor half of it");
  }
  return s;
}

/// Number of entries kept for a label fraction: ceil(fraction * n).
inline std::size_t subset_size(std::size_t n, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw InputError("label fraction must lie in (0,1]");
  // Slack for products like 0.07 * 100 = 7.000000000000001.
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

/// Indices of a seeded subset. All fractions draw a prefix of the same
/// shuffle, so smaller subsets are contained in larger ones. Returned in
/// ascending order.
inline std::vector<std::size_t> subset_indices(std::size_t n, double fraction, std::uint64_t seed) {
  const std::size_t k = subset_size(n, fraction);
  if (k == 0) throw InputError("label fraction selects no samples out of " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline DatasetManifest sample_subset(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  DatasetManifest out{manifest.root, manifest.split, {}};
  for (auto i : subset_indices(manifest.entries.size(), fraction, seed)) out.entries.push_back(manifest.entries[i]);
  return out;
}

struct SyntheticSceneParams {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t count = 64;
  std::size_t test_count = 8;  // the last `test_count` scenes form the test split
  std::size_t boxes_min = 2;
  std::size_t boxes_max = 5;
  double depth_min = 1.0;
  double depth_max = 10.0;
  double noise = 0.04;
  std::uint64_t seed = 0;

  void validate() const {
    if (width < 4 || height < 4 || width % 2 || height % 2) throw ConfigError("synthetic image size must be even and >= 4");
    if (count == 0) throw ConfigError("synthetic dataset needs at least one scene");
    if (test_count > count) throw ConfigError("test count exceeds scene count");
    if (boxes_min > boxes_max) throw ConfigError("boxes_min exceeds boxes_max");
    if (!(depth_min > 0) || !(depth_min < depth_max)) throw ConfigError("depth range must satisfy 0 < min < max");
    if (depth_max > 65.535) throw ConfigError("depth_max exceeds the 16-bit millimeter range");
    if (!(noise >= 0)) throw ConfigError("noise amplitude must be non-negative");
  }
};

/// Inclusive pixel rectangle of a box at a single depth.
struct SceneBox {
  double depth;
  long top, left, bottom, right;
  double tint[3];
  double stripe;
};

struct SyntheticScene {
  Tensor<float> rgb;    // [3,h,w]
  Tensor<float> depth;  // [h,w], meters
  std::vector<SceneBox> boxes;  // in paint order, far to near
};

/// One scene: a floor-like background plane receding toward the top of the
/// frame, with fronto-parallel textured boxes standing on it. Box size shrinks
/// with depth and shading darkens with depth. Boxes are painted far to near.
inline SyntheticScene render_scene(const SyntheticSceneParams& p, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t h = p.height, w = p.width;
  const double span = p.depth_max - p.depth_min;
  auto shade = [&](double d) { return 0.15 + 0.8 * (p.depth_max - d) / span; };

  SyntheticScene s{Tensor<float>({3, h, w}), Tensor<float>({h, w}), {}};
  std::vector<double> rgb(3 * h * w), depth(h * w);
  const double bg_tint[3] = {0.6 + 0.4 * unit(rng), 0.6 + 0.4 * unit(rng), 0.6 + 0.4 * unit(rng)};
  const double bg_freq = 0.5 + unit(rng);
  for (std::size_t r = 0; r < h; ++r) {
    const double d = p.depth_max - span * static_cast<double>(r) / static_cast<double>(h - 1);
    for (std::size_t c = 0; c < w; ++c) {
      depth[r * w + c] = d;
      const double tex = 0.5 * p.noise * std::sin(bg_freq * static_cast<double>(c) + 0.3 * static_cast<double>(r));
      for (std::size_t ch = 0; ch < 3; ++ch) rgb[(ch * h + r) * w + c] = shade(d) * bg_tint[ch] + tex;
    }
  }

  const std::size_t nboxes =
      p.boxes_min + static_cast<std::size_t>(unit(rng) * static_cast<double>(p.boxes_max - p.boxes_min + 1));
  std::vector<SceneBox> boxes;
  for (std::size_t i = 0; i < std::min(nboxes, p.boxes_max); ++i) {
    SceneBox b{};
    b.depth = p.depth_min + 0.7 * span * unit(rng);
    // Stand on the floor row whose background depth equals the box depth.
    const double floor_row = (p.depth_max - b.depth) / span * static_cast<double>(h - 1);
    const double scale = static_cast<double>(h) * p.depth_min / b.depth;
    const double bh = std::clamp(scale * (0.5 + 0.7 * unit(rng)), 3.0, 0.9 * static_cast<double>(h));
    const double bw = std::clamp(scale * (0.4 + 0.8 * unit(rng)), 3.0, 0.9 * static_cast<double>(w));
    b.bottom = static_cast<long>(std::lround(floor_row));
    b.top = b.bottom - static_cast<long>(std::lround(bh));
    b.left = static_cast<long>(std::lround(unit(rng) * (static_cast<double>(w) - bw)));
    b.right = b.left + static_cast<long>(std::lround(bw));
    for (auto& t : b.tint) t = 0.4 + 0.6 * unit(rng);
    b.stripe = 0.3 + 1.2 * unit(rng);
    boxes.push_back(b);
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const SceneBox& a, const SceneBox& b) { return a.depth > b.depth; });
  for (const auto& b : boxes)
    for (long r = std::max(0L, b.top); r <= std::min<long>(static_cast<long>(h) - 1, b.bottom); ++r)
      for (long c = std::max(0L, b.left); c <= std::min<long>(static_cast<long>(w) - 1, b.right); ++c) {
        const auto rr = static_cast<std::size_t>(r), cc = static_cast<std::size_t>(c);
        depth[rr * w + cc] = b.depth;
        const double tex = p.noise * std::sin(b.stripe * static_cast<double>(c - b.left));
        for (std::size_t ch = 0; ch < 3; ++ch) rgb[(ch * h + rr) * w + cc] = shade(b.depth) * b.tint[ch] + tex;
      }

  std::uniform_real_distribution<double> jitter(-p.noise, p.noise);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const double v = std::clamp(rgb[i] + jitter(rng), 0.0, 1.0);
    s.rgb[i] = static_cast<float>(std::round(v * 255.0) / 255.0);
  }
  for (std::size_t i = 0; i < depth.size(); ++i)
    s.depth[i] = static_cast<float>(std::round(std::clamp(depth[i], p.depth_min, p.depth_max) * 1000.0) / 1000.0);
  s.boxes = std::move(boxes);
  return s;
}

inline std::string scene_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

/// Writes `count` scenes plus manifest.csv under `out_dir`.
inline void generate_synthetic(const SyntheticSceneParams& p, const std::string& out_dir) {
  p.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "rgb", ec);
  if (!ec) fs::create_directories(fs::path(out_dir) / "depth", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (fs::path(out_dir) / "manifest.csv").string());
  manifest << "rgb,depth,split\n";
  for (std::size_t i = 0; i < p.count; ++i) {
    const auto scene = render_scene(p, i);
    PngImage rgb{static_cast<std::uint32_t>(p.width), static_cast<std::uint32_t>(p.height), 3, 8, {}};
    rgb.samples.resize(3 * p.width * p.height);
    for (std::size_t r = 0; r < p.height; ++r)
      for (std::size_t c = 0; c < p.width; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch)
          rgb.samples[(r * p.width + c) * 3 + ch] =
              static_cast<std::uint16_t>(std::lround(scene.rgb.at(ch, r, c) * 255.0f));
    PngImage dep{static_cast<std::uint32_t>(p.width), static_cast<std::uint32_t>(p.height), 1, 16, {}};
    dep.samples.resize(p.width * p.height);
    for (std::size_t j = 0; j < dep.samples.size(); ++j)
      dep.samples[j] = static_cast<std::uint16_t>(std::lround(scene.depth[j] * 1000.0f));
    const std::string name = scene_name(i);
    write_png((fs::path(out_dir) / "rgb" / name).string(), rgb);
    write_png((fs::path(out_dir) / "depth" / name).string(), dep);
    manifest << "rgb/" << name << ",depth/" << name << ',' << (i + p.test_count >= p.count ? "test" : "train") << '\n';
  }
  if (!manifest.flush()) throw IoError("failed writing manifest in " + out_dir);
}

}  // namespace gfpc
