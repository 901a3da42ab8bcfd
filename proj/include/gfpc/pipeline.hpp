#pragma once

// End-to-end stages behind the command-line tool. Each stage takes its
// inputs explicitly and writes data only to the streams it is given.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "gfpc/config.hpp"
#include "gfpc/contrast.hpp"
#include "gfpc/data.hpp"
#include "gfpc/depth.hpp"
#include "gfpc/gradfield.hpp"
#include "gfpc/metrics.hpp"
#include "gfpc/parallel.hpp"
#include "gfpc/png_io.hpp"

namespace gfpc {

namespace fs = std::filesystem;

inline std::vector<Tensor<float>> load_split_images(const std::string& root, Split split, unsigned threads = 1) {
  const auto m = load_manifest(root, split, false);
  std::vector<Tensor<float>> out(m.entries.size());
  parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = load_rgb(m.path(m.entries[i].rgb)); });
  return out;
}

inline std::vector<DepthSample> load_split_samples(const std::string& root, Split split, unsigned threads = 1) {
  const auto m = load_manifest(root, split, true);
  std::vector<DepthSample> out(m.entries.size());
  parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = load_sample(m, m.entries[i]); });
  return out;
}

/// PNG files directly inside `dir`, sorted by name.
inline std::vector<fs::path> list_pngs(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// 8-bit PNG with value round(255 G).
inline void write_field_png(const Field& g, const std::string& path) {
  PngImage img{static_cast<std::uint32_t>(g.width), static_cast<std::uint32_t>(g.height), 1, 8, {}};
  img.samples.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    img.samples[i] = static_cast<std::uint16_t>(std::lround(255.0 * std::clamp(g.values[i], 0.0, 1.0)));
  write_png(path, img);
}

/// Raw float32 little-endian, preceded by u32 height and u32 width.
inline void write_field_raw(const Field& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  detail::ByteWriter w;
  w.put(static_cast<std::uint32_t>(g.height));
  w.put(static_cast<std::uint32_t>(g.width));
  for (double v : g.values) w.put(static_cast<float>(v));
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing " + path);
}

inline Field read_field_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path);
  const auto h = r.get<std::uint32_t>(), w = r.get<std::uint32_t>();
  Field f(h, w);
  for (auto& v : f.values) v = r.get<float>();
  return f;
}

/// Gradient fields for every PNG in `in_dir`, written under the same file
/// names in `out_dir` (plus `<name>.f32` when `raw`). Returns the count.
inline std::size_t run_gradfield(const std::string& in_dir, const std::string& out_dir, const CannyParams& canny,
                                 bool raw, unsigned threads = 1) {
  canny.validate();
  const auto inputs = list_pngs(in_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const Field g = gradient_field(load_rgb(inputs[i].string()), canny);
    const fs::path out = fs::path(out_dir) / inputs[i].filename();
    write_field_png(g, out.string());
    if (raw) write_field_raw(g, fs::path(out).replace_extension(".f32").string());
  });
  return inputs.size();
}

/// Pretrains on the train split of `data` and saves the query encoder + head.
inline PretrainResult run_pretrain(const std::string& data, const std::string& out_ckpt, const RunConfig& config,
                                   std::ostream* loss_log = nullptr) {
  config.validate();
  const auto images = load_split_images(data, Split::train, config.contrast.threads);
  auto result = pretrain(images, config.encoder, config.contrast, config.canny, loss_log);
  save_pretrain_checkpoint(result.pair.query, out_ckpt);
  return result;
}

inline FinetuneResult run_finetune(const std::vector<DepthSample>& train, const RunConfig& config,
                                   std::ostream* loss_log = nullptr) {
  config.validate();
  return finetune(train, config.encoder, config.decoder, config.finetune, loss_log);
}

inline FinetuneResult run_finetune(const std::string& data, const std::string& out_ckpt, const RunConfig& config,
                                   std::ostream* loss_log = nullptr) {
  config.validate();
  auto result = run_finetune(load_split_samples(data, Split::train, config.finetune.threads), config, loss_log);
  save_depth_checkpoint(result.net, out_ckpt);
  return result;
}

/// 16-bit PNG in millimeters, clamped to [1, 65535].
inline void write_depth_png(const Field& depth, const std::string& path) {
  PngImage img{static_cast<std::uint32_t>(depth.width), static_cast<std::uint32_t>(depth.height), 1, 16, {}};
  img.samples.resize(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i)
    img.samples[i] = static_cast<std::uint16_t>(std::clamp(std::lround(depth.values[i] * 1000.0), 1L, 65535L));
  write_png(path, img);
}

inline Field run_predict(const std::string& in_png, const std::string& ckpt, const std::string& out_png,
                         const RunConfig& config) {
  config.validate();
  const auto net = load_depth_checkpoint(ckpt, config.encoder, config.decoder);
  const Field pred = predict_depth(net, load_rgb(in_png));
  write_depth_png(pred, out_png);
  return pred;
}

inline constexpr const char* kReportHeader = "delta1,delta2,delta3,rel,rms,log10";

inline void write_report_row(std::ostream& os, const MetricReport& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(9) << r.delta1 << ',' << r.delta2 << ',' << r.delta3 << ',' << r.rel << ',' << r.rms << ','
     << r.log10;
  os.flags(flags);
  os.precision(prec);
}

inline void write_report_csv(std::ostream& os, const MetricReport& r) {
  os << kReportHeader << '\n';
  write_report_row(os, r);
  os << '\n';
}

/// Human-readable summary of a report.
inline void print_report(std::ostream& os, const MetricReport& r) {
  os << std::fixed << std::setprecision(4) << "delta1 " << r.delta1 << "  delta2 " << r.delta2 << "  delta3 "
     << r.delta3 << "  rel " << r.rel << "  rms " << r.rms << "  log10 " << r.log10 << "  pixels " << r.pixels
     << '\n';
  os.unsetf(std::ios::floatfield);
  os << std::setprecision(6);
}

inline MetricReport run_eval(const std::string& data, const std::string& ckpt, const EvalProtocol& protocol,
                             const RunConfig& config) {
  config.validate();
  const auto net = load_depth_checkpoint(ckpt, config.encoder, config.decoder);
  const auto test = load_split_samples(data, Split::test, config.finetune.threads);
  return evaluate_net(net, test, protocol, config.finetune.threads);
}

struct SweepRow {
  std::string init;  // "random" or "ckpt"
  double fraction = 0;
  std::uint64_t seed = 0;
  MetricReport report;
};

inline void write_sweep_header(std::ostream& os) { os << "init,fraction,seed," << kReportHeader << '\n'; }

inline void write_sweep_row(std::ostream& os, const std::string& init, double fraction, const std::string& seed,
                            const MetricReport& r) {
  os << init << ',' << fraction << ',' << seed << ',';
  write_report_row(os, r);
  os << '\n';
}

/// Label-efficiency sweep: fine-tune + evaluate for every (init, fraction,
/// seed), then one mean row per (init, fraction) with seed column "mean".
/// `inits` holds "random" and/or a pretraining checkpoint path.
inline std::vector<SweepRow> run_sweep(const std::vector<DepthSample>& train, const std::vector<DepthSample>& test,
                                       const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                                       const std::vector<std::string>& inits, const RunConfig& config,
                                       const EvalProtocol& protocol, std::ostream* csv = nullptr) {
  if (fractions.empty() || seeds.empty() || inits.empty())
    throw InputError("sweep needs at least one fraction, seed and init mode");
  std::vector<SweepRow> rows;
  if (csv) write_sweep_header(*csv);
  for (const auto& init : inits) {
    const std::string label = init == "random" ? "random" : "ckpt";
    for (double f : fractions) {
      std::vector<MetricReport> reports;
      for (auto seed : seeds) {
        RunConfig c = config;
        c.finetune.init = init;
        c.finetune.fraction = f;
        c.finetune.seed = seed;
        const auto ft = run_finetune(train, c);
        const auto r = evaluate_net(ft.net, test, protocol, c.finetune.threads);
        rows.push_back({label, f, seed, r});
        reports.push_back(r);
        if (csv) write_sweep_row(*csv, label, f, std::to_string(seed), r), csv->flush();
      }
      MetricReport mean;
      for (const auto& r : reports) {
        mean.delta1 += r.delta1;
        mean.delta2 += r.delta2;
        mean.delta3 += r.delta3;
        mean.rel += r.rel;
        mean.rms += r.rms;
        mean.log10 += r.log10;
        mean.pixels += r.pixels;
      }
      const double k = static_cast<double>(reports.size());
      mean.delta1 /= k;
      mean.delta2 /= k;
      mean.delta3 /= k;
      mean.rel /= k;
      mean.rms /= k;
      mean.log10 /= k;
      if (csv) write_sweep_row(*csv, label, f, "mean", mean);
    }
  }
  return rows;
}

}  // namespace gfpc
