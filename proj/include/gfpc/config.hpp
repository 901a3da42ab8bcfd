#pragma once

// Flat "key = value" configuration files. Blank lines and lines starting with
// '#' are ignored; unknown keys are rejected.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gfpc/contrast.hpp"
#include "gfpc/depth.hpp"
#include "gfpc/encoder.hpp"
#include "gfpc/errors.hpp"
#include "gfpc/gradfield.hpp"
#include "gfpc/metrics.hpp"

namespace gfpc {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses key=value text; duplicate keys are an error. `origin` names the
/// source in messages.
inline KeyValues parse_key_values(std::istream& in, const std::string& origin) {
  KeyValues out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + " line " + std::to_string(row) + ": expected key = value");
    std::string key = detail::trim(t.substr(0, eq)), value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + " line " + std::to_string(row) + ": empty key");
    for (const auto& [k, v] : out)
      if (k == key) throw ConfigError(origin + " line " + std::to_string(row) + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  return parse_key_values(in, path);
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

inline std::vector<std::size_t> parse_uint_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream is(v);
  std::string cell;
  while (std::getline(is, cell, ',')) out.push_back(parse_uint(key, trim(cell)));
  if (out.empty()) throw ConfigError("config key '" + key + "' needs at least one value");
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

/// Every tunable of the pipeline in one place.
struct RunConfig {
  EncoderConfig encoder;
  ContrastConfig contrast;
  CannyParams canny;
  DecoderConfig decoder{{32, 16, 8}};
  FinetuneConfig finetune;

  void validate() const {
    encoder.validate();
    contrast.validate();
    canny.validate();
    decoder.validate(encoder);
    finetune.validate();
  }
};

/// Applies key/value overrides on top of `base`. When encoder.widths is given
/// without encoder.zdim, zdim follows the last width.
inline RunConfig apply_config(RunConfig base, const KeyValues& kv) {
  using namespace detail;
  bool zdim_set = false;
  for (const auto& [k, v] : kv) {
    auto& c = base;
    if (k == "tau") c.contrast.tau = parse_double(k, v);
    else if (k == "momentum") c.contrast.momentum = parse_double(k, v);
    else if (k == "queue_size") c.contrast.queue_size = parse_uint(k, v);
    else if (k == "batch_size") c.contrast.batch_size = parse_uint(k, v);
    else if (k == "lr") c.contrast.lr = parse_double(k, v);
    else if (k == "sgd_momentum") c.contrast.sgd_momentum = parse_double(k, v);
    else if (k == "weight_decay") c.contrast.weight_decay = parse_double(k, v);
    else if (k == "epochs") c.contrast.epochs = parse_uint(k, v);
    else if (k == "steps") c.contrast.steps = parse_uint(k, v);
    else if (k == "seed") c.contrast.seed = c.finetune.seed = parse_uint(k, v);
    else if (k == "flip") c.contrast.flip = parse_bool(k, v);
    else if (k == "canny.low") c.canny.low = parse_double(k, v);
    else if (k == "canny.high") c.canny.high = parse_double(k, v);
    else if (k == "canny.sigma") c.canny.sigma = parse_double(k, v);
    else if (k == "canny.kernel_size") c.canny.kernel_size = static_cast<int>(parse_uint(k, v));
    else if (k == "encoder.widths") c.encoder.widths = parse_uint_list(k, v);
    else if (k == "encoder.blocks") c.encoder.blocks_per_stage = parse_uint(k, v);
    else if (k == "encoder.zdim") c.encoder.zdim = parse_uint(k, v), zdim_set = true;
    else if (k == "head.hidden") c.encoder.head_hidden = parse_uint(k, v);
    else if (k == "head.dim") c.encoder.head_dim = parse_uint(k, v);
    else if (k == "decoder.widths") c.decoder.widths = parse_uint_list(k, v);
    else if (k == "decoder.prior") c.decoder.depth_prior = parse_double(k, v);
    else if (k == "finetune.lr") c.finetune.lr = parse_double(k, v);
    else if (k == "finetune.batch_size") c.finetune.batch_size = parse_uint(k, v);
    else if (k == "finetune.epochs") c.finetune.epochs = parse_uint(k, v);
    else if (k == "finetune.weight_decay") c.finetune.weight_decay = parse_double(k, v);
    else if (k == "finetune.seed") c.finetune.seed = parse_uint(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  if (!zdim_set) {
    for (const auto& [k, v] : kv)
      if (k == "encoder.widths") base.encoder.zdim = base.encoder.widths.back();
  }
  return base;
}

inline RunConfig load_run_config(const std::string& path) { return apply_config(RunConfig{}, read_key_values(path)); }

/// The fully resolved configuration, one key per line, in a form that
/// apply_config accepts back.
inline std::string describe(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "tau = " << c.contrast.tau << '\n'
     << "momentum = " << c.contrast.momentum << '\n'
     << "queue_size = " << c.contrast.queue_size << '\n'
     << "batch_size = " << c.contrast.batch_size << '\n'
     << "lr = " << c.contrast.lr << '\n'
     << "sgd_momentum = " << c.contrast.sgd_momentum << '\n'
     << "weight_decay = " << c.contrast.weight_decay << '\n'
     << "epochs = " << c.contrast.epochs << '\n'
     << "steps = " << c.contrast.steps << '\n'
     << "seed = " << c.contrast.seed << '\n'
     << "flip = " << (c.contrast.flip ? "true" : "false") << '\n'
     << "canny.low = " << c.canny.low << '\n'
     << "canny.high = " << c.canny.high << '\n'
     << "canny.sigma = " << c.canny.sigma << '\n'
     << "canny.kernel_size = " << c.canny.kernel_size << '\n'
     << "encoder.widths = " << detail::join(c.encoder.widths) << '\n'
     << "encoder.blocks = " << c.encoder.blocks_per_stage << '\n'
     << "encoder.zdim = " << c.encoder.zdim << '\n'
     << "head.hidden = " << c.encoder.head_hidden << '\n'
     << "head.dim = " << c.encoder.head_dim << '\n'
     << "decoder.widths = " << detail::join(c.decoder.widths) << '\n'
     << "decoder.prior = " << c.decoder.depth_prior << '\n'
     << "finetune.lr = " << c.finetune.lr << '\n'
     << "finetune.batch_size = " << c.finetune.batch_size << '\n'
     << "finetune.epochs = " << c.finetune.epochs << '\n'
     << "finetune.weight_decay = " << c.finetune.weight_decay << '\n'
     << "finetune.seed = " << c.finetune.seed << '\n';
  return os.str();
}

/// Evaluation protocol keys: crop (none | eigen | r0,r1,c0,c1), max_depth,
/// min_depth, aggregate (pixel | image).
inline EvalProtocol apply_protocol(EvalProtocol p, const KeyValues& kv) {
  using namespace detail;
  for (const auto& [k, v] : kv) {
    if (k == "crop") {
      if (v == "none") {
        p.crop_mode = EvalProtocol::CropMode::none;
      } else if (v == "eigen") {
        p.crop_mode = EvalProtocol::CropMode::eigen;
      } else {
        const auto r = parse_uint_list(k, v);
        if (r.size() != 4) throw ConfigError("crop needs none, eigen or row_begin,row_end,col_begin,col_end");
        p.crop_mode = EvalProtocol::CropMode::explicit_rect;
        p.crop = {r[0], r[1], r[2], r[3]};
      }
    } else if (k == "max_depth") {
      if (v == "none") p.max_depth.reset();
      else p.max_depth = parse_double(k, v);
    } else if (k == "min_depth") {
      p.min_depth = parse_double(k, v);
    } else if (k == "aggregate") {
      if (v == "pixel") p.aggregation = Aggregation::pixel;
      else if (v == "image") p.aggregation = Aggregation::image;
      else throw ConfigError("aggregate must be pixel or image, got '" + v + "'");
    } else {
      throw ConfigError("unknown protocol key '" + k + "'");
    }
  }
  p.validate();
  return p;
}

inline EvalProtocol load_protocol(const std::string& path) { return apply_protocol({}, read_key_values(path)); }

}  // namespace gfpc
