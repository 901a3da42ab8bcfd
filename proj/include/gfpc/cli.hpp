#pragma once

// The gfpc command-line tool: gradfield, pretrain, finetune, predict, eval,
// synth and sweep. Requires CLI11 on the include path.
//
// Exit codes: 0 success, 1 usage error (usage on stderr), 2 runtime error with
// one "error:<kind>: <message>" line on stderr. Data and reports go to
// stdout; the resolved configuration and progress go to stderr.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gfpc/config.hpp"
#include "gfpc/pipeline.hpp"

namespace gfpc {

inline unsigned threads_from_env_or(unsigned flag) {
  if (flag > 0) return flag;
  return threads_from_env();
}

namespace detail {

inline std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

/// Output stream that is either a file or a borrowed stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty() || path == "-") {
      os_ = &fallback;
    } else {
      file_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
      if (!*file_) throw IoError("cannot open " + path + " for writing");
      os_ = file_.get();
    }
  }
  std::ostream& operator*() { return *os_; }
  std::ostream* get() { return os_; }
  void finish() {
    os_->flush();
    if (!*os_) throw IoError("failed writing output");
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* os_ = nullptr;
};

}  // namespace detail

/// Runs the tool on `args` (args[0] is the program name).
inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Gradient-field contrastive pretraining for monocular depth estimation", "gfpc"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: $GFPC_THREADS or 1)");

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Flat key = value configuration file")->check(CLI::ExistingFile);
  };

  // gradfield
  std::string gf_in, gf_out;
  bool gf_raw = false;
  auto* gf = app.add_subcommand("gradfield", "Gradient fields of every PNG in a directory");
  gf->add_option("--in", gf_in, "Input directory of RGB PNGs")->required();
  gf->add_option("--out", gf_out, "Output directory")->required();
  gf->add_flag("--raw", gf_raw, "Also write float32 fields (<name>.f32)");
  add_config(gf);

  // pretrain
  std::string pt_data, pt_out, pt_log;
  auto* pt = app.add_subcommand("pretrain", "Contrastive pretraining (RGB query, gradient-field key)");
  pt->add_option("--data", pt_data, "Dataset root")->required();
  pt->add_option("--out", pt_out, "Output checkpoint")->required();
  pt->add_option("--log", pt_log, "Loss CSV destination (default stdout)");
  add_config(pt);

  // finetune
  std::string ft_data, ft_init = "random", ft_out, ft_log;
  double ft_fraction = 1.0;
  std::optional<std::uint64_t> ft_seed;
  std::optional<std::size_t> ft_epochs;
  auto* ft = app.add_subcommand("finetune", "Supervised depth fine-tuning");
  ft->add_option("--data", ft_data, "Dataset root")->required();
  ft->add_option("--init", ft_init, "Encoder init: 'random' or a pretraining checkpoint")->required();
  ft->add_option("--fraction", ft_fraction, "Label fraction in (0,1]");
  ft->add_option("--out", ft_out, "Output checkpoint")->required();
  ft->add_option("--seed", ft_seed, "Subset and init seed");
  ft->add_option("--epochs", ft_epochs, "Training epochs");
  ft->add_option("--log", ft_log, "Loss CSV destination (default stdout)");
  add_config(ft);

  // predict
  std::string pr_in, pr_ckpt, pr_out;
  auto* pr = app.add_subcommand("predict", "Predict a depth map (16-bit PNG, millimeters)");
  pr->add_option("--in", pr_in, "RGB PNG")->required();
  pr->add_option("--ckpt", pr_ckpt, "Depth checkpoint")->required();
  pr->add_option("--out", pr_out, "Output PNG")->required();
  add_config(pr);

  // eval
  std::string ev_data, ev_ckpt, ev_protocol, ev_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a depth checkpoint on the test split");
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--ckpt", ev_ckpt, "Depth checkpoint")->required();
  ev->add_option("--protocol", ev_protocol, "Protocol file (crop, max_depth, min_depth, aggregate)")
      ->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Metrics CSV file (default: CSV on stdout)");
  add_config(ev);

  // synth
  std::string sy_out;
  SyntheticSceneParams sy;
  std::optional<std::size_t> sy_test;
  std::size_t sy_size = 64;
  auto* syc = app.add_subcommand("synth", "Generate a synthetic box-scene dataset");
  syc->add_option("--out", sy_out, "Output directory")->required();
  syc->add_option("--n", sy.count, "Number of scenes")->required();
  syc->add_option("--seed", sy.seed, "Generator seed")->required();
  syc->add_option("--size", sy_size, "Image width and height");
  syc->add_option("--test", sy_test, "Scenes in the test split (default max(1, n/8))");
  syc->add_option("--noise", sy.noise, "Texture noise amplitude");
  syc->add_option("--depth-min", sy.depth_min, "Nearest depth in meters");
  syc->add_option("--depth-max", sy.depth_max, "Farthest depth in meters");

  // sweep
  std::string sw_data, sw_ckpt, sw_protocol, sw_out;
  std::vector<double> sw_fractions{0.05, 0.25, 1.0};
  std::vector<std::uint64_t> sw_seeds{0, 1, 2};
  std::vector<std::string> sw_inits;
  auto* sw = app.add_subcommand("sweep", "Label-efficiency sweep over fractions, seeds and inits");
  sw->add_option("--data", sw_data, "Dataset root")->required();
  sw->add_option("--ckpt", sw_ckpt, "Pretraining checkpoint for the 'ckpt' init mode");
  sw->add_option("--fractions", sw_fractions, "Label fractions")->delimiter(',');
  sw->add_option("--seeds", sw_seeds, "Seeds")->delimiter(',');
  sw->add_option("--inits", sw_inits, "Init modes: random, ckpt (default: both when --ckpt is given)")
      ->delimiter(',')
      ->check(CLI::IsMember({"random", "ckpt"}));
  sw->add_option("--protocol", sw_protocol, "Protocol file")->check(CLI::ExistingFile);
  sw->add_option("--out", sw_out, "CSV destination (default stdout)");
  add_config(sw);

  // Extras are collected rather than rejected so that an unknown flag is
  // reported even when a required option is also missing.
  app.allow_extras();
  for (auto* sub : app.get_subcommands({})) sub->allow_extras();
  auto unknown_argument = [&]() -> std::optional<std::string> {
    for (const auto& a : app.remaining()) return a;
    for (const auto* sub : app.get_subcommands({}))
      for (const auto& a : sub->remaining()) return a;
    return std::nullopt;
  };
  auto usage = [&](const std::string& message) {
    err << "usage error: " << detail::one_line(message) << '\n';
    const CLI::App* shown = &app;
    for (const auto* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return 1;
  };

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (auto extra = unknown_argument()) return usage("unknown argument " + *extra);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (auto extra = unknown_argument()) return usage("unknown argument " + *extra);
    return usage(e.what());
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    config.contrast.threads = config.finetune.threads = threads_from_env_or(threads);
    auto log_config = [&] {
      std::istringstream lines(describe(config));
      for (std::string line; std::getline(lines, line);) err << "config: " << line << '\n';
    };

    if (gf->parsed()) {
      config.canny.validate();
      err << "config: canny.low = " << config.canny.low << "\nconfig: canny.high = " << config.canny.high
          << "\nconfig: canny.sigma = " << config.canny.sigma << '\n';
      const auto n = run_gradfield(gf_in, gf_out, config.canny, gf_raw, config.contrast.threads);
      out << n << " gradient fields written to " << gf_out << '\n';
    } else if (pt->parsed()) {
      config.validate();
      log_config();
      detail::Sink log(pt_log, out);
      const auto r = run_pretrain(pt_data, pt_out, config, log.get());
      log.finish();
      if (r.skipped_images) err << "skipped " << r.skipped_images << " images with empty gradient fields\n";
    } else if (ft->parsed()) {
      config.finetune.init = ft_init;
      config.finetune.fraction = ft_fraction;
      if (ft_seed) config.finetune.seed = *ft_seed;
      if (ft_epochs) config.finetune.epochs = *ft_epochs;
      config.validate();
      log_config();
      err << "config: finetune.init = " << ft_init << "\nconfig: finetune.fraction = " << ft_fraction << '\n';
      detail::Sink log(ft_log, out);
      run_finetune(ft_data, ft_out, config, log.get());
      log.finish();
    } else if (pr->parsed()) {
      config.validate();
      run_predict(pr_in, pr_ckpt, pr_out, config);
    } else if (ev->parsed()) {
      config.validate();
      const EvalProtocol protocol = ev_protocol.empty() ? EvalProtocol{} : load_protocol(ev_protocol);
      const auto report = run_eval(ev_data, ev_ckpt, protocol, config);
      if (ev_out.empty()) {
        write_report_csv(out, report);
      } else {
        detail::Sink csv(ev_out, out);
        write_report_csv(*csv, report);
        csv.finish();
        print_report(out, report);
      }
    } else if (syc->parsed()) {
      sy.width = sy.height = sy_size;
      sy.test_count = sy_test ? *sy_test : (sy.count >= 2 ? std::max<std::size_t>(1, sy.count / 8) : 0);
      generate_synthetic(sy, sy_out);
      out << sy.count << " scenes written to " << sy_out << '\n';
    } else if (sw->parsed()) {
      config.validate();
      log_config();
      if (sw_inits.empty()) sw_inits = sw_ckpt.empty() ? std::vector<std::string>{"random"}
                                                       : std::vector<std::string>{"random", "ckpt"};
      std::vector<std::string> inits;
      for (const auto& m : sw_inits) {
        if (m == "ckpt" && sw_ckpt.empty()) throw ConfigError("init mode 'ckpt' needs --ckpt");
        inits.push_back(m == "ckpt" ? sw_ckpt : "random");
      }
      const EvalProtocol protocol = sw_protocol.empty() ? EvalProtocol{} : load_protocol(sw_protocol);
      const auto train = load_split_samples(sw_data, Split::train, config.finetune.threads);
      const auto test = load_split_samples(sw_data, Split::test, config.finetune.threads);
      detail::Sink csv(sw_out, out);
      run_sweep(train, test, sw_fractions, sw_seeds, inits, config, protocol, csv.get());
      csv.finish();
    }
    out.flush();
    return 0;
  } catch (const Error& e) {
    err << "error:" << e.kind() << ": " << detail::one_line(e.what()) << '\n';
  } catch (const std::exception& e) {
    err << "error:internal: " << detail::one_line(e.what()) << '\n';
  }
  return 2;
}

}  // namespace gfpc
