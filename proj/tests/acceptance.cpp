// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "gfpc/cli.hpp"
#include "gfpc/contrast.hpp"
#include "gfpc/data.hpp"
#include "gfpc/depth.hpp"
#include "gfpc/gradfield.hpp"
#include "gfpc/metrics.hpp"
#include "gradcheck_suite.hpp"
#include "oracles.hpp"

using namespace gfpc;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(secs) << " s]" << std::endl;
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gfpc");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

Run cli_ok(const std::vector<std::string>& args) {
  auto r = cli(args);
  if (r.code != 0) throw std::runtime_error("gfpc " + args.front() + " failed: " + r.err);
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EncoderConfig toy_encoder() {
  EncoderConfig c;
  c.widths = {4, 8};
  c.zdim = 8;
  c.head_hidden = 8;
  c.head_dim = 4;
  return c;
}

double nce(const std::vector<double>& q, const std::vector<double>& k, const std::vector<std::vector<double>>& negs,
           double tau) {
  Graph<double> g(GradMode::disabled);
  KeyQueue<double> queue(std::max<std::size_t>(1, negs.size()), q.size());
  for (const auto& n : negs) queue.push(n);
  return g.value(info_nce(g, g.input(Tensor<double>({q.size()}, q)), Tensor<double>({k.size()}, k), queue, tau))[0];
}

Field row(std::vector<double> v) {
  Field f(1, v.size());
  f.values = std::move(v);
  return f;
}

bool same_report(const MetricReport& a, const MetricReport& b) {
  return a.delta1 == b.delta1 && a.delta2 == b.delta2 && a.delta3 == b.delta3 && a.rel == b.rel && a.rms == b.rms &&
         a.log10 == b.log10 && a.pixels == b.pixels;
}

double report_gap(const MetricReport& a, const MetricReport& b) {
  return std::max({std::abs(a.delta1 - b.delta1), std::abs(a.delta2 - b.delta2), std::abs(a.delta3 - b.delta3),
                   std::abs(a.rel - b.rel), std::abs(a.rms - b.rms), std::abs(a.log10 - b.log10)});
}

Tensor<double> step_image(std::size_t h, std::size_t w, std::size_t k, bool vertical) {
  Tensor<double> t({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) t.at(c, r, x) = (vertical ? x : r) < k ? 0.1 : 0.9;
  return t;
}

// Mean (delta1, rel) per (init, fraction) from the ",mean," rows of a sweep CSV.
std::map<std::pair<std::string, double>, std::pair<double, double>> sweep_means(const std::string& csv) {
  std::map<std::pair<std::string, double>, std::pair<double, double>> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 9 || f[2] != "mean") continue;
    out[{f[0], std::stod(f[1])}] = {std::stod(f[3]), std::stod(f[6])};
  }
  return out;
}

// Desk-scale setting shared by the transfer and sweep criteria.
constexpr const char* kDeskConfig =
    "batch_size = 16\n"
    "queue_size = 256\n"
    "steps = 2000\n"
    "seed = 0\n"
    "finetune.lr = 1e-3\n";

}  // namespace

int main() {
  criterion("gradient fidelity", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = gradcheck::run(20);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0;
    std::string worst_name;
    for (const auto& r : results)
      if (r.worst >= worst) {
        worst = r.worst;
        worst_name = r.name;
      }
    return Outcome{worst < 1e-4 && secs < 60,
                   std::to_string(results.size()) + " cases x 20 seeds, worst rel err " + fmt(worst) + " (" +
                       worst_name + "), " + fmt(secs) + " s"};
  });

  criterion("InfoNCE oracle", [] {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> qlen(0, 256), dim(2, 16);
    std::uniform_real_distribution<double> tau(0.05, 1.0);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const std::size_t d = dim(rng), n = qlen(rng);
      const double t = tau(rng);
      auto q = oracle::random_unit(d, rng), k = oracle::random_unit(d, rng);
      std::vector<std::vector<double>> negs;
      for (std::size_t j = 0; j < n; ++j) negs.push_back(oracle::random_unit(d, rng));
      worst = std::max(worst, std::abs(nce(q, k, negs, t) - oracle::info_nce(q, k, negs, t)));
    }
    double uniform = 0;
    for (std::size_t K : {1u, 16u, 255u, 256u}) {
      std::vector<std::vector<double>> negs(K, std::vector<double>{0.6, 0.8});
      uniform = std::max(uniform, std::abs(nce({1, 0}, {0.6, 0.8}, negs, 0.07) - std::log(double(K + 1))));
    }
    return Outcome{worst < 1e-6 && uniform < 1e-9,
                   "1000 instances max |diff| " + fmt(worst) + ", uniform-logit max |diff| " + fmt(uniform)};
  });

  criterion("momentum update", [] {
    std::mt19937_64 rng(5);
    auto random_pair = [&] {
      auto p = init_pair<double>(toy_encoder(), rng());
      for (auto* side : {&p.query, &p.key})
        for (auto* set : {&side->encoder.params, &side->head.params})
          for (auto& [n, t] : *set)
            for (auto& v : t.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
      return p;
    };
    auto keys = [](const EncoderPair<double>& p) {
      auto all = p.key.encoder.params;
      all.insert(p.key.head.params.begin(), p.key.head.params.end());
      return all;
    };
    auto queries = [](const EncoderPair<double>& p) {
      auto all = p.query.encoder.params;
      all.insert(p.query.head.params.begin(), p.query.head.params.end());
      return all;
    };
    bool endpoints = true;
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
      auto a = random_pair();
      const auto before = keys(a);
      momentum_update(a, 1.0);
      endpoints &= keys(a) == before;
      momentum_update(a, 0.0);
      endpoints &= keys(a) == queries(a);

      auto b = random_pair();
      const double m = std::uniform_real_distribution<double>(0, 1)(rng);
      const auto k0 = keys(b), q0 = queries(b);
      momentum_update(b, m);
      for (const auto& [name, t1] : keys(b))
        for (std::size_t i = 0; i < t1.size(); ++i)
          worst = std::max(worst, std::abs(t1[i] - (m * k0.at(name)[i] + (1 - m) * q0.at(name)[i])));
    }
    return Outcome{endpoints && worst < 1e-7, std::string("endpoints ") + (endpoints ? "exact" : "NOT exact") +
                                                  ", 20 random pairs max |diff| " + fmt(worst)};
  });

  criterion("queue semantics", [] {
    std::mt19937_64 rng(9);
    std::size_t pushes = 0;
    for (int t = 0; t < 200; ++t) {
      const std::size_t cap = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
      const std::size_t dim = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
      const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 40)(rng);
      KeyQueue<double> q(cap, dim);
      std::deque<std::vector<double>> model;
      for (std::size_t i = 0; i < n; ++i, ++pushes) {
        auto key = oracle::random_unit(dim, rng);
        q.push(key);
        model.push_back(key);
        if (model.size() > cap) model.pop_front();
        if (q.size() != model.size() || q.size() > cap)
          return Outcome{false, "size " + std::to_string(q.size()) + " vs model " + std::to_string(model.size())};
        for (std::size_t j = 0; j < model.size(); ++j)
          if (q[j] != model[j]) return Outcome{false, "content differs from FIFO model at trial " + std::to_string(t)};
      }
    }
    return Outcome{true, "200 random sequences, " + std::to_string(pushes) + " pushes match a FIFO model"};
  });

  criterion("gradient-field invariants", [] {
    std::size_t images = 0, nonempty = 0;
    double scale_gap = 0;
    for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
      SyntheticSceneParams sp;
      sp.width = sp.height = 48;
      sp.seed = seed;
      for (std::size_t i = 0; i < 25; ++i, ++images) {
        const auto rgb = render_scene(sp, i).rgb;
        const CannyParams p;
        const auto mask = canny_mask(to_grayscale(rgb), p);
        const auto g = gradient_field(rgb, p);
        double mx = 0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (g.values[j] > 0 && mask.values[j] != 1) return Outcome{false, "support outside Canny mask"};
          if (!(g.values[j] >= 0 && g.values[j] <= 1)) return Outcome{false, "value outside [0,1]"};
          mx = std::max(mx, g.values[j]);
        }
        if (mask.count()) {
          ++nonempty;
          if (mx != 1.0) return Outcome{false, "max " + fmt(mx) + " on non-empty mask"};
        }
        for (float alpha : {0.5f, 0.25f}) {
          auto scaled = rgb;
          for (auto& v : scaled.values()) v *= alpha;
          const auto gs = gradient_field(scaled, p);
          for (std::size_t j = 0; j < g.size(); ++j) scale_gap = std::max(scale_gap, std::abs(gs.values[j] - g.values[j]));
        }
      }
    }
    // Hand-traced oracle: a dark-to-bright step between k-1 and k gives a line at k-1.
    bool steps = true;
    for (bool vertical : {true, false})
      for (std::size_t k : {3u, 6u, 9u}) {
        const std::size_t h = 12, w = 14;
        const auto g = gradient_field(step_image(h, w, k, vertical), CannyParams{});
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c) steps &= g.at(r, c) == (((vertical ? c : r) == k - 1) ? 1.0 : 0.0);
      }
    return Outcome{scale_gap <= 1e-6 && steps, std::to_string(images) + " images (" + std::to_string(nonempty) +
                                                   " non-empty), scaling max |diff| " + fmt(scale_gap) +
                                                   ", step-edge lines " + (steps ? "match" : "DIFFER")};
  });

  criterion("metric formulas", [] {
    const EvalProtocol p;
    bool exact = true;
    const auto id = evaluate_pair(row({0.5, 1, 2, 9.5}), row({0.5, 1, 2, 9.5}), p);
    exact &= id.delta1 == 1 && id.delta2 == 1 && id.delta3 == 1 && id.rel == 0 && id.rms == 0 && id.log10 == 0;
    const auto one = evaluate_pair(row({1.3}), row({1.0}), p);
    exact &= one.delta1 == 0 && one.delta2 == 1 && one.delta3 == 1;
    // volatile keeps the compiler from constant-folding log10 (correctly rounded)
    // instead of calling the runtime libm the library uses.
    volatile double p13 = 1.3, p10 = 1.0;
    exact &= one.rel == std::abs(p13 - p10) / p10 && one.rms == std::sqrt((p13 - p10) * (p13 - p10)) &&
             one.log10 == std::abs(std::log10(p10) - std::log10(p13));
    const auto two = evaluate_pair(row({1, 3}), row({2, 4}), p);
    exact &= two.rel == 0.375 && two.rms == 1.0;

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> depth(0.5, 10), noise(0.6, 1.6);
    double worst = 0;
    for (int t = 0; t < 200; ++t) {
      Field gt(11, 13), pred(11, 13);
      for (std::size_t i = 0; i < gt.size(); ++i) {
        gt.values[i] = depth(rng);
        pred.values[i] = gt.values[i] * noise(rng);
      }
      worst = std::max(worst, report_gap(evaluate_pair(pred, gt, p), oracle::metrics(pred.values, gt.values)));
    }
    return Outcome{exact && worst <= 1e-9, std::string("worked examples ") + (exact ? "exact" : "NOT exact") +
                                               ", 200 random maps max |diff| " + fmt(worst)};
  });

  criterion("depth-cap masking", [] {
    EvalProtocol p;
    p.max_depth = 70.0;
    const auto capped = evaluate_pair(row({2.0, 1.0}), row({2.0, 80.0}), p);
    const auto alone = evaluate_pair(row({2.0}), row({2.0}), EvalProtocol{});
    const bool ok = capped.pixels == 1 && same_report(capped, alone);
    return Outcome{ok, "80 m pixel under a 70 m cap: " + std::to_string(capped.pixels) +
                           " pixel counted, metrics equal the uncapped pixel alone: " + (ok ? "yes" : "no")};
  });

  criterion("shape contract", [] {
    const auto net = build_depthnet<float>(EncoderConfig{}, DecoderConfig{}, 1);
    std::mt19937_64 rng(1);
    const auto out = predict_depth(net, oracle::random_tensor<float>({3, 480, 640}, rng, 0, 1));
    return Outcome{out.width == 320 && out.height == 240,
                   "640x480 input -> " + std::to_string(out.width) + "x" + std::to_string(out.height)};
  });

  oracle::TempDir desk("acceptance");
  bool pretrained = false;
  criterion("directional transfer", [&] {
    std::ofstream(desk / "transfer.cfg") << kDeskConfig << "finetune.epochs = 60\n";
    cli_ok({"synth", "--out", desk / "data", "--n", "512", "--seed", "0", "--size", "64"});
    cli_ok({"pretrain", "--data", desk / "data", "--out", desk / "pre.ckpt", "--config", desk / "transfer.cfg",
            "--log", desk / "pre.csv"});
    pretrained = true;
    const auto sw = cli_ok({"sweep", "--data", desk / "data", "--ckpt", desk / "pre.ckpt", "--fractions", "0.05",
                            "--seeds", "0,1,2", "--config", desk / "transfer.cfg"});
    const auto m = sweep_means(sw.out);
    const auto [r_d1, r_rel] = m.at({"random", 0.05});
    const auto [c_d1, c_rel] = m.at({"ckpt", 0.05});
    return Outcome{c_d1 >= r_d1 && c_rel <= r_rel, "fraction 0.05, 60 epochs, 3 seeds: delta1 pretrained " +
                                                       fmt(c_d1) + " vs random " + fmt(r_d1) + ", rel pretrained " +
                                                       fmt(c_rel) + " vs random " + fmt(r_rel)};
  });

  criterion("data-efficiency sweep shape", [&] {
    if (!pretrained) return Outcome{false, "no pretraining checkpoint"};
    std::ofstream(desk / "sweep.cfg") << kDeskConfig << "finetune.epochs = 10\n";
    const auto sw = cli_ok({"sweep", "--data", desk / "data", "--ckpt", desk / "pre.ckpt", "--fractions",
                            "0.05,0.25,1.0", "--seeds", "0,1,2", "--config", desk / "sweep.cfg"});
    const auto m = sweep_means(sw.out);
    bool ok = true;
    std::string detail = "10 epochs, 3 seeds, mean delta1";
    for (const std::string init : {"random", "ckpt"}) {
      detail += " " + init + ":";
      double prev = -1;
      for (double f : {0.05, 0.25, 1.0}) {
        const double d1 = m.at({init, f}).first;
        ok &= d1 >= prev;
        prev = d1;
        detail += " " + fmt(d1);
      }
    }
    return Outcome{ok, detail};
  });

  criterion("determinism", [] {
    oracle::TempDir dir("determinism");
    std::ofstream(dir / "tiny.cfg") << "encoder.widths = 4,8\nhead.hidden = 8\nhead.dim = 4\n"
                                       "decoder.widths = 4\nbatch_size = 4\nqueue_size = 8\nsteps = 6\n"
                                       "finetune.epochs = 2\n";
    auto pipeline = [&](const std::string& run) {
      const std::string root = dir / run;
      const std::string cfg = dir / "tiny.cfg";
      cli_ok({"synth", "--out", root + "/data", "--n", "12", "--seed", "4", "--size", "32"});
      const auto pt = cli_ok({"pretrain", "--data", root + "/data", "--out", root + "/pre.ckpt", "--config", cfg});
      const auto ft = cli_ok({"finetune", "--data", root + "/data", "--init", root + "/pre.ckpt", "--fraction", "0.5",
                              "--out", root + "/net.ckpt", "--config", cfg});
      const auto ev = cli_ok({"eval", "--data", root + "/data", "--ckpt", root + "/net.ckpt", "--config", cfg});
      return std::vector<std::string>{pt.out, ft.out, ev.out, slurp(root + "/net.ckpt")};
    };
    const auto a = pipeline("a"), b = pipeline("b");
    const bool ok = a == b && !a[2].empty();
    return Outcome{ok, std::string("two runs: loss CSVs, eval CSV and checkpoint ") +
                           (ok ? "bit-identical" : "DIFFER")};
  });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
