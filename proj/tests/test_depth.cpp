#include <gtest/gtest.h>

#include <random>

#include "gfpc/contrast.hpp"
#include "gfpc/data.hpp"
#include "gfpc/depth.hpp"
#include "oracles.hpp"

using namespace gfpc;

namespace {

EncoderConfig toy_encoder() {
  EncoderConfig c;
  c.widths = {4, 8};
  c.zdim = 8;
  c.head_hidden = 8;
  c.head_dim = 4;
  return c;
}

const DecoderConfig kToyDecoder{{4}, 3.0};

// Half-resolution sample built straight from a rendered scene by 2x2 averaging.
DepthSample sample_from_scene(const SyntheticScene& s) {
  const std::size_t h = s.depth.dim(0) / 2, w = s.depth.dim(1) / 2;
  DepthSample out{s.rgb, Tensor<float>({h, w}), Tensor<float>({h, w}, 1.0f)};
  const std::size_t W = s.depth.dim(1);
  auto d = [&](std::size_t r, std::size_t c) { return s.depth[r * W + c]; };
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.depth[r * w + c] =
          0.25f * (d(2 * r, 2 * c) + d(2 * r + 1, 2 * c) + d(2 * r, 2 * c + 1) + d(2 * r + 1, 2 * c + 1));
  return out;
}

std::vector<DepthSample> toy_samples(std::size_t n, std::uint64_t seed = 0) {
  SyntheticSceneParams p;
  p.width = p.height = 16;
  p.seed = seed;
  std::vector<DepthSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_from_scene(render_scene(p, i)));
  return out;
}

double depth_l1(const std::vector<double>& pred, const std::vector<double>& target, const std::vector<double>& mask) {
  Graph<double> g(GradMode::disabled);
  Tensor<double> t({target.size()}, target), m({mask.size()}, mask);
  return g.value(depth_loss(g, g.input(Tensor<double>({pred.size()}, pred)), t, m))[0];
}

}  // namespace

TEST(PredictDepth, HalfResolutionOnFullSizeInput) {
  EncoderConfig enc;
  const auto net = build_depthnet<float>(enc, DecoderConfig{}, 1);
  std::mt19937_64 rng(1);
  const auto img = oracle::random_tensor<float>({3, 480, 640}, rng, 0, 1);
  const Field out = predict_depth(net, img);
  EXPECT_EQ(out.height, 240u);
  EXPECT_EQ(out.width, 320u);
  for (double v : out.values) EXPECT_GT(v, 0.0);
}

TEST(PredictDepth, SmallInputAndPositivity) {
  EncoderConfig enc;
  const auto net = build_depthnet<float>(enc, DecoderConfig{}, 2);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 3; ++i) {
    const Field out = predict_depth(net, oracle::random_tensor<float>({3, 64, 64}, rng, 0, 1));
    EXPECT_EQ(out.height, 32u);
    EXPECT_EQ(out.width, 32u);
    for (double v : out.values) EXPECT_GT(v, 0.0);
  }
}

TEST(PredictDepth, OutputBiasStartsAtPrior) {
  auto net = build_depthnet<double>(toy_encoder(), DecoderConfig{{4}, 2.5}, 3);
  for (auto& [n, t] : net.decoder)
    if (n == "decoder.out.weight") std::fill(t.values().begin(), t.values().end(), 0.0);
  const Field out = predict_depth(net, Tensor<double>({3, 8, 8}, 0.5));
  for (double v : out.values) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(PredictDepth, IndivisibleDimensionsAreDimensionErrors) {
  const auto net = build_depthnet<float>(toy_encoder(), kToyDecoder, 1);
  EXPECT_THROW(predict_depth(net, Tensor<float>({3, 10, 8})), DimensionError);
  EXPECT_THROW(predict_depth(net, Tensor<float>({3, 8, 6})), DimensionError);
}

TEST(DecoderConfig, StageCountMustMatchEncoder) {
  EXPECT_THROW((DecoderConfig{{4, 4}}.validate(toy_encoder())), ConfigError);
  EXPECT_NO_THROW(kToyDecoder.validate(toy_encoder()));
  EXPECT_NO_THROW(DecoderConfig{}.validate(EncoderConfig{}));
  EXPECT_THROW((DecoderConfig{{4}, 0.0}.validate(toy_encoder())), ConfigError);
}

TEST(DepthLoss, Examples) {
  EXPECT_EQ(depth_l1({1.5, 2.0, 7.0}, {1.5, 2.0, 7.0}, {1, 1, 1}), 0.0);
  EXPECT_NEAR(depth_l1({2.5, 3.0, 8.0}, {1.5, 2.0, 7.0}, {1, 1, 1}), 1.0, 1e-15);
  EXPECT_NEAR(depth_l1({1, 3}, {2, 4}, {1, 1}), 1.0, 1e-15);
  EXPECT_NEAR(depth_l1({1, 30}, {2, 4}, {1, 0}), 1.0, 1e-15);
}

TEST(DepthLoss, EmptyMaskIsDegenerateAndShapesMustMatch) {
  EXPECT_THROW(depth_l1({1, 2}, {1, 2}, {0, 0}), DegenerateError);
  EXPECT_THROW(depth_l1({1, 2, 3}, {1, 2}, {1, 1}), DimensionError);
}

TEST(Finetune, FullFractionUsesAllSamples) {
  FinetuneConfig cfg;
  cfg.epochs = 1;
  cfg.fraction = 1.0;
  const auto r = finetune(toy_samples(5), toy_encoder(), kToyDecoder, cfg);
  EXPECT_EQ(r.subset, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(r.epoch_losses.size(), 1u);
}

TEST(Finetune, SameSeedAndFractionGiveSameSubset) {
  FinetuneConfig cfg;
  cfg.epochs = 0;
  cfg.fraction = 0.3;
  cfg.seed = 7;
  const auto samples = toy_samples(10);
  const auto a = finetune(samples, toy_encoder(), kToyDecoder, cfg);
  const auto b = finetune(samples, toy_encoder(), kToyDecoder, cfg);
  EXPECT_EQ(a.subset, b.subset);
  EXPECT_EQ(a.subset.size(), 3u);
}

TEST(Finetune, ZeroLearningRateKeepsEncoderInitialization) {
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0;
  cfg.seed = 4;
  const auto r = finetune(toy_samples(4), toy_encoder(), kToyDecoder, cfg);
  EXPECT_EQ(r.net.encoder.params, build_encoder<float>(toy_encoder(), 4).params);
  EXPECT_EQ(r.net.decoder, build_decoder<float>(toy_encoder(), kToyDecoder, 4));
}

TEST(Finetune, BothEncoderAndDecoderAreTrained) {
  FinetuneConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  cfg.seed = 4;
  const auto r = finetune(toy_samples(4), toy_encoder(), kToyDecoder, cfg);
  EXPECT_NE(r.net.encoder.params, build_encoder<float>(toy_encoder(), 4).params);
  EXPECT_NE(r.net.decoder, build_decoder<float>(toy_encoder(), kToyDecoder, 4));
}

TEST(Finetune, LossDecreasesOnToySet) {
  FinetuneConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 3e-3;
  const auto r = finetune(toy_samples(4), toy_encoder(), kToyDecoder, cfg);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
}

TEST(Finetune, ErrorsOnTinyFractionAndEmptySet) {
  FinetuneConfig cfg;
  EXPECT_THROW(finetune({}, toy_encoder(), kToyDecoder, cfg), InputError);
  cfg.fraction = 0;
  EXPECT_THROW(finetune(toy_samples(2), toy_encoder(), kToyDecoder, cfg), ConfigError);
  cfg.fraction = 1.5;
  EXPECT_THROW(finetune(toy_samples(2), toy_encoder(), kToyDecoder, cfg), ConfigError);
}

TEST(Finetune, WritesEpochCsv) {
  FinetuneConfig cfg;
  cfg.epochs = 2;
  std::ostringstream log;
  finetune(toy_samples(2), toy_encoder(), kToyDecoder, cfg, &log);
  const std::string text = log.str();
  EXPECT_EQ(text.rfind("epoch,loss\n1,", 0), 0u);
  EXPECT_NE(text.find("\n2,"), std::string::npos);
}

TEST(Checkpoint, PretrainedEncoderLoadsBitExactly) {
  oracle::TempDir dir("depth");
  auto pair = init_pair<float>(toy_encoder(), 12);
  for (auto& [n, t] : pair.query.encoder.params)
    for (auto& v : t.values()) v += 0.125f;  // make it distinct from any fresh init
  save_pretrain_checkpoint(pair.query, dir / "pre.ckpt");
  const auto enc = load_pretrained_encoder(dir / "pre.ckpt", toy_encoder());
  EXPECT_EQ(enc.params, pair.query.encoder.params);
  EXPECT_EQ(params_digest(enc.params), params_digest(pair.query.encoder.params));

  FinetuneConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0;
  cfg.init = dir / "pre.ckpt";
  const auto r = finetune(toy_samples(2), toy_encoder(), kToyDecoder, cfg);
  EXPECT_EQ(r.net.encoder.params, pair.query.encoder.params);

  EncoderConfig other = toy_encoder();
  other.head_dim = 3;
  EXPECT_THROW(load_pretrained_encoder(dir / "pre.ckpt", other), DigestError);
}

TEST(Checkpoint, DepthNetRoundTripIsBitIdentical) {
  oracle::TempDir dir("depth");
  const auto net = build_depthnet<float>(toy_encoder(), kToyDecoder, 5);
  save_depth_checkpoint(net, dir / "net.ckpt");
  const auto back = load_depth_checkpoint(dir / "net.ckpt", toy_encoder(), kToyDecoder);
  const auto img = toy_samples(1)[0].rgb;
  EXPECT_EQ(predict_depth(net, img), predict_depth(back, img));
  EXPECT_THROW(load_depth_checkpoint(dir / "net.ckpt", toy_encoder(), DecoderConfig{{5}, 3.0}), DigestError);
}
