#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "dpd/errors.hpp"
#include "dpd/network.hpp"
#include "dpd/spec_io.hpp"

using namespace dpd;

namespace {

std::vector<std::size_t> block_outputs(const NetworkSpec& spec) {
  std::vector<std::size_t> out;
  for (const BlockSpec& b : expand_blocks(spec)) out.push_back(b.out_channels);
  return out;
}

Tensor random_tensor(Rng& rng, Shape s) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST(Builtins, DpdnetCifarWidths) {
  const NetworkSpec s = builtin_spec("dpdnet_cifar", 1.0, 6, 10);
  EXPECT_EQ(s.stem.out_channels, 32u);
  EXPECT_EQ(block_outputs(s), (std::vector<std::size_t>{16, 24, 32, 64, 96, 160}));
  for (const BlockSpec& b : expand_blocks(s)) {
    EXPECT_EQ(b.kind, BlockKind::dpd);
    EXPECT_EQ(b.multiplier, 6u);
  }
}

TEST(Builtins, AlphaTwoDoublesBlocksButNotStem) {
  const NetworkSpec s = builtin_spec("dpdnet_cifar", 2.0, 1, 10);
  EXPECT_EQ(block_outputs(s), (std::vector<std::size_t>{32, 48, 64, 128, 192, 320}));
  EXPECT_EQ(expand_blocks(s).front().in_channels, 32u);
}

TEST(Builtins, LayerCounts) {
  EXPECT_EQ(weight_layer_count(builtin_spec("psdnet50_cifar", 1.0, 1, 10)), 50u);
  EXPECT_EQ(weight_layer_count(builtin_spec("resnet50_cifar", 1.0, 1, 10)), 50u);
  EXPECT_EQ(weight_layer_count(builtin_spec("mbv2_20_cifar", 1.0, 6, 10)), 20u);
  EXPECT_EQ(weight_layer_count(builtin_spec("dpdnet_cifar", 1.0, 6, 10)), 20u);
}

TEST(Builtins, EveryNameBuilds) {
  for (const std::string& name : builtin_names()) EXPECT_NO_THROW(builtin_spec(name, 1.0, 2, 10)) << name;
  EXPECT_THROW(builtin_spec("vgg16", 1.0, 1, 10), SpecError);
}

TEST(Builtins, WidthsGrowWithAlpha) {
  for (const char* name : {"dpdnet_cifar", "mbv2_20_cifar", "psdnet50_cifar"}) {
    std::vector<std::size_t> prev = block_outputs(builtin_spec(name, 1.0, 1, 10));
    for (double a : sweep_alphas()) {
      if (a <= 1.0) continue;
      const std::vector<std::size_t> cur = block_outputs(builtin_spec(name, a, 1, 10));
      for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_GE(cur[i], prev[i]) << name << " alpha " << a;
      prev = cur;
    }
  }
}

TEST(Builtins, AlphaOutOfRange) {
  EXPECT_THROW(builtin_spec("dpdnet_cifar", 0.0, 1, 10), SpecError);
  EXPECT_THROW(builtin_spec("dpdnet_cifar", -1.0, 1, 10), SpecError);
  EXPECT_THROW(builtin_spec("dpdnet_cifar", 9.0, 1, 10), SpecError);
  EXPECT_THROW(builtin_spec("dpdnet_cifar", 1.0, 0, 10), SpecError);
}

TEST(ScaleChannels, RoundsHalfUpWithFloorOfOne) {
  EXPECT_EQ(scale_channels(24, 1.25), 30u);
  EXPECT_EQ(scale_channels(16, 1.75), 28u);
  EXPECT_EQ(scale_channels(2, 0.25), 1u);  // 0.5 rounds up
  EXPECT_EQ(scale_channels(1, 0.1), 1u);
}

TEST(Network, CifarForwardShapeAndFiniteLogits) {
  Rng rng(1);
  Network net(builtin_spec("dpdnet_cifar", 1.0, 2, 10), rng);
  Rng xr(2);
  const Tensor logits = net.forward(random_tensor(xr, {2, 3, 32, 32}), true);
  ASSERT_EQ(logits.shape(), Shape({2, 10, 1, 1}));
  for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(net.features().shape(), Shape({2, 160, 8, 8}));
}

TEST(Network, ImagenetShapes) {
  const NetworkSpec spec = builtin_spec("dpdnet_imagenet", 1.0, 6, 1000);
  Rng rng(1);
  Network net(spec, rng);
  EXPECT_EQ(net.feature_shape({1, 3, 224, 224}), Shape({1, 1280, 7, 7}));
  Rng xr(3);
  const Tensor logits = net.forward(random_tensor(xr, {1, 3, 224, 224}), false);
  EXPECT_EQ(logits.shape(), Shape({1, 1000, 1, 1}));
  EXPECT_EQ(net.features().shape(), Shape({1, 1280, 7, 7}));
}

TEST(Network, PoolWindowMismatchThrows) {
  Rng rng(1);
  Network net(builtin_spec("dpdnet_cifar", 1.0, 1, 10), rng);
  EXPECT_THROW(net.forward(Tensor({1, 3, 16, 16}), false), ShapeError);
}

TEST(Network, PredictProbaRowsSumToOne) {
  Rng rng(1);
  Network net(builtin_spec("mbv2_20_cifar", 1.0, 1, 10), rng);
  Rng xr(2);
  const Tensor p = net.predict_proba(random_tensor(xr, {3, 3, 32, 32}));
  for (std::size_t n = 0; n < 3; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < 10; ++k) s += p.at(n, k, 0, 0);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SpecIo, EmitParseRoundTrip) {
  for (const std::string& name : builtin_names()) {
    for (double a : {1.0, 1.75, 3.0}) {
      const NetworkSpec s = builtin_spec(name, a, 4, 100);
      const std::string text = emit_spec(s);
      const NetworkSpec back = parse_spec(text);
      EXPECT_EQ(back, s) << name;
      EXPECT_EQ(emit_spec(back), text) << name;
    }
  }
}

TEST(SpecIo, BadStrideReportsLine) {
  const std::string text = "builtin = dpdnet_cifar\nalpha = 1\nm = 1\nclasses = 10\n[stage 2]\nstride = 3\n";
  try {
    (void)parse_spec(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6);
    EXPECT_EQ(e.key(), "stride");
  }
}

TEST(SpecIo, WidthOverride) {
  const std::string text = "builtin = dpdnet_cifar\nalpha = 1\nm = 1\nclasses = 10\n[stage 4]\nout = 100\n";
  const NetworkSpec s = parse_spec(text);
  EXPECT_EQ(block_outputs(s), (std::vector<std::size_t>{16, 24, 32, 64, 100, 160}));
}

TEST(SpecIo, UnknownAndDuplicateKeys) {
  EXPECT_THROW(parse_spec("builtin = dpdnet_cifar\nalpha = 1\nm = 1\nclasses = 10\ncolour = red\n"), ParseError);
  EXPECT_THROW(parse_spec("builtin = dpdnet_cifar\nalpha = 1\nalpha = 2\nm = 1\nclasses = 10\n"), ParseError);
  EXPECT_THROW(parse_spec("builtin = dpdnet_cifar\nalpha = 1\nm = 1\n"), ParseError);
  EXPECT_THROW(parse_spec("builtin = dpdnet_cifar\nalpha = 1\nm = 1\nclasses = 10\n[stage 9]\nout = 4\n"),
               ParseError);
  EXPECT_THROW(parse_spec("alpha = abc\n"), ParseError);
}

TEST(SpecIo, AppendStage) {
  const std::string text =
      "builtin = dpdnet_cifar\nalpha = 1\nm = 1\nclasses = 10\n[stage 6]\nkind = dpd\nout = 200\nstride = 1\n";
  const NetworkSpec s = parse_spec(text);
  ASSERT_EQ(s.stages.size(), 7u);
  EXPECT_EQ(s.stages.back().repeats, 1u);
  EXPECT_EQ(block_outputs(s).back(), 200u);
}

TEST(SpecIo, ToyConfigFileLoads) {
  const NetworkSpec s = load_spec_file("configs/toy_dpdnet.cfg");
  EXPECT_EQ(s.stem.out_channels, 8u);
  EXPECT_EQ(block_outputs(s), (std::vector<std::size_t>{8, 8, 16, 16, 24, 24}));
  EXPECT_THROW(load_spec_file("configs/does_not_exist.cfg"), SpecError);
}
