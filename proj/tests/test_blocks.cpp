#include <gtest/gtest.h>

#include <vector>

#include "dpd/blocks.hpp"
#include "dpd/errors.hpp"

using namespace dpd;

namespace {

Tensor random_tensor(Rng& rng, Shape s) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void zero_weights(Block& b) {
  for (ConvUnit& u : b.units()) u.conv.weights.fill(0.0);
  if (b.projection()) b.projection()->conv.weights.fill(0.0);
}

}  // namespace

TEST(Block, DpdStrideOneShape) {
  Rng rng(1);
  Block b({BlockKind::dpd, 32, 16, 1, 1, 0}, rng);
  Rng xr(2);
  EXPECT_EQ(b.forward(random_tensor(xr, {1, 32, 32, 32}), true).shape(), Shape({1, 16, 32, 32}));
}

TEST(Block, DpdStrideTwoShape) {
  Rng rng(1);
  Block b({BlockKind::dpd, 24, 32, 2, 5, 0}, rng);
  Rng xr(3);
  EXPECT_EQ(b.forward(random_tensor(xr, {1, 24, 32, 32}), true).shape(), Shape({1, 32, 16, 16}));
  EXPECT_EQ(b.output_shape({1, 24, 32, 32}), Shape({1, 32, 16, 16}));
}

TEST(Block, DpdLayerWidths) {
  Rng rng(1);
  Block b({BlockKind::dpd, 24, 32, 2, 5, 0}, rng);
  ASSERT_EQ(b.units().size(), 3u);
  EXPECT_EQ(b.units()[0].conv.kind, ConvKind::depthwise);
  EXPECT_EQ(b.units()[0].conv.weight_shape(), Shape({120, 1, 3, 3}));
  EXPECT_EQ(b.units()[0].conv.stride, 2u);
  EXPECT_EQ(b.units()[1].conv.kind, ConvKind::pointwise);
  EXPECT_EQ(b.units()[1].conv.weight_shape(), Shape({32, 120, 1, 1}));
  EXPECT_EQ(b.units()[2].conv.kind, ConvKind::depthwise);
  EXPECT_EQ(b.units()[2].conv.weight_shape(), Shape({32, 1, 3, 3}));
  EXPECT_EQ(b.shortcut(), Shortcut::none);
  EXPECT_EQ(b.projection(), nullptr);
}

TEST(Block, PsdExpansionLayer) {
  Rng rng(1);
  Block b({BlockKind::psd, 64, 64, 1, 1, 16}, rng);
  const ConvUnit& last = b.units()[2];
  EXPECT_EQ(last.conv.kind, ConvKind::depthwise);
  EXPECT_EQ(last.conv.multiplier, 4u);
  EXPECT_EQ(last.conv.weights.size(), 576u);
  EXPECT_EQ(b.shortcut(), Shortcut::identity);
}

TEST(Block, EveryKindHasThreeConvolutions) {
  Rng rng(4);
  for (BlockKind k : {BlockKind::resnet_bottleneck, BlockKind::psd, BlockKind::mbv2_inverted, BlockKind::dpd}) {
    Block b({k, 16, 32, 2, 2, 8}, rng);
    EXPECT_EQ(b.units().size(), 3u) << to_string(k);
  }
}

TEST(Block, ShortcutSelection) {
  Rng rng(4);
  EXPECT_EQ(Block({BlockKind::resnet_bottleneck, 16, 32, 1, 1, 8}, rng).shortcut(), Shortcut::projection);
  EXPECT_EQ(Block({BlockKind::psd, 16, 16, 2, 1, 8}, rng).shortcut(), Shortcut::projection);
  EXPECT_EQ(Block({BlockKind::mbv2_inverted, 16, 16, 1, 6, 0}, rng).shortcut(), Shortcut::identity);
  EXPECT_EQ(Block({BlockKind::mbv2_inverted, 16, 24, 1, 6, 0}, rng).shortcut(), Shortcut::none);
  EXPECT_EQ(Block({BlockKind::dpd, 16, 16, 2, 6, 0}, rng).shortcut(), Shortcut::none);
}

TEST(Block, ZeroWeightsWithoutShortcutGiveZeros) {
  Rng rng(5);
  for (BlockKind k : {BlockKind::mbv2_inverted, BlockKind::dpd}) {
    Block b({k, 4, 8, 2, 3, 0}, rng);
    zero_weights(b);
    // Nonzero beta in inference mode would leak through; keep BN at identity.
    Rng xr(6);
    const Tensor y = b.forward(random_tensor(xr, {2, 4, 8, 8}), false);
    for (double v : y.data()) EXPECT_EQ(v, 0.0) << to_string(k);
  }
}

TEST(Block, ResnetIdentityWithZeroWeightsIsRelu) {
  Rng rng(7);
  Block b({BlockKind::resnet_bottleneck, 8, 8, 1, 1, 4}, rng);
  zero_weights(b);
  Rng xr(8);
  const Tensor x = random_tensor(xr, {2, 8, 5, 5});
  EXPECT_EQ(b.forward(x, false), relu(x));
}

TEST(Block, DpdIdentityAddsAfterFinalRelu) {
  Rng rng(7);
  Block b({BlockKind::dpd, 8, 8, 1, 2, 0}, rng);
  zero_weights(b);
  Rng xr(9);
  const Tensor x = random_tensor(xr, {2, 8, 5, 5});
  // Negative inputs survive: the sum is not rectified.
  EXPECT_EQ(b.forward(x, false), x);
}

TEST(Block, Mbv2IdentityIsLinear) {
  Rng rng(7);
  Block b({BlockKind::mbv2_inverted, 8, 8, 1, 6, 0}, rng);
  zero_weights(b);
  Rng xr(10);
  const Tensor x = random_tensor(xr, {2, 8, 5, 5});
  EXPECT_EQ(b.forward(x, false), x);
}

TEST(Block, InputChannelMismatchThrows) {
  Rng rng(1);
  Block b({BlockKind::dpd, 8, 8, 1, 2, 0}, rng);
  EXPECT_THROW(b.forward(Tensor({1, 4, 5, 5}), false), ShapeError);
}

TEST(BlockSpec, Validation) {
  EXPECT_THROW((BlockSpec{BlockKind::dpd, 8, 8, 3, 1, 0}).validate(), SpecError);
  EXPECT_THROW((BlockSpec{BlockKind::dpd, 0, 8, 1, 1, 0}).validate(), SpecError);
  EXPECT_THROW((BlockSpec{BlockKind::dpd, 8, 8, 1, 0, 0}).validate(), SpecError);
  EXPECT_THROW((BlockSpec{BlockKind::psd, 8, 20, 1, 1, 8}).validate(), SpecError);
  EXPECT_THROW((BlockSpec{BlockKind::resnet_bottleneck, 8, 8, 1, 1, 0}).validate(), SpecError);
  EXPECT_NO_THROW((BlockSpec{BlockKind::psd, 8, 32, 2, 1, 8}).validate());
  EXPECT_EQ(block_kind_from_string("psd"), BlockKind::psd);
  EXPECT_THROW(block_kind_from_string("dense"), SpecError);
}

TEST(Block, BuildIsDeterministic) {
  Rng a(11);
  Rng b(11);
  const Block x({BlockKind::psd, 16, 32, 2, 1, 8}, a);
  const Block y({BlockKind::psd, 16, 32, 2, 1, 8}, b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.units()[i].conv.weights, y.units()[i].conv.weights);
  EXPECT_EQ(x.projection()->conv.weights, y.projection()->conv.weights);
}

TEST(Block, CollectNamesEveryArray) {
  Rng rng(1);
  Block b({BlockKind::resnet_bottleneck, 8, 16, 2, 1, 4}, rng);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  b.collect("block3", params, buffers);
  EXPECT_EQ(params.size(), 12u);
  EXPECT_EQ(buffers.size(), 8u);
  EXPECT_EQ(params.front().layer, "block3.pwc1");
  EXPECT_TRUE(params.front().decay);
  EXPECT_FALSE(params[1].decay);
  EXPECT_EQ(params.back().layer, "block3.proj_bn");
}
