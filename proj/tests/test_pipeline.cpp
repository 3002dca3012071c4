#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dpd/checkpoint.hpp"
#include "dpd/dataset.hpp"
#include "dpd/errors.hpp"
#include "dpd/ops.hpp"
#include "dpd/spec_io.hpp"
#include "dpd/trainer.hpp"

using namespace dpd;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("dpd_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Record i: labels (coarse 7, fine `fine`), pixel p = (p * 7 + i) mod 256.
std::vector<unsigned char> cifar_record(int i, int label, bool with_coarse) {
  std::vector<unsigned char> rec;
  if (with_coarse) rec.push_back(7);
  rec.push_back(static_cast<unsigned char>(label));
  for (int p = 0; p < 3072; ++p) rec.push_back(static_cast<unsigned char>((p * 7 + i) % 256));
  return rec;
}

void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> two_records(bool with_coarse, int label0, int label1) {
  std::vector<unsigned char> bytes = cifar_record(0, label0, with_coarse);
  const std::vector<unsigned char> second = cifar_record(1, label1, with_coarse);
  bytes.insert(bytes.end(), second.begin(), second.end());
  return bytes;
}

NetworkSpec toy_spec() { return load_spec_file("configs/toy_dpdnet.cfg"); }

std::vector<double> flatten(Network& net) {
  std::vector<double> out;
  for (const ParamRef& p : net.parameters()) out.insert(out.end(), p.value.begin(), p.value.end());
  for (const BufferRef& b : net.buffers()) out.insert(out.end(), b.value.begin(), b.value.end());
  return out;
}

}  // namespace

TEST(Cifar, ReadsTenClassRecords) {
  TempDir dir;
  write_file(dir.path() / "batch.bin", two_records(false, 3, 9));
  const std::vector<fs::path> files = {dir.path() / "batch.bin"};
  const Dataset ds = read_cifar_files(files, CifarVariant::cifar10);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images.shape(), Shape({2, 3, 32, 32}));
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 9}));
  // Pixel index within a record: c * 1024 + y * 32 + x.
  EXPECT_DOUBLE_EQ(ds.images.at(0, 0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(ds.images.at(0, 1, 0, 0), ((1024 * 7) % 256) / 255.0);
  EXPECT_DOUBLE_EQ(ds.images.at(1, 2, 5, 3), (((2048 + 5 * 32 + 3) * 7 + 1) % 256) / 255.0);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Cifar, HundredClassKeepsFineLabel) {
  TempDir dir;
  write_file(dir.path() / "train.bin", two_records(true, 42, 99));
  const std::vector<fs::path> files = {dir.path() / "train.bin"};
  const Dataset ds = read_cifar_files(files, CifarVariant::cifar100);
  EXPECT_EQ(ds.labels, (std::vector<int>{42, 99}));
  EXPECT_EQ(ds.class_count, 100u);
  EXPECT_DOUBLE_EQ(ds.images.at(1, 0, 0, 1), 8.0 / 255.0);
}

TEST(Cifar, TruncatedFileIsFormatError) {
  TempDir dir;
  std::vector<unsigned char> bytes = two_records(false, 1, 2);
  bytes.pop_back();
  write_file(dir.path() / "batch.bin", bytes);
  const std::vector<fs::path> files = {dir.path() / "batch.bin"};
  EXPECT_THROW(read_cifar_files(files, CifarVariant::cifar10), FormatError);
  const std::vector<fs::path> missing = {dir.path() / "nope.bin"};
  EXPECT_THROW(read_cifar_files(missing, CifarVariant::cifar10), FormatError);
}

TEST(Cifar, LabelOutOfRangeIsCorruptData) {
  TempDir dir;
  write_file(dir.path() / "batch.bin", two_records(false, 1, 10));
  const std::vector<fs::path> files = {dir.path() / "batch.bin"};
  EXPECT_THROW(read_cifar_files(files, CifarVariant::cifar10), CorruptDataError);
}

TEST(Cifar, LoadFindsArchiveSubdirectoryAndSharesTrainStats) {
  TempDir dir;
  const fs::path sub = dir.path() / "cifar-10-batches-bin";
  fs::create_directories(sub);
  for (int i = 1; i <= 5; ++i) write_file(sub / ("data_batch_" + std::to_string(i) + ".bin"), two_records(false, i, 0));
  write_file(sub / "test_batch.bin", two_records(false, 4, 4));
  const DatasetSplits s = load_cifar(dir.path(), CifarVariant::cifar10);
  EXPECT_EQ(s.train.size(), 10u);
  EXPECT_EQ(s.test.size(), 2u);
  EXPECT_EQ(s.test.channel_mean, s.train.channel_mean);
  EXPECT_EQ(s.test.channel_std, s.train.channel_std);
  EXPECT_GT(s.train.channel_mean[0], 0.0);
  EXPECT_THROW(load_cifar(dir.path(), CifarVariant::cifar100), FormatError);
}

TEST(Synth, SizesAndLabelHistogram) {
  Rng rng(1);
  const Dataset ds = synth_dataset(rng, 10, 20, 32);
  EXPECT_EQ(ds.images.shape(), Shape({200, 3, 32, 32}));
  std::map<int, int> hist;
  for (int l : ds.labels) ++hist[l];
  ASSERT_EQ(hist.size(), 10u);
  for (const auto& [label, count] : hist) EXPECT_EQ(count, 20) << label;
  for (double v : ds.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synth, NoiselessNearestTemplateIsPerfect) {
  Rng rng(2);
  const Dataset ds = synth_dataset(rng, 10, 3, 32, 0.0);
  std::vector<Tensor> templates;
  for (std::size_t c = 0; c < 10; ++c) templates.push_back(synth_template(c, 32));
  std::size_t correct = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < 10; ++c) {
      double d = 0.0;
      for (std::size_t p = 0; p < 3072; ++p) {
        const double diff = ds.images.plane(n, 0)[p] - templates[c][p];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += static_cast<int>(best) == ds.labels[n];
  }
  EXPECT_EQ(correct, ds.size());
}

TEST(Synth, SeedsChangePixelsNotLabels) {
  Rng a(3);
  Rng b(4);
  const Dataset x = synth_dataset(a, 4, 5, 8);
  const Dataset y = synth_dataset(b, 4, 5, 8);
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_NE(x.images, y.images);
  Rng c(3);
  EXPECT_EQ(synth_dataset(c, 4, 5, 8).images, x.images);
}

TEST(Synth, TooFewClassesThrows) {
  Rng rng(1);
  EXPECT_THROW(synth_dataset(rng, 1, 5, 8), ArgumentError);
}

TEST(GatherBatch, NormalizesWithDatasetStats) {
  Dataset ds;
  ds.images = Tensor({2, 3, 1, 1}, std::vector<double>{0.5, 0.2, 0.9, 0.1, 0.4, 0.6});
  ds.labels = {1, 0};
  ds.class_count = 2;
  ds.channel_mean = {0.5, 0.2, 0.4};
  ds.channel_std = {0.5, 0.1, 0.2};
  const std::vector<std::size_t> idx = {1};
  std::vector<int> labels;
  const Tensor b = gather_batch(ds, idx, &labels);
  EXPECT_EQ(labels, std::vector<int>{0});
  EXPECT_NEAR(b[0], -0.8, 1e-12);
  EXPECT_NEAR(b[1], 2.0, 1e-12);
  EXPECT_NEAR(b[2], 1.0, 1e-12);
  const std::vector<std::size_t> bad = {2};
  EXPECT_THROW(gather_batch(ds, bad, nullptr), ArgumentError);
}

TEST(Augment, CentredCropWithoutFlipIsIdentity) {
  Rng rng(5);
  Tensor x({2, 3, 32, 32});
  for (double& v : x.data()) v = rng.normal();
  const std::vector<CropFlip> params(2, CropFlip{4, 4, false});
  EXPECT_EQ(apply_crop_flips(x, params), x);
}

TEST(Augment, FlipMirrorsColumns) {
  Tensor x({1, 1, 32, 32});
  for (std::size_t w = 0; w < 32; ++w) x.at(0, 0, 3, w) = static_cast<double>(w);
  const std::vector<CropFlip> params = {CropFlip{4, 4, true}};
  const Tensor y = apply_crop_flips(x, params);
  for (std::size_t w = 0; w < 32; ++w) EXPECT_EQ(y.at(0, 0, 3, w), 31.0 - static_cast<double>(w));
}

TEST(Augment, ShiftBringsInZeroPadding) {
  const Tensor x({1, 1, 32, 32}, 1.0);
  const std::vector<CropFlip> params = {CropFlip{0, 8, false}};
  const Tensor y = apply_crop_flips(x, params);
  EXPECT_EQ(y.at(0, 0, 0, 0), 0.0);   // row above the image
  EXPECT_EQ(y.at(0, 0, 4, 27), 1.0);
  EXPECT_EQ(y.at(0, 0, 4, 28), 0.0);  // column right of the image
  EXPECT_EQ(y.sum(), 28.0 * 28.0);
}

TEST(Augment, ZerosStayZero) {
  Rng rng(6);
  const Tensor zeros({4, 3, 32, 32});
  EXPECT_EQ(augment_batch(rng, zeros), zeros);
}

TEST(Augment, OffsetsAndFlipsAreUniform) {
  Rng rng(7);
  const std::size_t n = 10000;
  const std::vector<CropFlip> draws = sample_crop_flips(rng, n);
  std::vector<double> joint(81, 0.0);
  std::vector<double> dy(9, 0.0);
  std::size_t flips = 0;
  for (const CropFlip& cf : draws) {
    ASSERT_LE(cf.dy, 8u);
    ASSERT_LE(cf.dx, 8u);
    joint[cf.dy * 9 + cf.dx] += 1.0;
    dy[cf.dy] += 1.0;
    flips += cf.flip;
  }
  auto chi2 = [&](const std::vector<double>& counts) {
    const double expected = static_cast<double>(n) / static_cast<double>(counts.size());
    double s = 0.0;
    for (double c : counts) s += (c - expected) * (c - expected) / expected;
    return s;
  };
  EXPECT_LT(chi2(joint), 112.3);  // df 80, p = 0.01
  EXPECT_LT(chi2(dy), 20.09);     // df 8, p = 0.01
  const double flip_rate = static_cast<double>(flips) / static_cast<double>(n);
  EXPECT_GE(flip_rate, 0.47);
  EXPECT_LE(flip_rate, 0.53);
}

TEST(Augment, WrongSizeThrows) {
  Rng rng(8);
  EXPECT_THROW(augment_batch(rng, Tensor({1, 3, 28, 28})), ShapeError);
}

TEST(Schedule, StepDecayAtBoundaries) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 149), 0.1);
  EXPECT_NEAR(learning_rate(cfg, 150), 0.01, 1e-15);
  EXPECT_NEAR(learning_rate(cfg, 224), 0.01, 1e-15);
  EXPECT_NEAR(learning_rate(cfg, 225), 0.001, 1e-15);
  EXPECT_NEAR(learning_rate(cfg, 299), 0.001, 1e-15);
}

TEST(Sgd, VanillaStep) {
  std::vector<double> w = {1.0};
  std::vector<double> g = {0.5};
  SgdMomentum opt(0.0, 0.0);
  opt.step({ParamRef{"l", "weight", w, g, true}}, 0.1);
  EXPECT_DOUBLE_EQ(w[0], 0.95);
}

TEST(Sgd, MomentumAndDecayHandComputed) {
  std::vector<double> w = {1.0, -2.0};
  std::vector<double> g = {0.5, 0.25};
  SgdMomentum opt(0.9, 1e-4);
  const std::vector<ParamRef> params = {ParamRef{"l", "weight", w, g, true}};
  opt.step(params, 0.1);
  // v1 = g + lambda w
  const double v1a = 0.5 + 1e-4 * 1.0;
  const double v1b = 0.25 + 1e-4 * -2.0;
  const double w1a = 1.0 - 0.1 * v1a;
  const double w1b = -2.0 - 0.1 * v1b;
  EXPECT_NEAR(w[0], w1a, 1e-12);
  EXPECT_NEAR(w[1], w1b, 1e-12);
  opt.step(params, 0.1);
  const double v2a = 0.9 * v1a + 0.5 + 1e-4 * w1a;
  const double v2b = 0.9 * v1b + 0.25 + 1e-4 * w1b;
  EXPECT_NEAR(w[0], w1a - 0.1 * v2a, 1e-12);
  EXPECT_NEAR(w[1], w1b - 0.1 * v2b, 1e-12);
  EXPECT_NEAR(opt.velocity()[0][0], v2a, 1e-12);
}

TEST(Sgd, UnflaggedParamsSkipWeightDecay) {
  std::vector<double> gamma = {1.0};
  std::vector<double> zero = {0.0};
  SgdMomentum opt(0.9, 0.5);
  opt.step({ParamRef{"bn", "gamma", gamma, zero, false}}, 0.1);
  EXPECT_EQ(gamma[0], 1.0);
}

TEST(Sgd, NetworkDecayFlagsCoverWeightsOnly) {
  Rng rng(1);
  Network net(toy_spec(), rng);
  for (const ParamRef& p : net.parameters()) EXPECT_EQ(p.decay, p.role == "weight") << p.layer << "." << p.role;
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
  cfg = TrainConfig{};
  cfg.base_lr = -1.0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
}

TEST(Training, FirstBatchLossNearUniform) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng data_rng(seed);
    const Dataset ds = synth_dataset(data_rng, 10, 13, 32);
    Rng init(seed);
    Network net(toy_spec(), init);
    std::vector<std::size_t> idx(128);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<int> labels;
    const Tensor x = gather_batch(ds, idx, &labels);
    const double loss = softmax_cross_entropy(net.forward(x, true), labels).loss;
    EXPECT_NEAR(loss, std::log(10.0), 0.3) << "seed " << seed;
  }
}

TEST(Training, SameSeedSameLog) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.base_lr = 0.05;
  cfg.decay_epochs = {1};
  cfg.seed = 9;
  std::string logs[2];
  for (std::string& log : logs) {
    Rng data_rng(4);
    const Dataset ds = synth_dataset(data_rng, 10, 4, 32);
    Rng init(5);
    Network net(toy_spec(), init);
    log = train(net, ds, &ds, cfg).to_csv();
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(logs[0].rfind("epoch,step,lr,loss,train_acc,test_acc\n", 0), 0u);
}

TEST(Training, StepCountAndPartialBatch) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.decay_epochs = {};
  cfg.batch_size = 16;
  cfg.augment = false;
  Rng data_rng(4);
  const Dataset ds = synth_dataset(data_rng, 10, 4, 32);  // 40 images: 16 + 16 + 8
  Rng init(5);
  Network net(toy_spec(), init);
  std::vector<LogRow> seen;
  const TrainingLog log = train(net, ds, nullptr, cfg, [&](const LogRow& r) { seen.push_back(r); });
  ASSERT_EQ(log.rows.size(), 3u);
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(log.rows.back().step, 9u);
  EXPECT_TRUE(std::isnan(log.rows.back().test_acc));

  cfg.max_steps = 4;
  Rng init2(5);
  Network net2(toy_spec(), init2);
  EXPECT_EQ(train(net2, ds, nullptr, cfg).rows.back().step, 4u);
}

TEST(Training, LossDecreasesOnToyData) {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.decay_epochs = {};
  cfg.batch_size = 32;
  cfg.base_lr = 0.05;
  cfg.augment = false;
  cfg.seed = 1;
  Rng data_rng(1);
  const Dataset ds = synth_dataset(data_rng, 10, 16, 32);
  Rng init(1);
  Network net(toy_spec(), init);
  const TrainingLog log = train(net, ds, nullptr, cfg);
  EXPECT_LT(log.rows.back().loss, log.rows.front().loss);
}

TEST(Training, HugeLearningRateDiverges) {
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.decay_epochs = {};
  cfg.batch_size = 8;
  cfg.base_lr = 1e12;
  cfg.augment = false;
  Rng data_rng(1);
  const Dataset ds = synth_dataset(data_rng, 10, 2, 32);
  Rng init(1);
  Network net(toy_spec(), init);
  EXPECT_THROW(train(net, ds, nullptr, cfg), DivergenceError);
}

TEST(Checkpoint, RoundTripRestoresEveryArray) {
  TempDir dir;
  const fs::path file = dir.path() / "net.ckpt";
  Rng rng(1);
  Network net(toy_spec(), rng);
  Rng xr(2);
  Tensor x({4, 3, 32, 32});
  for (double& v : x.data()) v = xr.normal();
  (void)net.forward(x, true);  // moves the BN running statistics
  save_checkpoint(file, net);

  Rng other(99);
  Network restored(toy_spec(), other);
  EXPECT_NE(flatten(restored), flatten(net));
  load_checkpoint(file, restored);
  EXPECT_EQ(flatten(restored), flatten(net));
  EXPECT_EQ(restored.forward(x, false), net.forward(x, false));
  EXPECT_EQ(parse_spec(checkpoint_spec_text(file)), net.spec());
}

TEST(Checkpoint, BadMagicLeavesNetworkUntouched) {
  TempDir dir;
  const fs::path file = dir.path() / "net.ckpt";
  Rng rng(1);
  Network net(toy_spec(), rng);
  save_checkpoint(file, net);
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  Rng other(2);
  Network target(toy_spec(), other);
  const std::vector<double> before = flatten(target);
  EXPECT_THROW(load_checkpoint(file, target), FormatError);
  EXPECT_EQ(flatten(target), before);
}

TEST(Checkpoint, ArchitectureMismatchAndTruncation) {
  TempDir dir;
  const fs::path file = dir.path() / "net.ckpt";
  Rng rng(1);
  Network net(toy_spec(), rng);
  save_checkpoint(file, net);

  Rng other(2);
  Network different(builtin_spec("dpdnet_cifar", 1.0, 1, 10), other);
  const std::vector<double> before = flatten(different);
  EXPECT_THROW(load_checkpoint(file, different), FormatError);
  EXPECT_EQ(flatten(different), before);

  fs::resize_file(file, fs::file_size(file) - 8);
  Rng third(3);
  Network same(toy_spec(), third);
  EXPECT_THROW(load_checkpoint(file, same), FormatError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.ckpt", same), FormatError);
}
