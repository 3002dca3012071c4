#include "dpd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "dpd/errors.hpp"

namespace dpd {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

fs::path locate(const fs::path& dir, const char* subdir, const std::string& file) {
  if (fs::exists(dir / file)) return dir / file;
  if (fs::exists(dir / subdir / file)) return dir / subdir / file;
  throw FormatError("missing '" + file + "' under '" + dir.string() + "'");
}

}  // namespace

void Dataset::validate() const {
  const Shape s = images.shape();
  if (s.n != labels.size()) throw ShapeError("dataset: image count and label count differ");
  if (s.c != 3) throw ShapeError("dataset: images must have 3 channels");
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_count) {
      throw CorruptDataError("dataset: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(class_count) + ")");
    }
  }
  for (double sd : channel_std) {
    if (!(sd > 0.0)) throw CorruptDataError("dataset: channel std must be positive");
  }
}

std::size_t cifar_record_size(CifarVariant variant) {
  return variant == CifarVariant::cifar10 ? 1 + kCifarPixels : 2 + kCifarPixels;
}

std::size_t cifar_class_count(CifarVariant variant) {
  return variant == CifarVariant::cifar10 ? 10 : 100;
}

Dataset read_cifar_files(std::span<const fs::path> files, CifarVariant variant) {
  const std::size_t record = cifar_record_size(variant);
  const std::size_t label_bytes = record - kCifarPixels;
  std::vector<std::vector<unsigned char>> blobs;
  std::size_t total = 0;
  for (const fs::path& f : files) {
    blobs.push_back(read_bytes(f));
    if (blobs.back().size() % record != 0) {
      throw FormatError("'" + f.string() + "': size " + std::to_string(blobs.back().size()) +
                        " is not a multiple of the " + std::to_string(record) + "-byte record");
    }
    total += blobs.back().size() / record;
  }

  Dataset ds;
  ds.class_count = cifar_class_count(variant);
  ds.images = Tensor({total, 3, kCifarSide, kCifarSide});
  ds.labels.reserve(total);
  std::size_t n = 0;
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    const auto& bytes = blobs[b];
    for (std::size_t off = 0; off < bytes.size(); off += record, ++n) {
      // The fine label is the last label byte in both layouts.
      const int label = bytes[off + label_bytes - 1];
      if (static_cast<std::size_t>(label) >= ds.class_count) {
        throw CorruptDataError("'" + files[b].string() + "' record " + std::to_string(off / record) +
                               ": label " + std::to_string(label) + " >= " + std::to_string(ds.class_count));
      }
      ds.labels.push_back(label);
      double* dst = ds.images.plane(n, 0);
      const unsigned char* src = bytes.data() + off + label_bytes;
      for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = src[i] / 255.0;
    }
  }
  return ds;
}

void compute_channel_stats(Dataset& ds) {
  const Shape s = ds.images.shape();
  const std::size_t hw = s.h * s.w;
  const double count = static_cast<double>(s.n * hw);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* p = ds.images.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mean = count > 0 ? sum / count : 0.0;
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* p = ds.images.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double sd = count > 0 ? std::sqrt(sq / count) : 0.0;
    ds.channel_mean[c] = mean;
    ds.channel_std[c] = sd > 0.0 ? sd : 1.0;
  }
}

DatasetSplits load_cifar(const fs::path& dir, CifarVariant variant) {
  std::vector<fs::path> train_files;
  std::vector<fs::path> test_files;
  if (variant == CifarVariant::cifar10) {
    for (int i = 1; i <= 5; ++i) {
      train_files.push_back(locate(dir, "cifar-10-batches-bin", "data_batch_" + std::to_string(i) + ".bin"));
    }
    test_files.push_back(locate(dir, "cifar-10-batches-bin", "test_batch.bin"));
  } else {
    train_files.push_back(locate(dir, "cifar-100-binary", "train.bin"));
    test_files.push_back(locate(dir, "cifar-100-binary", "test.bin"));
  }
  DatasetSplits splits{read_cifar_files(train_files, variant), read_cifar_files(test_files, variant)};
  compute_channel_stats(splits.train);
  splits.test.channel_mean = splits.train.channel_mean;
  splits.test.channel_std = splits.train.channel_std;
  return splits;
}

Tensor synth_template(std::size_t cls, std::size_t hw) {
  Rng rng = Rng(0x7e3a1c5dULL).fork(cls);
  Tensor t({1, 3, hw, hw});
  const double angle = std::numbers::pi * rng.uniform();
  const double freq = 1.0 + 3.0 * rng.uniform();
  const double kx = std::cos(angle) * freq * 2.0 * std::numbers::pi / static_cast<double>(hw);
  const double ky = std::sin(angle) * freq * 2.0 * std::numbers::pi / static_cast<double>(hw);
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = 0.3 + 0.4 * rng.uniform();
    const double amp = 0.1 + 0.1 * rng.uniform();
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    for (std::size_t y = 0; y < hw; ++y) {
      for (std::size_t x = 0; x < hw; ++x) {
        t.at(0, c, y, x) = base + amp * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
      }
    }
  }
  return t;
}

Dataset synth_dataset(Rng& rng, std::size_t classes, std::size_t per_class, std::size_t hw, double noise) {
  if (classes < 2) throw ArgumentError("synth_dataset: need at least 2 classes");
  if (hw == 0) throw ArgumentError("synth_dataset: image size must be positive");
  Dataset ds;
  ds.class_count = classes;
  ds.images = Tensor({classes * per_class, 3, hw, hw});
  ds.labels.reserve(classes * per_class);
  const std::size_t pixels = 3 * hw * hw;
  std::size_t n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const Tensor tmpl = synth_template(c, hw);
    for (std::size_t i = 0; i < per_class; ++i, ++n) {
      double* dst = ds.images.plane(n, 0);
      for (std::size_t p = 0; p < pixels; ++p) {
        const double v = tmpl[p] + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0);
        dst[p] = std::clamp(v, 0.0, 1.0);
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  compute_channel_stats(ds);
  return ds;
}

DatasetSplits synth_splits(std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t hw,
                           double noise) {
  Rng rng = Rng(seed).fork(100);
  DatasetSplits s;
  s.train = synth_dataset(rng, classes, per_class, hw, noise);
  s.test = synth_dataset(rng, classes, std::max<std::size_t>(1, per_class / 5), hw, noise);
  s.test.channel_mean = s.train.channel_mean;
  s.test.channel_std = s.train.channel_std;
  return s;
}

Tensor gather_batch(const Dataset& ds, std::span<const std::size_t> indices, std::vector<int>* labels) {
  const Shape s = ds.images.shape();
  Tensor batch({indices.size(), s.c, s.h, s.w});
  const std::size_t hw = s.h * s.w;
  if (labels) labels->clear();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t n = indices[b];
    if (n >= s.n) throw ArgumentError("gather_batch: index " + std::to_string(n) + " out of range");
    for (std::size_t c = 0; c < s.c; ++c) {
      const double mean = ds.channel_mean[c];
      const double inv = 1.0 / ds.channel_std[c];
      const double* src = ds.images.plane(n, c);
      double* dst = batch.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * inv;
    }
    if (labels) labels->push_back(ds.labels[n]);
  }
  return batch;
}

std::vector<CropFlip> sample_crop_flips(Rng& rng, std::size_t count) {
  std::vector<CropFlip> out(count);
  for (CropFlip& cf : out) {
    cf.dy = rng.uniform_int(2 * kAugmentPad + 1);
    cf.dx = rng.uniform_int(2 * kAugmentPad + 1);
    cf.flip = rng.bernoulli(0.5);
  }
  return out;
}

Tensor apply_crop_flips(const Tensor& batch, std::span<const CropFlip> params) {
  const Shape s = batch.shape();
  if (s.h != kAugmentSize || s.w != kAugmentSize) {
    throw ShapeError("augment: expected 32x32 images, got " + s.str());
  }
  if (params.size() != s.n) throw ArgumentError("augment: one crop/flip per image required");
  Tensor out(s);
  const long side = static_cast<long>(kAugmentSize);
  const long pad = static_cast<long>(kAugmentPad);
  for (std::size_t n = 0; n < s.n; ++n) {
    const CropFlip& cf = params[n];
    if (cf.dy > 2 * kAugmentPad || cf.dx > 2 * kAugmentPad) throw ArgumentError("augment: crop offset out of range");
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = batch.plane(n, c);
      double* dst = out.plane(n, c);
      for (long y = 0; y < side; ++y) {
        const long sy = y + static_cast<long>(cf.dy) - pad;
        if (sy < 0 || sy >= side) continue;
        for (long x = 0; x < side; ++x) {
          const long ox = cf.flip ? side - 1 - x : x;
          const long sx = x + static_cast<long>(cf.dx) - pad;
          if (sx < 0 || sx >= side) continue;
          dst[y * side + ox] = src[sy * side + sx];
        }
      }
    }
  }
  return out;
}

Tensor augment_batch(Rng& rng, const Tensor& batch) {
  const std::vector<CropFlip> params = sample_crop_flips(rng, batch.shape().n);
  return apply_crop_flips(batch, params);
}

}  // namespace dpd
