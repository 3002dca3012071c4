#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dpd/rng.hpp"
#include "dpd/tensor.hpp"

namespace dpd {

/// Labelled images, (N, 3, H, W) with pixel values in [0, 1]. Per-channel
/// mean/std are the normalization constants applied when batches are drawn;
/// a test split carries its training split's statistics.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::array<double, 3> channel_mean{0.0, 0.0, 0.0};
  std::array<double, 3> channel_std{1.0, 1.0, 1.0};

  std::size_t size() const noexcept { return labels.size(); }
  // Throws CorruptDataError / ShapeError on broken invariants.
  void validate() const;
};

enum class CifarVariant { cifar10, cifar100 };

// 3073-byte records (label, 3072 pixels) or 3074-byte records (coarse label,
// fine label, 3072 pixels). Pixels are channel-planar R, G, B, each a
// row-major 32x32 plane.
std::size_t cifar_record_size(CifarVariant variant);
std::size_t cifar_class_count(CifarVariant variant);

// Reads and concatenates record files; statistics are left at (0, 1).
// cifar100 keeps the fine label.
Dataset read_cifar_files(std::span<const std::filesystem::path> files, CifarVariant variant);

struct DatasetSplits {
  Dataset train;
  Dataset test;
};

// Standard binary distribution layout: data_batch_{1..5}.bin + test_batch.bin
// (cifar10) or train.bin + test.bin (cifar100), either directly in `dir` or
// in the archive's cifar-10-batches-bin / cifar-100-binary subdirectory.
// Normalization statistics come from the training split only.
DatasetSplits load_cifar(const std::filesystem::path& dir, CifarVariant variant);

void compute_channel_stats(Dataset& ds);

// Class `cls`'s noiseless image: a colour offset plus an oriented sinusoid.
// Independent of any run seed.
Tensor synth_template(std::size_t cls, std::size_t hw);

// per_class images of every class: template + N(0, noise^2) per pixel,
// clipped to [0, 1]. Labels are grouped by class. classes < 2 throws.
Dataset synth_dataset(Rng& rng, std::size_t classes, std::size_t per_class, std::size_t hw,
                      double noise = 0.1);

// Train split of per_class images per class and a test split of
// max(1, per_class / 5), both drawn from Rng(seed).fork(100); the test split
// carries the train statistics.
DatasetSplits synth_splits(std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t hw,
                           double noise = 0.1);

// (images[indices] - mean) / std.
Tensor gather_batch(const Dataset& ds, std::span<const std::size_t> indices, std::vector<int>* labels);

// Pad-4 random crop + horizontal flip for 32x32 images.
struct CropFlip {
  std::size_t dy = 4;
  std::size_t dx = 4;
  bool flip = false;
};

constexpr std::size_t kAugmentPad = 4;
constexpr std::size_t kAugmentSize = 32;

// Offsets uniform over {0..8}^2, flip with probability 1/2.
std::vector<CropFlip> sample_crop_flips(Rng& rng, std::size_t count);

// Zero-pads each image by 4 pixels, takes the 32x32 window at (dy, dx) of the
// 40x40 padded image, then mirrors horizontally if requested.
Tensor apply_crop_flips(const Tensor& batch, std::span<const CropFlip> params);

Tensor augment_batch(Rng& rng, const Tensor& batch);

}  // namespace dpd
