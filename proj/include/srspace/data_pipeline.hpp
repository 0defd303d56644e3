#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srspace/tensor.hpp"

namespace srspace {

struct DegradationConfig {
  int scale = 4;
  int patch_size = 32;            // HR pixels; must be divisible by scale
  double noise_sigma = 4.0 / 1.7320508075688772;  // on the 0..255 intensity scale
  uint64_t rng_seed = 0;

  void validate() const;
};

struct ManifestEntry {
  std::string hr_path;  // relative to the manifest directory
  std::string lr_path;
  int y0 = 0;           // HR crop origin in the source image
  int x0 = 0;
  uint64_t seed = 0;    // per-entry noise seed
};

struct DatasetManifest {
  DegradationConfig config;
  std::string split = "train";  // "train" or "val"
  std::vector<ManifestEntry> entries;
};

// Cubic convolution kernel W(t). a is the cubic coefficient, -0.5 by
// convention (the kernel behind MATLAB-style bicubic resampling).
double bicubic_kernel(double t, double a = -0.5);

// Antialiased bicubic downsampling by an integer factor, matching the
// MATLAB-convention downscaler: output sample i maps to source coordinate
// src = (i + 0.5) * scale - 0.5; taps run over j in [ceil(src - 2*scale),
// floor(src + 2*scale)] with weight W((src - j) / scale); out-of-range taps
// reflect symmetrically (... 1, 0 | 0, 1, ..., n-1 | n-1, n-2 ...) and the
// weights are renormalized to sum to 1. Applied separably, rows then columns.
// Throws std::invalid_argument if the dimensions are not divisible by scale.
ImageTensor bicubic_downsample(const ImageTensor& img, int scale);

// `count` patches of cfg.patch_size^2, positions drawn from
// std::mt19937_64(cfg.rng_seed): for each patch, y0 = next() % (H - P + 1)
// then x0 = next() % (W - P + 1). Throws if the image is smaller than the
// patch in either dimension.
std::vector<ImageTensor> crop_patches(const ImageTensor& img, const DegradationConfig& cfg,
                                      int count);
// Same draw sequence, coordinates only.
std::vector<std::pair<int, int>> crop_positions(int height, int width, int patch_size,
                                                int count, uint64_t seed);

// Adds i.i.d. zero-mean Gaussian noise with std sigma_255/255 in [0,1] space,
// then clamps to [0,1]. Values are drawn per element in (c,y,x) order from
// Rng(seed). sigma_255 == 0 returns the input unchanged.
ImageTensor add_hr_noise(const ImageTensor& patch, double sigma_255, uint64_t seed);

// Builds LR/HR pairs from every decodable PNG in hr_dir (sorted by file
// name): crops `patches_per_image` HR patches per image (per-image crop seed
// mix_seed(cfg.rng_seed, image_index)), adds noise to the HR target when
// split == "train" (LR always comes from the clean crop), and writes
// hr/<stem>_pNN.png, lr/<stem>_pNN.png and manifest.txt under out_dir.
// Undecodable files are skipped with a warning; throws if hr_dir has no
// usable image.
DatasetManifest build_dataset(const std::string& hr_dir, const DegradationConfig& cfg,
                              const std::string& out_dir, const std::string& split,
                              int patches_per_image);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace srspace
