#include "srspace/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "srspace/png_io.hpp"

namespace fs = std::filesystem;

namespace srspace {

void DegradationConfig::validate() const {
  if (scale < 2) throw std::invalid_argument("DegradationConfig: scale must be >= 2");
  if (patch_size % scale != 0) {
    throw std::invalid_argument("DegradationConfig: patch_size must be divisible by scale");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("DegradationConfig: noise_sigma < 0");
}

double bicubic_kernel(double t, double a) {
  const double x = std::fabs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

namespace {

// Symmetric reflection with edge repeat: ..., 1, 0 | 0, 1, ..., n-1 | n-1, ...
int reflect_index(int j, int n) {
  const int period = 2 * n;
  int m = j % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

struct TapSet {
  int first;                    // first tap index (unreflected)
  std::vector<double> weights;  // normalized
};

// Per-output-sample taps for 1-D antialiased downsampling.
std::vector<TapSet> make_taps(int out_len, int scale) {
  std::vector<TapSet> taps(out_len);
  const double support = 2.0 * scale;
  for (int i = 0; i < out_len; ++i) {
    const double src = (i + 0.5) * scale - 0.5;
    const int lo = static_cast<int>(std::ceil(src - support));
    const int hi = static_cast<int>(std::floor(src + support));
    TapSet t;
    t.first = lo;
    t.weights.resize(hi - lo + 1);
    double sum = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double w = bicubic_kernel((src - j) / scale);
      t.weights[j - lo] = w;
      sum += w;
    }
    for (double& w : t.weights) w /= sum;
    taps[i] = t;
  }
  return taps;
}

}  // namespace

ImageTensor bicubic_downsample(const ImageTensor& img, int scale) {
  if (img.height() % scale != 0 || img.width() % scale != 0) {
    throw std::invalid_argument("bicubic_downsample: dimensions " + img.shape_str() +
                                " not divisible by scale " + std::to_string(scale));
  }
  const int C = img.channels();
  const int H = img.height(), W = img.width();
  const int outH = H / scale, outW = W / scale;

  // Horizontal pass.
  const auto col_taps = make_taps(outW, scale);
  Tensor mid(C, H, outW);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int ox = 0; ox < outW; ++ox) {
        const TapSet& t = col_taps[ox];
        double acc = 0.0;
        for (size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] * img.at(c, y, reflect_index(t.first + static_cast<int>(k), W));
        }
        mid.at(c, y, ox) = acc;
      }
    }
  }

  // Vertical pass.
  const auto row_taps = make_taps(outH, scale);
  Tensor out(C, outH, outW);
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < outH; ++oy) {
      const TapSet& t = row_taps[oy];
      for (int ox = 0; ox < outW; ++ox) {
        double acc = 0.0;
        for (size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] * mid.at(c, reflect_index(t.first + static_cast<int>(k), H), ox);
        }
        out.at(c, oy, ox) = acc;
      }
    }
  }
  return out;
}

std::vector<std::pair<int, int>> crop_positions(int height, int width, int patch_size,
                                                int count, uint64_t seed) {
  if (height < patch_size || width < patch_size) {
    throw std::invalid_argument("crop_positions: image smaller than patch size");
  }
  std::mt19937_64 gen(seed);
  std::vector<std::pair<int, int>> pos;
  pos.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int y0 = static_cast<int>(gen() % static_cast<uint64_t>(height - patch_size + 1));
    const int x0 = static_cast<int>(gen() % static_cast<uint64_t>(width - patch_size + 1));
    pos.emplace_back(y0, x0);
  }
  return pos;
}

std::vector<ImageTensor> crop_patches(const ImageTensor& img, const DegradationConfig& cfg,
                                      int count) {
  const auto pos = crop_positions(img.height(), img.width(), cfg.patch_size, count, cfg.rng_seed);
  std::vector<ImageTensor> patches;
  patches.reserve(count);
  for (const auto& [y0, x0] : pos) {
    ImageTensor p(img.channels(), cfg.patch_size, cfg.patch_size);
    for (int c = 0; c < img.channels(); ++c)
      for (int y = 0; y < cfg.patch_size; ++y)
        for (int x = 0; x < cfg.patch_size; ++x) p.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    patches.push_back(std::move(p));
  }
  return patches;
}

ImageTensor add_hr_noise(const ImageTensor& patch, double sigma_255, uint64_t seed) {
  if (sigma_255 < 0.0) throw std::invalid_argument("add_hr_noise: sigma must be >= 0");
  if (sigma_255 == 0.0) return patch;
  const double sigma = sigma_255 / 255.0;
  Rng rng(seed);
  ImageTensor out = patch;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i] + sigma * rng.normal(), 0.0, 1.0);
  }
  return out;
}

namespace {

std::vector<std::string> list_pngs(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::string format_sigma(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

DatasetManifest build_dataset(const std::string& hr_dir, const DegradationConfig& cfg,
                              const std::string& out_dir, const std::string& split,
                              int patches_per_image) {
  cfg.validate();
  if (split != "train" && split != "val") {
    throw std::invalid_argument("build_dataset: split must be 'train' or 'val'");
  }
  const auto names = list_pngs(hr_dir);
  if (names.empty()) throw std::runtime_error("build_dataset: no PNG files in " + hr_dir);

  fs::create_directories(fs::path(out_dir) / "hr");
  fs::create_directories(fs::path(out_dir) / "lr");

  DatasetManifest manifest;
  manifest.config = cfg;
  manifest.split = split;

  size_t decoded = 0;
  uint64_t entry_index = 0;
  for (size_t ii = 0; ii < names.size(); ++ii) {
    ImageTensor img;
    try {
      img = load_png((fs::path(hr_dir) / names[ii]).string());
    } catch (const std::exception& e) {
      std::cerr << "build_dataset: skipping " << names[ii] << ": " << e.what() << "\n";
      continue;
    }
    ++decoded;

    DegradationConfig per_image = cfg;
    per_image.rng_seed = mix_seed(cfg.rng_seed, ii);
    const auto positions = crop_positions(img.height(), img.width(), cfg.patch_size,
                                          patches_per_image, per_image.rng_seed);

    const std::string stem = fs::path(names[ii]).stem().string();
    for (int pi = 0; pi < patches_per_image; ++pi) {
      const auto [y0, x0] = positions[pi];
      ImageTensor crop(img.channels(), cfg.patch_size, cfg.patch_size);
      for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < cfg.patch_size; ++y)
          for (int x = 0; x < cfg.patch_size; ++x) crop.at(c, y, x) = img.at(c, y0 + y, x0 + x);

      const uint64_t noise_seed = mix_seed(cfg.rng_seed, 1000000 + entry_index);
      // LR from the clean crop; noise goes on the HR training target only.
      const ImageTensor lr = bicubic_downsample(crop, cfg.scale);
      const ImageTensor hr_target =
          split == "train" ? add_hr_noise(crop, cfg.noise_sigma, noise_seed) : crop;

      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_p%02d.png", pi);
      const std::string hr_rel = "hr/" + stem + suffix;
      const std::string lr_rel = "lr/" + stem + suffix;
      save_png((fs::path(out_dir) / hr_rel).string(), hr_target);
      save_png((fs::path(out_dir) / lr_rel).string(), lr);

      manifest.entries.push_back({hr_rel, lr_rel, y0, x0, noise_seed});
      ++entry_index;
    }
  }
  if (decoded == 0) throw std::runtime_error("build_dataset: no decodable image in " + hr_dir);

  save_manifest(manifest, (fs::path(out_dir) / "manifest.txt").string());
  return manifest;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
  f << "# srspace dataset manifest v1\n";
  f << "split " << m.split << "\n";
  f << "scale " << m.config.scale << "\n";
  f << "patch " << m.config.patch_size << "\n";
  f << "noise_sigma " << format_sigma(m.config.noise_sigma) << "\n";
  f << "seed " << m.config.rng_seed << "\n";
  f << "count " << m.entries.size() << "\n";
  for (const auto& e : m.entries) {
    f << "entry " << e.hr_path << " " << e.lr_path << " " << e.y0 << " " << e.x0 << " " << e.seed
      << "\n";
  }
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "split") {
      ss >> m.split;
    } else if (key == "scale") {
      ss >> m.config.scale;
    } else if (key == "patch") {
      ss >> m.config.patch_size;
    } else if (key == "noise_sigma") {
      ss >> m.config.noise_sigma;
    } else if (key == "seed") {
      ss >> m.config.rng_seed;
    } else if (key == "entry") {
      ManifestEntry e;
      ss >> e.hr_path >> e.lr_path >> e.y0 >> e.x0 >> e.seed;
      m.entries.push_back(e);
    }
  }
  return m;
}

}  // namespace srspace
