#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "srspace/tensor.hpp"

namespace srspace::test {

// Unique temp directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = (std::filesystem::temp_directory_path() /
             ("srspace_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++)))
                .string();
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

// Textured synthetic image: smooth gradient + two oriented sinusoids + soft
// rectangles. Structured enough for the flow/encoder to learn from at desk
// scale, deterministic per seed.
inline ImageTensor make_toy_image(uint64_t seed, int height, int width, int channels = 3) {
  Rng rng(seed);
  ImageTensor img(channels, height, width);

  const double gx = 0.4 * (rng.uniform() - 0.5);
  const double gy = 0.4 * (rng.uniform() - 0.5);
  const double base = 0.35 + 0.3 * rng.uniform();

  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave w1{(1.0 + 3.0 * rng.uniform()) / width, (1.0 + 3.0 * rng.uniform()) / height,
          6.283 * rng.uniform(), 0.10 + 0.08 * rng.uniform()};
  Wave w2{(4.0 + 6.0 * rng.uniform()) / width, (4.0 + 6.0 * rng.uniform()) / height,
          6.283 * rng.uniform(), 0.05 + 0.05 * rng.uniform()};

  struct Rect {
    int x0, y0, x1, y1;
    double color[3];
  };
  Rect rects[3];
  for (auto& r : rects) {
    const int rx = static_cast<int>(rng.below(width));
    const int ry = static_cast<int>(rng.below(height));
    const int rw = 2 + static_cast<int>(rng.below(std::max(2, width / 3)));
    const int rh = 2 + static_cast<int>(rng.below(std::max(2, height / 3)));
    r = {rx, ry, std::min(width, rx + rw), std::min(height, ry + rh),
         {rng.uniform(), rng.uniform(), rng.uniform()}};
  }
  double chan_off[3] = {0, 0, 0};
  for (int c = 0; c < channels && c < 3; ++c) chan_off[c] = 0.15 * (rng.uniform() - 0.5);

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double s1 = w1.amp * std::sin(6.283185307 * (w1.fx * x + w1.fy * y) + w1.phase);
      const double s2 = w2.amp * std::sin(6.283185307 * (w2.fx * x + w2.fy * y) + w2.phase);
      for (int c = 0; c < channels; ++c) {
        double v = base + gx * x / width + gy * y / height + s1 + s2 + chan_off[c % 3];
        for (const auto& r : rects) {
          if (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1) {
            v = 0.55 * v + 0.45 * r.color[c % 3];
          }
        }
        img.at(c, y, x) = std::clamp(v, 0.02, 0.98);
      }
    }
  }
  return img;
}

inline ImageTensor random_image(Rng& rng, int channels, int height, int width) {
  ImageTensor img(channels, height, width);
  for (size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return img;
}

// Relative error with an absolute floor, for finite-difference checks.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::fabs(a - b) / std::max({floor, std::fabs(a), std::fabs(b)});
}

}  // namespace srspace::test
