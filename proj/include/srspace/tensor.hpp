#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace srspace {

// Dense CHW tensor of doubles. Channel planes are contiguous, so a channel
// can be viewed as an H*W row. All model math runs in double precision.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<size_t>(channels) * height * width, 0.0) {
    if (channels < 1 || height < 1 || width < 1) {
      throw std::invalid_argument("Tensor: dimensions must be >= 1");
    }
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * height_ + y) * width_ + x];
  }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* channel(int c) { return data_.data() + static_cast<size_t>(c) * height_ * width_; }
  const double* channel(int c) const {
    return data_.data() + static_cast<size_t>(c) * height_ * width_;
  }

  bool same_shape(const Tensor& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  std::string shape_str() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" +
           std::to_string(width_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Images are tensors whose values live in [0,1]; clamping is applied at I/O
// boundaries (PNG export), not on every intermediate result.
using ImageTensor = Tensor;

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double max_abs_diff(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);
Tensor clamp01(Tensor t);

// Deterministic random stream: std::mt19937_64 core (bit-exact across
// platforms per the standard) with an explicit Box-Muller normal transform,
// so normal draws do not depend on the C++ library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0,1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0,1], used where log(0) must be avoided.
  double uniform_pos() { return ((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double normal();

  // Uniform integer in [0, n). n must be > 0. Modulo reduction; the tiny
  // bias is irrelevant at these ranges and keeps the stream easy to audit.
  uint64_t below(uint64_t n) { return next_u64() % n; }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 step, used to derive independent child seeds from a base seed.
uint64_t mix_seed(uint64_t base, uint64_t salt);

}  // namespace srspace
