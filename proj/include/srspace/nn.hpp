#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srspace/tensor.hpp"

namespace srspace {

// Learnable tensor. Gradients are written either directly into `grad`
// (single-threaded paths) or into per-sample GradSink buffers that are
// reduced in a fixed order, so training results never depend on thread
// scheduling.
struct ParamTensor {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
  int id = -1;

  void resize(size_t n) {
    value.assign(n, 0.0);
    grad.assign(n, 0.0);
  }
};

// Models hand out their parameters as vectors collected on demand (so moving
// a model never leaves stale pointers behind). finalize_params assigns the
// ids GradSink uses; models call it once at construction.
void finalize_params(const std::vector<ParamTensor*>& params);
void zero_grads(const std::vector<ParamTensor*>& params);
size_t total_param_count(const std::vector<ParamTensor*>& params);

// Per-sample gradient buffers, indexed by param id.
class GradSink {
 public:
  void init(const std::vector<ParamTensor*>& params) {
    buffers_.resize(params.size());
    for (const auto* p : params) buffers_[p->id].assign(p->value.size(), 0.0);
  }
  void zero() {
    for (auto& b : buffers_) std::fill(b.begin(), b.end(), 0.0);
  }
  std::vector<double>& of(const ParamTensor& p) { return buffers_[p.id]; }
  const std::vector<double>& of(const ParamTensor& p) const { return buffers_[p.id]; }

  // Adds scaled buffers into param grads, in param order.
  void reduce_into(const std::vector<ParamTensor*>& params, double scale) const {
    for (auto* p : params) {
      const auto& b = buffers_[p->id];
      for (size_t i = 0; i < b.size(); ++i) p->grad[i] += scale * b[i];
    }
  }

 private:
  std::vector<std::vector<double>> buffers_;
};

// 2-D convolution, stride 1, zero padding ksize/2 ("same"). Weight layout is
// [out][in][ky][kx]; forward/backward run as im2col + Eigen GEMM.
struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int ksize = 3;
  ParamTensor weight;
  ParamTensor bias;

  Conv2d() = default;
  Conv2d(int in, int out, int k);

  void init_he(Rng& rng);
  void init_zero();
  // Names the two params and appends them to `out` (ids set by finalize).
  void collect(std::vector<ParamTensor*>& out, const std::string& prefix);

  Tensor forward(const Tensor& x) const;
  // Returns dx; accumulates weight/bias grads into `gs`.
  Tensor backward(const Tensor& x, const Tensor& dy, GradSink& gs) const;
  // Returns dx only (frozen weights).
  Tensor backward_data(const Tensor& dy) const;
};

Tensor relu(const Tensor& x);
// dy masked by the sign of the pre-activation x.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

Tensor avg_pool(const Tensor& x, int factor);
Tensor avg_pool_backward(const Tensor& x_shape_like, const Tensor& dy, int factor);

Tensor nearest_upsample(const Tensor& x, int factor);
Tensor nearest_upsample_backward(const Tensor& x_shape_like, const Tensor& dy, int factor);

// Space-to-depth: (C,H,W) -> (C*f*f, H/f, W/f). Output channel order is
// c*f*f + dy*f + dx for input channel c and sub-pixel offset (dy,dx).
Tensor space_to_depth(const Tensor& x, int factor);
Tensor depth_to_space(const Tensor& x, int factor);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over an explicit param list (lets callers train a subset, e.g. flow
// params with a frozen encoder).
class Adam {
 public:
  Adam(const std::vector<ParamTensor*>& params, const AdamConfig& cfg);
  void step(double lr);

 private:
  std::vector<ParamTensor*> params_;
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// lr_t for cosine annealing from lr0 to 0 over `total` steps.
double cosine_lr(double lr0, int step, int total);

// Scales grads so their global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables.
double clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm);

}  // namespace srspace
