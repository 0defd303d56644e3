#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "srspace/data_pipeline.hpp"
#include "srspace/nn.hpp"
#include "srspace/sample_stack.hpp"
#include "srspace/tensor.hpp"

namespace srspace {

// Conditional normalizing flow for super-resolution: a Glow-style stack of
// squeeze -> K x (actnorm, invertible 1x1 channel mix, conditional affine
// coupling) per level. Every coupling layer consumes features from a small
// residual LR encoder, resampled to the level's resolution. The encoder also
// carries an upsampling head trained by L1 regression; that head doubles as
// the deterministic regressive baseline.
struct FlowConfig {
  int scale = 4;          // power of two
  int in_channels = 3;
  int levels = 2;         // one squeeze before each level
  int steps_per_level = 4;
  int hidden_channels = 32;  // coupling subnet width
  int cond_channels = 16;    // conditioning channels fed to each coupling
  int encoder_channels = 64;
  int encoder_blocks = 3;

  void validate() const;
};

struct FlowForward {
  Tensor z;       // same total element count as y
  double logdet;  // exact sum of per-layer log-determinant contributions
};

struct LatentShape {
  int channels, height, width;
};

// Training configuration. Stage 1 pretrains the LR encoder + SR head with L1
// regression; stage 2 freezes them and minimizes NLL over the flow params.
struct FlowTrainConfig {
  int encoder_iters = 400;
  double encoder_lr = 1e-3;
  int flow_iters = 2000;
  double flow_lr = 5e-4;
  int batch_size = 16;
  uint64_t seed = 0;
  double grad_clip = 10.0;   // global-norm clip; <= 0 disables
  std::string log_path;      // per-step loss log; empty = no file
};

class FlowModel {
 public:
  FlowModel(const FlowConfig& cfg, uint64_t init_seed);

  FlowModel(const FlowModel&) = delete;
  FlowModel& operator=(const FlowModel&) = delete;
  FlowModel(FlowModel&&) = default;
  FlowModel& operator=(FlowModel&&) = default;

  const FlowConfig& config() const { return cfg_; }

  // Deterministic conditioning features (encoder output at LR resolution).
  Tensor encode_lr(const Tensor& x) const;

  // Regressive baseline: nearest-neighbor upsample + learned correction.
  Tensor baseline_sr(const Tensor& x) const;

  // z = f(y; x) with the exact log|det J|. Throws on shape mismatch or
  // non-finite input.
  FlowForward forward_flow(const Tensor& y, const Tensor& x) const;

  // Exact layer-by-layer algebraic inverse. Output is not clamped; clamping
  // happens at image export.
  Tensor inverse_flow(const Tensor& z, const Tensor& x) const;

  // -log p(y|x) = 0.5*|z|^2 + 0.5*D*log(2*pi) - logdet (nats, total over the
  // D latent elements).
  double nll_loss(const Tensor& y, const Tensor& x) const;

  // NLL plus parameter gradients (encoder included) accumulated into gs.
  double nll_backward(const Tensor& y, const Tensor& x, GradSink& gs) const;
  // Same, starting from precomputed encoder features; encoder params are
  // skipped (frozen-encoder training path).
  double nll_backward_from_features(const Tensor& y, const Tensor& feats, GradSink& gs) const;

  // L1 regression loss of the baseline head, with gradients (encoder stage).
  double baseline_l1_backward(const Tensor& y, const Tensor& x, GradSink& gs) const;

  // Draws z = tau * eps elementwise (eps standard normal from Rng(seed), in
  // linear element order) and returns inverse_flow(z, x).
  Tensor sample(const Tensor& x, double temperature, uint64_t seed) const;

  // samples[i] = sample(x, tau, seeds[i]); seeds must be pairwise distinct.
  // Samples are generated independently and may run in parallel; the result
  // does not depend on scheduling.
  SampleStack sample_stack(const Tensor& x, double temperature,
                           const std::vector<uint64_t>& seeds) const;

  LatentShape latent_shape(int lr_height, int lr_width) const;

  // Data-dependent actnorm init over a batch (per-channel zero mean / unit
  // variance at each actnorm input). No-op if already initialized.
  void init_actnorm(const std::vector<Tensor>& ys, const std::vector<Tensor>& xs);
  bool actnorm_initialized() const { return actnorm_initialized_; }

  std::vector<ParamTensor*> all_params();
  std::vector<ParamTensor*> encoder_params();  // encoder + head
  std::vector<ParamTensor*> flow_params();     // cond adapters + flow steps

  void save(const std::string& path) const;
  static FlowModel load(const std::string& path);

  // Replaces all parameters with a seeded random draw (well-conditioned 1x1
  // mixes, bounded couplings) and marks actnorm initialized. Test hook for
  // invertibility / log-det / gradient checks on nontrivial flows.
  void randomize_params(uint64_t seed, double amplitude = 1.0);

 private:
  struct ActNorm {
    ParamTensor log_scale, bias;
    int ch = 0;
  };
  struct Inv1x1 {
    ParamTensor weight;  // ch x ch, row-major
    int ch = 0;
  };
  struct Coupling {
    Conv2d net1;  // 3x3: (ca + cond) -> hidden
    Conv2d net2;  // 1x1: hidden -> 2*cb, zero-init
    int ca = 0, cb = 0;
  };
  struct FlowStep {
    ActNorm actnorm;
    Inv1x1 mix;
    Coupling coupling;
  };
  struct FlowLevel {
    Conv2d cond_conv;  // encoder features -> cond channels
    int up = 1, down = 1;  // feature resampling to the level resolution
    int channels = 0;
    std::vector<FlowStep> steps;
  };
  struct ResBlock {
    Conv2d c1, c2;
  };

  struct Tape;  // defined in flow.cpp

  void build(uint64_t init_seed);
  void collect_all(std::vector<ParamTensor*>& out);
  void check_pair(const Tensor& y, const Tensor& x) const;
  std::vector<Tensor> make_conds(const Tensor& feats) const;
  Tensor encoder_features(const Tensor& x, Tape* tape) const;
  FlowForward run_forward(const Tensor& y, const std::vector<Tensor>& conds, Tape* tape) const;
  double nll_backward_impl(const Tensor& y, const Tensor* x, const Tensor* feats,
                           GradSink& gs) const;

  FlowConfig cfg_;
  Conv2d enc_in_;
  std::vector<ResBlock> enc_blocks_;
  Conv2d head_;  // encoder features -> in_ch*scale^2, zero-init
  std::vector<FlowLevel> levels_;
  bool actnorm_initialized_ = false;
};

// Trains on the manifest's LR/HR pairs (paths resolved against
// manifest_dir). Deterministic per tcfg.seed; throws on NaN loss with a
// step diagnostic.
FlowModel train_flow(const DatasetManifest& manifest, const std::string& manifest_dir,
                     const FlowConfig& cfg, const FlowTrainConfig& tcfg);

// In-memory variant used by tests and the sweep.
FlowModel train_flow_pairs(const std::vector<Tensor>& hr, const std::vector<Tensor>& lr,
                           const FlowConfig& cfg, const FlowTrainConfig& tcfg);

}  // namespace srspace
