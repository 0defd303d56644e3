#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srspace/metrics.hpp"
#include "srspace/nn.hpp"
#include "srspace/sample_stack.hpp"
#include "srspace/tensor.hpp"

namespace srspace {

struct FusionConfig {
  int k_in = 10;      // samples consumed (first k_in of the stack)
  int channels = 3;
  int width = 64;     // residual-block channel count
  int blocks = 2;
  std::string variant = "l1";  // "l1" or "lpips"

  void validate() const;
};

struct FusionTrainConfig {
  int iterations = 500;       // reference setting is 10000
  double initial_lr = 2e-4;   // cosine-annealed to 0
  int batch_size = 4;
  uint64_t seed = 0;
  double grad_clip = 10.0;
  std::string log_path;
};

// One training example: a cached sample stack and its HR target.
struct FusionPair {
  SampleStack stack;
  ImageTensor target;
};

// Mean absolute per-element difference. Throws on shape mismatch.
double l1_loss(const ImageTensor& pred, const ImageTensor& target);

// Residual fusion network over a fixed-size sample stack: the first k_in
// samples are channel-concatenated (in stack order), projected to `width`
// channels, passed through `blocks` residual blocks, and projected back to
// image channels. The output projection is zero-initialized and the result
// is added to the pixelwise average of the k_in samples, so an untrained net
// reproduces the average ensemble exactly.
class FusionNet {
 public:
  FusionNet(const FusionConfig& cfg, uint64_t init_seed);

  FusionNet(const FusionNet&) = delete;
  FusionNet& operator=(const FusionNet&) = delete;
  FusionNet(FusionNet&&) = default;
  FusionNet& operator=(FusionNet&&) = default;

  const FusionConfig& config() const { return cfg_; }

  Tensor fuse(const SampleStack& stack) const;

  // loss(fuse(stack), target) with parameter gradients into gs. The LPIPS
  // variant differentiates through the frozen extractor.
  double loss_backward(const SampleStack& stack, const Tensor& target,
                       const PerceptualExtractor* extractor, GradSink& gs) const;

  std::vector<ParamTensor*> all_params();

  void save(const std::string& path, const std::string& extractor_provenance,
            uint64_t extractor_seed) const;
  struct Loaded;
  static Loaded load(const std::string& path);

 private:
  struct ResBlock {
    Conv2d c1, c2;
  };

  Tensor stacked_input(const SampleStack& stack) const;
  void collect_all(std::vector<ParamTensor*>& out);

  FusionConfig cfg_;
  Conv2d in_proj_;
  std::vector<ResBlock> blocks_;
  Conv2d out_proj_;
};

struct FusionNet::Loaded {
  FusionNet net;
  std::string extractor_provenance;
  uint64_t extractor_seed = 0;
};

// Trains on fixed (stack, target) pairs, deterministic per seed, Adam with
// cosine annealing to zero. The LPIPS variant requires an extractor. Throws
// on NaN loss. iterations == 0 returns the zero-initialized net.
FusionNet train_fusion(const std::vector<FusionPair>& data, const FusionConfig& cfg,
                       const FusionTrainConfig& tcfg,
                       const PerceptualExtractor* extractor = nullptr);

}  // namespace srspace
