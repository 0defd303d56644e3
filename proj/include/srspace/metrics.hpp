#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srspace/nn.hpp"
#include "srspace/tensor.hpp"

namespace srspace {

// 10*log10(peak^2 / MSE), capped at `cap` dB (identical images would be
// infinite otherwise). Throws on shape mismatch.
double psnr(const ImageTensor& a, const ImageTensor& b, double peak = 1.0, double cap = 99.0);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Single-scale SSIM: Gaussian-weighted local statistics over valid window
// positions, C1 = (k1*peak)^2, C2 = (k2*peak)^2, averaged over channels.
// Throws if the image is smaller than the window.
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimConfig& cfg = {});

// Fixed (frozen) convolutional feature extractor for the LPIPS distance.
// Each stage is avg-pool (factor `pool`, 1 = none) followed by conv + ReLU;
// the ReLU outputs are the compared layers. Calibration vectors w_l are
// nonnegative per-channel weights.
//
// The default provenance is "random-fixed": weights drawn deterministically
// from a seed, since no published calibration weights ship with this repo.
// First-stage filters are made zero-mean so flat image regions produce no
// response and the distance reacts to structure rather than offsets.
class PerceptualExtractor {
 public:
  struct Stage {
    int pool = 1;  // avg-pool factor applied before the conv
    Conv2d conv;
  };

  PerceptualExtractor(std::vector<Stage> stages, std::vector<std::vector<double>> layer_weights,
                      std::string provenance);

  // 3-stage extractor (3->16, pool2 16->32, pool2 32->64) with seeded weights.
  static PerceptualExtractor random_fixed(uint64_t seed, int in_channels = 3);

  // d(a,b) = sum_l 1/(H_l W_l) sum_{h,w} || w_l . (a_hat - b_hat) ||_2^2 with
  // features unit-normalized along channels per spatial location
  // (eps = 1e-10 guard; an exactly zero feature vector normalizes to zero).
  double lpips(const ImageTensor& a, const ImageTensor& b) const;

  // LPIPS value plus its gradient with respect to `a` (used as training loss).
  double lpips_grad(const ImageTensor& a, const ImageTensor& b, Tensor* da) const;

  const std::string& provenance() const { return provenance_; }
  uint64_t seed() const { return seed_; }
  int min_input_size() const;
  int input_channels() const { return stages_.front().conv.in_ch; }

 private:
  std::vector<Stage> stages_;
  std::vector<std::vector<double>> layer_weights_;
  std::string provenance_;
  uint64_t seed_ = 0;
};

struct MetricRow {
  std::string image_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double lpips = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;  // image_id = "mean"
  std::string extractor_provenance;
};

MetricReport evaluate_pairs(const std::vector<std::string>& ids,
                            const std::vector<ImageTensor>& preds,
                            const std::vector<ImageTensor>& refs,
                            const PerceptualExtractor& extractor);

// CSV with columns image_id,psnr_db,ssim,lpips,extractor_provenance; one row
// per image plus a final "mean" row. Fixed 6-decimal formatting.
void write_metric_report(const MetricReport& report, const std::string& path);

}  // namespace srspace
