#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srspace/data_pipeline.hpp"
#include "srspace/flow.hpp"
#include "srspace/fusion.hpp"
#include "srspace/metrics.hpp"
#include "srspace/sample_stack.hpp"

namespace srspace {

// Sweep settings, parsed from a key = value config file ('#' comments).
struct SweepConfig {
  std::string val_manifest;
  std::string train_manifest;   // used when fusion nets are trained on demand
  std::string flow_ckpt;
  std::string fusion_l1_ckpt;   // empty -> <out_dir>/fusion_l1.ckpt
  std::string fusion_lpips_ckpt;
  std::vector<double> taus = {0.1, 0.5, 0.9};
  std::vector<int> ks = {5, 25};   // Average(k)/Median(k) rows
  double ensemble_tau = 0.9;       // stacks that feed ensembles and fusion
  int stack_size = 25;             // samples at the ensemble temperature
  int eval_seeds = 10;             // samples per other temperature
  int k_in = 10;                   // fusion stack size
  int fusion_iters = 500;
  double fusion_lr = 2e-4;
  int fusion_batch = 4;
  uint64_t extractor_seed = 1234;
  uint64_t seed = 0;
  std::string out_dir;
};

SweepConfig parse_sweep_config(const std::string& path);

struct TradeoffPoint {
  std::string method;
  double tau = -1.0;        // < 0 = not applicable
  int k = 0;                // 0 = not applicable
  std::string loss;         // "", "l1", "lpips"
  double psnr_db = 0.0;
  double psnr_band = 0.0;   // std of per-seed dataset-mean PSNR; 0 when deterministic
  double ssim = 0.0;
  double lpips = 0.0;
};

struct MethodSpec {
  enum class Kind { Baseline, SingleSample, Average, Median, Fusion };
  Kind kind = Kind::Baseline;
  double tau = 0.9;       // SingleSample / Average / Median / Fusion
  int k = 0;              // Average / Median
  std::string loss;       // Fusion: "l1" or "lpips"
};

// Validation images, their LR inputs, and per-temperature sample stacks.
// Seed lists are consecutive integers from one base seed: image i, sample j
// uses seed base + i*1000 + j, identical across temperatures, so Average(5)
// uses exactly the first five samples of the Average(25) stack.
struct EvalData {
  std::vector<std::string> ids;
  std::vector<ImageTensor> hr, lr;
  std::vector<double> taus;                      // stack temperature per row
  std::vector<std::vector<SampleStack>> stacks;  // [tau index][image]
};

EvalData build_eval_data(const FlowModel& flow, const DatasetManifest& manifest,
                         const std::string& manifest_dir, const SweepConfig& cfg);

// Dataset-mean metrics for one method. Single-sample rows average metrics
// over every sample of the matching stack and carry the across-seed PSNR
// band; deterministic methods carry band 0.
TradeoffPoint evaluate_method(const MethodSpec& spec, const EvalData& data,
                              const FlowModel& flow, const PerceptualExtractor& extractor,
                              const FusionNet* fusion = nullptr);

// Writes paths.csv (method,psnr_db,lpips,psnr_band) and renders the
// perception-distortion scatter with the two trade-off paths
// (sample -> Average(k...) and sample -> Fusion-LPIPS). The perceptual axis
// is LPIPS; the legend names the extractor provenance.
void tradeoff_paths(const std::vector<TradeoffPoint>& points, const std::string& csv_path,
                    const std::string& png_path, const std::string& extractor_provenance);

// End-to-end sweep: loads the flow checkpoint (error if absent), trains
// fusion nets on demand when their checkpoints are missing, evaluates every
// method, and writes report.csv, paths.csv, tradeoff.png and report.md under
// cfg.out_dir. Deterministic: identical config and seeds produce identical
// bytes. Returns the evaluated points (sorted by method id).
std::vector<TradeoffPoint> run_sweep(const SweepConfig& cfg);

}  // namespace srspace
