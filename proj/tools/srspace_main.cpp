// srspace: SR-space ensembling/fusion pipeline CLI.
//
//   srspace dataset build   --hr-dir D --scale 4 --patch 32 --noise-sigma 2.309 --seed S --out DIR
//   srspace flow train      --manifest M --out ckpt [--iters N --encoder-iters N ...]
//   srspace flow sample     --ckpt C --lr-image P --tau 0.9 --seeds 0..24 --out DIR
//   srspace ensemble        --stack DIR --method average|median --k 5 --out out.png
//   srspace fusion train    --stacks DIR --loss l1|lpips --iters N --ckpt OUT
//   srspace fusion apply    --ckpt C --stack DIR --out out.png
//   srspace metrics eval    --pred P --ref R --out report.csv
//   srspace tradeoff run    --config sweep.cfg --out DIR

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "srspace/data_pipeline.hpp"
#include "srspace/ensemble.hpp"
#include "srspace/flow.hpp"
#include "srspace/fusion.hpp"
#include "srspace/metrics.hpp"
#include "srspace/png_io.hpp"
#include "srspace/tradeoff.hpp"

namespace fs = std::filesystem;
using namespace srspace;

namespace {

// Seed list syntax: "a..b" (inclusive range) or comma-separated values.
std::vector<uint64_t> parse_seeds(const std::string& spec) {
  std::vector<uint64_t> seeds;
  const auto dots = spec.find("..");
  if (dots != std::string::npos) {
    const uint64_t a = std::stoull(spec.substr(0, dots));
    const uint64_t b = std::stoull(spec.substr(dots + 2));
    if (b < a) throw std::runtime_error("--seeds: end before start");
    for (uint64_t s = a; s <= b; ++s) seeds.push_back(s);
  } else {
    std::string cur;
    std::istringstream ss(spec);
    while (std::getline(ss, cur, ',')) {
      if (!cur.empty()) seeds.push_back(std::stoull(cur));
    }
  }
  if (seeds.empty()) throw std::runtime_error("--seeds: empty seed list");
  return seeds;
}

// Pairs pred/ref: two files, or two directories matched by sorted file name.
void run_metrics_eval(const std::string& pred, const std::string& ref, const std::string& out,
                      uint64_t extractor_seed) {
  std::vector<std::string> ids;
  std::vector<ImageTensor> preds, refs;
  if (fs::is_directory(pred)) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(pred)) {
      if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw std::runtime_error("metrics eval: no PNGs in " + pred);
    for (const auto& n : names) {
      ids.push_back(fs::path(n).stem().string());
      preds.push_back(load_png((fs::path(pred) / n).string()));
      refs.push_back(load_png((fs::path(ref) / n).string()));
    }
  } else {
    ids.push_back(fs::path(pred).stem().string());
    preds.push_back(load_png(pred));
    refs.push_back(load_png(ref));
  }
  const auto extractor = PerceptualExtractor::random_fixed(extractor_seed);
  write_metric_report(evaluate_pairs(ids, preds, refs, extractor), out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SR-space ensembling/fusion pipeline"};
  app.require_subcommand(1);

  // dataset build
  auto* dataset = app.add_subcommand("dataset", "dataset construction");
  dataset->require_subcommand(1);
  auto* dbuild = dataset->add_subcommand("build", "build LR/HR pairs from an HR image dir");
  std::string hr_dir, d_out, d_split = "train";
  DegradationConfig dcfg;
  int d_count = 4;
  dbuild->add_option("--hr-dir", hr_dir, "directory of HR PNG images")->required();
  dbuild->add_option("--scale", dcfg.scale, "downsampling factor");
  dbuild->add_option("--patch", dcfg.patch_size, "HR patch size");
  dbuild->add_option("--noise-sigma", dcfg.noise_sigma, "HR noise std on the 0..255 scale");
  dbuild->add_option("--seed", dcfg.rng_seed, "crop/noise seed");
  dbuild->add_option("--count", d_count, "patches per image");
  dbuild->add_option("--split", d_split, "train|val (val targets stay clean)");
  dbuild->add_option("--out", d_out, "output directory")->required();

  // flow train / sample
  auto* flow_cmd = app.add_subcommand("flow", "conditional flow model");
  flow_cmd->require_subcommand(1);
  auto* ftrain = flow_cmd->add_subcommand("train", "train the flow (NLL)");
  std::string f_manifest, f_out;
  FlowConfig fcfg;
  FlowTrainConfig ftcfg;
  ftrain->add_option("--manifest", f_manifest, "dataset manifest")->required();
  ftrain->add_option("--out", f_out, "checkpoint path")->required();
  ftrain->add_option("--iters", ftcfg.flow_iters, "NLL iterations");
  ftrain->add_option("--encoder-iters", ftcfg.encoder_iters, "encoder L1 pretraining iterations");
  ftrain->add_option("--batch", ftcfg.batch_size, "batch size");
  ftrain->add_option("--lr", ftcfg.flow_lr, "flow learning rate");
  ftrain->add_option("--seed", ftcfg.seed, "training seed");
  ftrain->add_option("--levels", fcfg.levels, "flow levels");
  ftrain->add_option("--steps", fcfg.steps_per_level, "steps per level");
  ftrain->add_option("--hidden", fcfg.hidden_channels, "coupling subnet width");
  ftrain->add_option("--scale", fcfg.scale, "SR scale (must match the dataset)");

  auto* fsample = flow_cmd->add_subcommand("sample", "draw an SR sample stack");
  std::string s_ckpt, s_lr_image, s_hr_image, s_seeds = "0..24", s_out;
  double s_tau = 0.9;
  fsample->add_option("--ckpt", s_ckpt, "flow checkpoint")->required();
  fsample->add_option("--lr-image", s_lr_image, "LR input PNG")->required();
  fsample->add_option("--hr-image", s_hr_image, "optional HR target copied into the stack");
  fsample->add_option("--tau", s_tau, "sampling temperature");
  fsample->add_option("--seeds", s_seeds, "seed list: a..b or comma separated");
  fsample->add_option("--out", s_out, "output stack directory")->required();

  // ensemble
  auto* ens = app.add_subcommand("ensemble", "merge a sample stack");
  std::string e_stack, e_method = "average", e_out;
  int e_k = 5;
  ens->add_option("--stack", e_stack, "stack directory")->required();
  ens->add_option("--method", e_method, "average|median");
  ens->add_option("--k", e_k, "samples used (first k)");
  ens->add_option("--out", e_out, "output PNG")->required();

  // fusion train / apply
  auto* fusion_cmd = app.add_subcommand("fusion", "learned stack fusion");
  fusion_cmd->require_subcommand(1);
  auto* futrain = fusion_cmd->add_subcommand("train", "train a fusion net on stack dirs");
  std::string fu_stacks, fu_loss = "l1", fu_ckpt;
  FusionConfig fucfg;
  FusionTrainConfig futcfg;
  uint64_t fu_extractor_seed = 1234;
  futrain->add_option("--stacks", fu_stacks, "directory of stack dirs (each with hr.png)")
      ->required();
  futrain->add_option("--loss", fu_loss, "l1|lpips");
  futrain->add_option("--iters", futcfg.iterations, "training iterations");
  futrain->add_option("--lr", futcfg.initial_lr, "initial learning rate (cosine to 0)");
  futrain->add_option("--batch", futcfg.batch_size, "batch size");
  futrain->add_option("--seed", futcfg.seed, "training seed");
  futrain->add_option("--k-in", fucfg.k_in, "stack samples consumed");
  futrain->add_option("--extractor-seed", fu_extractor_seed, "LPIPS extractor seed");
  futrain->add_option("--ckpt", fu_ckpt, "output checkpoint")->required();

  auto* fuapply = fusion_cmd->add_subcommand("apply", "fuse one stack");
  std::string fa_ckpt, fa_stack, fa_out;
  fuapply->add_option("--ckpt", fa_ckpt, "fusion checkpoint")->required();
  fuapply->add_option("--stack", fa_stack, "stack directory")->required();
  fuapply->add_option("--out", fa_out, "output PNG")->required();

  // metrics eval
  auto* met = app.add_subcommand("metrics", "image quality metrics");
  met->require_subcommand(1);
  auto* meval = met->add_subcommand("eval", "PSNR/SSIM/LPIPS report");
  std::string m_pred, m_ref, m_out;
  uint64_t m_extractor_seed = 1234;
  meval->add_option("--pred", m_pred, "prediction PNG or directory")->required();
  meval->add_option("--ref", m_ref, "reference PNG or directory")->required();
  meval->add_option("--extractor-seed", m_extractor_seed, "LPIPS extractor seed");
  meval->add_option("--out", m_out, "output CSV")->required();

  // tradeoff run
  auto* trade = app.add_subcommand("tradeoff", "perception-distortion sweep");
  trade->require_subcommand(1);
  auto* trun = trade->add_subcommand("run", "run the full method sweep");
  std::string t_config, t_out;
  trun->add_option("--config", t_config, "sweep config (key = value lines)")->required();
  trun->add_option("--out", t_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dbuild) {
      const DatasetManifest m = build_dataset(hr_dir, dcfg, d_out, d_split, d_count);
      std::cout << "wrote " << m.entries.size() << " pairs to " << d_out << "\n";
    } else if (*ftrain) {
      const DatasetManifest m = load_manifest(f_manifest);
      fcfg.scale = m.config.scale;
      ftcfg.log_path = f_out + ".loss.txt";
      FlowModel model = train_flow(m, fs::path(f_manifest).parent_path().string(), fcfg, ftcfg);
      model.save(f_out);
      std::cout << "saved flow checkpoint " << f_out << "\n";
    } else if (*fsample) {
      const FlowModel model = FlowModel::load(s_ckpt);
      const ImageTensor lr = load_png(s_lr_image);
      const SampleStack stack = model.sample_stack(lr, s_tau, parse_seeds(s_seeds));
      if (s_hr_image.empty()) {
        save_stack(stack, s_out);
      } else {
        const ImageTensor hr = load_png(s_hr_image);
        save_stack(stack, s_out, &hr);
      }
      std::cout << "wrote " << stack.size() << " samples to " << s_out << "\n";
    } else if (*ens) {
      const LoadedStack ls = load_stack(e_stack);
      ImageTensor out;
      if (e_method == "average") {
        out = ensemble_average(ls.stack, e_k);
      } else if (e_method == "median") {
        out = ensemble_median(ls.stack, e_k);
      } else {
        throw std::runtime_error("ensemble: method must be average or median");
      }
      save_png(e_out, out);
      std::cout << "wrote " << e_out << "\n";
    } else if (*futrain) {
      std::vector<FusionPair> data;
      std::vector<std::string> dirs;
      for (const auto& e : fs::directory_iterator(fu_stacks)) {
        if (e.is_directory()) dirs.push_back(e.path().string());
      }
      std::sort(dirs.begin(), dirs.end());
      for (const auto& d : dirs) {
        LoadedStack ls = load_stack(d);
        if (!ls.hr) throw std::runtime_error("fusion train: stack " + d + " has no hr.png");
        data.push_back({std::move(ls.stack), std::move(*ls.hr)});
      }
      fucfg.variant = fu_loss;
      futcfg.log_path = fu_ckpt + ".loss.txt";
      const auto extractor = PerceptualExtractor::random_fixed(fu_extractor_seed);
      FusionNet net = train_fusion(data, fucfg, futcfg,
                                   fu_loss == "lpips" ? &extractor : nullptr);
      net.save(fu_ckpt, extractor.provenance(), extractor.seed());
      std::cout << "saved fusion checkpoint " << fu_ckpt << "\n";
    } else if (*fuapply) {
      auto loaded = FusionNet::load(fa_ckpt);
      const LoadedStack ls = load_stack(fa_stack);
      save_png(fa_out, loaded.net.fuse(ls.stack));
      std::cout << "wrote " << fa_out << "\n";
    } else if (*meval) {
      run_metrics_eval(m_pred, m_ref, m_out, m_extractor_seed);
      std::cout << "wrote " << m_out << "\n";
    } else if (*trun) {
      SweepConfig cfg = parse_sweep_config(t_config);
      cfg.out_dir = t_out;
      const auto start = std::chrono::steady_clock::now();
      run_sweep(cfg);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("sweep finished in %.1f s; report under %s\n", secs, t_out.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
