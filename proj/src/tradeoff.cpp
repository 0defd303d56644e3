#include "srspace/tradeoff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "srspace/ensemble.hpp"
#include "srspace/plot.hpp"
#include "srspace/png_io.hpp"

namespace fs = std::filesystem;

namespace srspace {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_tau(double tau) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", tau);
  return buf;
}

}  // namespace

SweepConfig parse_sweep_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("parse_sweep_config: cannot open " + path);
  SweepConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("parse_sweep_config: missing '=' at line " +
                               std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "val_manifest") cfg.val_manifest = val;
    else if (key == "train_manifest") cfg.train_manifest = val;
    else if (key == "flow_ckpt") cfg.flow_ckpt = val;
    else if (key == "fusion_l1_ckpt") cfg.fusion_l1_ckpt = val;
    else if (key == "fusion_lpips_ckpt") cfg.fusion_lpips_ckpt = val;
    else if (key == "taus") {
      cfg.taus.clear();
      for (const auto& t : split_list(val)) cfg.taus.push_back(std::stod(t));
    } else if (key == "ks") {
      cfg.ks.clear();
      for (const auto& t : split_list(val)) cfg.ks.push_back(std::stoi(t));
    } else if (key == "ensemble_tau") cfg.ensemble_tau = std::stod(val);
    else if (key == "stack_size") cfg.stack_size = std::stoi(val);
    else if (key == "eval_seeds") cfg.eval_seeds = std::stoi(val);
    else if (key == "k_in") cfg.k_in = std::stoi(val);
    else if (key == "fusion_iters") cfg.fusion_iters = std::stoi(val);
    else if (key == "fusion_lr") cfg.fusion_lr = std::stod(val);
    else if (key == "fusion_batch") cfg.fusion_batch = std::stoi(val);
    else if (key == "extractor_seed") cfg.extractor_seed = std::stoull(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "out_dir") cfg.out_dir = val;
    else throw std::runtime_error("parse_sweep_config: unknown key '" + key + "'");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Evaluation data
// ---------------------------------------------------------------------------

namespace {

std::vector<uint64_t> stack_seeds(uint64_t base, size_t image_index, int count) {
  std::vector<uint64_t> seeds(count);
  for (int j = 0; j < count; ++j) seeds[j] = base + image_index * 1000 + j;
  return seeds;
}

}  // namespace

EvalData build_eval_data(const FlowModel& flow, const DatasetManifest& manifest,
                         const std::string& manifest_dir, const SweepConfig& cfg) {
  if (manifest.entries.empty()) throw std::invalid_argument("build_eval_data: empty dataset");
  EvalData data;
  for (const auto& e : manifest.entries) {
    data.ids.push_back(fs::path(e.hr_path).stem().string());
    data.hr.push_back(load_png((fs::path(manifest_dir) / e.hr_path).string()));
    data.lr.push_back(load_png((fs::path(manifest_dir) / e.lr_path).string()));
  }

  // Temperatures: the configured list plus the ensemble temperature.
  data.taus = cfg.taus;
  if (std::find(data.taus.begin(), data.taus.end(), cfg.ensemble_tau) == data.taus.end()) {
    data.taus.push_back(cfg.ensemble_tau);
  }
  data.stacks.resize(data.taus.size());
  for (size_t ti = 0; ti < data.taus.size(); ++ti) {
    const double tau = data.taus[ti];
    const int count = tau == cfg.ensemble_tau ? cfg.stack_size : cfg.eval_seeds;
    data.stacks[ti].resize(data.hr.size());
    for (size_t i = 0; i < data.hr.size(); ++i) {
      data.stacks[ti][i] =
          flow.sample_stack(data.lr[i], tau, stack_seeds(cfg.seed, i, count));
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Method evaluation
// ---------------------------------------------------------------------------

namespace {

std::string method_id(const MethodSpec& spec) {
  char buf[64];
  switch (spec.kind) {
    case MethodSpec::Kind::Baseline:
      return "baseline_regressive";
    case MethodSpec::Kind::SingleSample:
      return std::string("sample_tau") + fmt_tau(spec.tau);
    case MethodSpec::Kind::Average:
      std::snprintf(buf, sizeof(buf), "average_k%02d", spec.k);
      return buf;
    case MethodSpec::Kind::Median:
      std::snprintf(buf, sizeof(buf), "median_k%02d", spec.k);
      return buf;
    case MethodSpec::Kind::Fusion:
      return "fusion_" + spec.loss;
  }
  return "unknown";
}

size_t tau_index(const EvalData& data, double tau) {
  for (size_t ti = 0; ti < data.taus.size(); ++ti) {
    if (data.taus[ti] == tau) return ti;
  }
  throw std::invalid_argument("evaluate_method: no stacks at tau " + fmt_tau(tau));
}

struct MeanAcc {
  double psnr = 0, ssim = 0, lpips = 0;
  int n = 0;
  void add(const ImageTensor& pred, const ImageTensor& ref, const PerceptualExtractor& ex) {
    psnr += srspace::psnr(pred, ref);
    ssim += srspace::ssim(pred, ref);
    lpips += ex.lpips(pred, ref);
    ++n;
  }
};

}  // namespace

TradeoffPoint evaluate_method(const MethodSpec& spec, const EvalData& data,
                              const FlowModel& flow, const PerceptualExtractor& extractor,
                              const FusionNet* fusion) {
  if (data.hr.empty()) throw std::invalid_argument("evaluate_method: empty dataset");
  TradeoffPoint pt;
  pt.method = method_id(spec);
  const size_t n = data.hr.size();

  switch (spec.kind) {
    case MethodSpec::Kind::Baseline: {
      MeanAcc acc;
      for (size_t i = 0; i < n; ++i) acc.add(flow.baseline_sr(data.lr[i]), data.hr[i], extractor);
      pt.psnr_db = acc.psnr / acc.n;
      pt.ssim = acc.ssim / acc.n;
      pt.lpips = acc.lpips / acc.n;
      break;
    }
    case MethodSpec::Kind::SingleSample: {
      const size_t ti = tau_index(data, spec.tau);
      const size_t k = data.stacks[ti][0].samples.size();
      // Per-seed dataset means; the reported score averages them (one score
      // per sample, averaged, matching the multi-sample table protocol).
      std::vector<double> seed_psnr(k, 0.0);
      MeanAcc acc;
      for (size_t i = 0; i < n; ++i) {
        const SampleStack& st = data.stacks[ti][i];
        for (size_t j = 0; j < k; ++j) {
          acc.add(st.samples[j], data.hr[i], extractor);
          seed_psnr[j] += psnr(st.samples[j], data.hr[i]);
        }
      }
      pt.tau = spec.tau;
      pt.k = static_cast<int>(k);
      pt.psnr_db = acc.psnr / acc.n;
      pt.ssim = acc.ssim / acc.n;
      pt.lpips = acc.lpips / acc.n;
      double mean = 0.0;
      for (double& v : seed_psnr) {
        v /= static_cast<double>(n);
        mean += v;
      }
      mean /= static_cast<double>(k);
      double var = 0.0;
      for (double v : seed_psnr) var += (v - mean) * (v - mean);
      pt.psnr_band = std::sqrt(var / static_cast<double>(k));
      break;
    }
    case MethodSpec::Kind::Average:
    case MethodSpec::Kind::Median: {
      const size_t ti = tau_index(data, spec.tau);
      MeanAcc acc;
      for (size_t i = 0; i < n; ++i) {
        const SampleStack& st = data.stacks[ti][i];
        const ImageTensor merged = spec.kind == MethodSpec::Kind::Average
                                       ? ensemble_average(st, spec.k)
                                       : ensemble_median(st, spec.k);
        acc.add(merged, data.hr[i], extractor);
      }
      pt.tau = spec.tau;
      pt.k = spec.k;
      pt.psnr_db = acc.psnr / acc.n;
      pt.ssim = acc.ssim / acc.n;
      pt.lpips = acc.lpips / acc.n;
      break;
    }
    case MethodSpec::Kind::Fusion: {
      if (!fusion) throw std::invalid_argument("evaluate_method: fusion net missing");
      const size_t ti = tau_index(data, spec.tau);
      MeanAcc acc;
      for (size_t i = 0; i < n; ++i) {
        acc.add(fusion->fuse(data.stacks[ti][i]), data.hr[i], extractor);
      }
      pt.tau = spec.tau;
      pt.k = fusion->config().k_in;
      pt.loss = spec.loss;
      pt.psnr_db = acc.psnr / acc.n;
      pt.ssim = acc.ssim / acc.n;
      pt.lpips = acc.lpips / acc.n;
      break;
    }
  }
  return pt;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

void write_report_csv(const std::vector<TradeoffPoint>& points, const std::string& path,
                      const std::string& provenance) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("run_sweep: cannot open " + path);
  f << "method,tau,k,loss,psnr_db,psnr_band,ssim,lpips,extractor_provenance\n";
  for (const auto& p : points) {
    f << p.method << ",";
    if (p.tau >= 0.0) f << fmt_tau(p.tau);
    f << ",";
    if (p.k > 0) f << p.k;
    f << "," << p.loss << "," << fmt6(p.psnr_db) << "," << fmt6(p.psnr_band) << ","
      << fmt6(p.ssim) << "," << fmt6(p.lpips) << "," << provenance << "\n";
  }
}

void write_report_md(const std::vector<TradeoffPoint>& points, const std::string& path,
                     const std::string& provenance, size_t n_images, int scale) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("run_sweep: cannot open " + path);
  f << "# SR-space ensembling/fusion report\n\n";
  f << "Validation images: " << n_images << ", scale x" << scale << ".\n\n";
  f << "Perceptual axis: LPIPS with extractor `" << provenance
    << "`. Fidelity: PSNR (dB) and SSIM. Single-sample rows average scores over "
       "their sample stack; `band` is the across-seed std of the dataset-mean "
       "PSNR.\n\n";
  f << "| method | tau | k | loss | PSNR (dB) | band | SSIM | LPIPS |\n";
  f << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& p : points) {
    f << "| " << p.method << " | " << (p.tau >= 0.0 ? fmt_tau(p.tau) : "-") << " | "
      << (p.k > 0 ? std::to_string(p.k) : "-") << " | " << (p.loss.empty() ? "-" : p.loss)
      << " | " << fmt6(p.psnr_db) << " | " << fmt6(p.psnr_band) << " | " << fmt6(p.ssim)
      << " | " << fmt6(p.lpips) << " |\n";
  }
  f << "\nTrade-off paths (see `tradeoff.png`): flow sample -> Average(k), increasing k "
       "raises fidelity; flow sample -> Fusion-LPIPS favors the perceptual axis.\n";
}

}  // namespace

void tradeoff_paths(const std::vector<TradeoffPoint>& points, const std::string& csv_path,
                    const std::string& png_path, const std::string& extractor_provenance) {
  if (points.size() < 2) throw std::invalid_argument("tradeoff_paths: need at least 2 points");

  std::ofstream f(csv_path, std::ios::binary);
  if (!f) throw std::runtime_error("tradeoff_paths: cannot open " + csv_path);
  f << "method,psnr_db,lpips,psnr_band\n";
  for (const auto& p : points) {
    f << p.method << "," << fmt6(p.psnr_db) << "," << fmt6(p.lpips) << "," << fmt6(p.psnr_band)
      << "\n";
  }
  f.close();

  PlotSpec spec;
  spec.title = "SR-space trade-off (LPIPS via " + extractor_provenance + ")";
  spec.x_label = "PSNR (dB)";
  spec.y_label = "LPIPS";
  auto index_of = [&](const std::string& prefix) {
    for (size_t i = 0; i < points.size(); ++i) {
      if (points[i].method.rfind(prefix, 0) == 0) return static_cast<int>(i);
    }
    return -1;
  };
  for (const auto& p : points) {
    spec.points.push_back({p.method, p.psnr_db, p.lpips, p.psnr_band});
  }

  // Path 1: highest-tau sample -> Average(k) in increasing k.
  // Path 2: same sample -> Fusion-LPIPS.
  int start = -1;
  double best_tau = -1.0;
  for (size_t i = 0; i < points.size(); ++i) {
    if (points[i].method.rfind("sample_tau", 0) == 0 && points[i].tau > best_tau) {
      best_tau = points[i].tau;
      start = static_cast<int>(i);
    }
  }
  if (start >= 0) {
    PlotPath fidelity;
    fidelity.point_indices.push_back(start);
    std::vector<std::pair<int, int>> avgs;  // (k, index)
    for (size_t i = 0; i < points.size(); ++i) {
      if (points[i].method.rfind("average_k", 0) == 0) {
        avgs.emplace_back(points[i].k, static_cast<int>(i));
      }
    }
    std::sort(avgs.begin(), avgs.end());
    for (const auto& [k, i] : avgs) fidelity.point_indices.push_back(i);
    if (fidelity.point_indices.size() > 1) spec.paths.push_back(fidelity);

    const int fl = index_of("fusion_lpips");
    if (fl >= 0) spec.paths.push_back({{start, fl}});
  }
  save_png(png_path, render_plot(spec));
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

std::vector<TradeoffPoint> run_sweep(const SweepConfig& cfg) {
  if (cfg.out_dir.empty()) throw std::invalid_argument("run_sweep: out_dir not set");
  fs::create_directories(cfg.out_dir);
  if (!fs::exists(cfg.flow_ckpt)) {
    throw std::runtime_error("run_sweep: missing flow checkpoint " + cfg.flow_ckpt +
                             " (train it first: flow train)");
  }
  const FlowModel flow = FlowModel::load(cfg.flow_ckpt);
  const PerceptualExtractor extractor = PerceptualExtractor::random_fixed(cfg.extractor_seed);

  const DatasetManifest val = load_manifest(cfg.val_manifest);
  const std::string val_dir = fs::path(cfg.val_manifest).parent_path().string();
  const EvalData data = build_eval_data(flow, val, val_dir, cfg);

  // Fusion nets: load if present, otherwise train on the train split.
  auto fusion_path = [&](const std::string& given, const char* name) {
    return given.empty() ? (fs::path(cfg.out_dir) / name).string() : given;
  };
  const std::string l1_path = fusion_path(cfg.fusion_l1_ckpt, "fusion_l1.ckpt");
  const std::string lp_path = fusion_path(cfg.fusion_lpips_ckpt, "fusion_lpips.ckpt");

  std::vector<FusionPair> train_pairs;
  auto ensure_train_pairs = [&]() {
    if (!train_pairs.empty()) return;
    if (cfg.train_manifest.empty()) {
      throw std::runtime_error("run_sweep: fusion training requested but no train_manifest");
    }
    const DatasetManifest train = load_manifest(cfg.train_manifest);
    const std::string train_dir = fs::path(cfg.train_manifest).parent_path().string();
    for (size_t p = 0; p < train.entries.size(); ++p) {
      const auto& e = train.entries[p];
      const ImageTensor hr = load_png((fs::path(train_dir) / e.hr_path).string());
      const ImageTensor lr = load_png((fs::path(train_dir) / e.lr_path).string());
      FusionPair pair;
      pair.stack = flow.sample_stack(
          lr, cfg.ensemble_tau, stack_seeds(cfg.seed + 500000, p, cfg.k_in));
      pair.target = hr;
      train_pairs.push_back(std::move(pair));
    }
  };

  auto get_fusion = [&](const std::string& path, const std::string& variant) {
    if (fs::exists(path)) {
      auto loaded = FusionNet::load(path);
      return std::move(loaded.net);
    }
    ensure_train_pairs();
    FusionConfig fcfg;
    fcfg.k_in = cfg.k_in;
    fcfg.variant = variant;
    FusionTrainConfig tcfg;
    tcfg.iterations = cfg.fusion_iters;
    tcfg.initial_lr = cfg.fusion_lr;
    tcfg.batch_size = cfg.fusion_batch;
    tcfg.seed = cfg.seed;
    tcfg.log_path = (fs::path(cfg.out_dir) / ("fusion_" + variant + "_loss.txt")).string();
    FusionNet net = train_fusion(train_pairs, fcfg, tcfg,
                                 variant == "lpips" ? &extractor : nullptr);
    net.save(path, extractor.provenance(), extractor.seed());
    return net;
  };
  const FusionNet fusion_l1 = get_fusion(l1_path, "l1");
  const FusionNet fusion_lpips = get_fusion(lp_path, "lpips");

  // Method sweep.
  std::vector<TradeoffPoint> points;
  MethodSpec spec;
  spec.kind = MethodSpec::Kind::Baseline;
  points.push_back(evaluate_method(spec, data, flow, extractor));
  for (double tau : cfg.taus) {
    spec = {};
    spec.kind = MethodSpec::Kind::SingleSample;
    spec.tau = tau;
    points.push_back(evaluate_method(spec, data, flow, extractor));
  }
  for (int k : cfg.ks) {
    spec = {};
    spec.tau = cfg.ensemble_tau;
    spec.k = k;
    spec.kind = MethodSpec::Kind::Average;
    points.push_back(evaluate_method(spec, data, flow, extractor));
    spec.kind = MethodSpec::Kind::Median;
    points.push_back(evaluate_method(spec, data, flow, extractor));
  }
  spec = {};
  spec.kind = MethodSpec::Kind::Fusion;
  spec.tau = cfg.ensemble_tau;
  spec.loss = "l1";
  points.push_back(evaluate_method(spec, data, flow, extractor, &fusion_l1));
  spec.loss = "lpips";
  points.push_back(evaluate_method(spec, data, flow, extractor, &fusion_lpips));

  std::sort(points.begin(), points.end(),
            [](const TradeoffPoint& a, const TradeoffPoint& b) { return a.method < b.method; });

  write_report_csv(points, (fs::path(cfg.out_dir) / "report.csv").string(),
                   extractor.provenance());
  write_report_md(points, (fs::path(cfg.out_dir) / "report.md").string(),
                  extractor.provenance(), data.hr.size(), flow.config().scale);
  tradeoff_paths(points, (fs::path(cfg.out_dir) / "paths.csv").string(),
                 (fs::path(cfg.out_dir) / "tradeoff.png").string(), extractor.provenance());
  return points;
}

}  // namespace srspace
