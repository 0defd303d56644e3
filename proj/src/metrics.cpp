#include "srspace/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace srspace {

double psnr(const ImageTensor& a, const ImageTensor& b, double peak, double cap) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be > 0");
  const double m = mse(a, b);
  if (m <= 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(peak * peak / m));
}

namespace {

std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> w(n);
  const double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable valid-region filtering of one channel plane.
void filter_valid(const double* src, int h, int w, const std::vector<double>& win,
                  std::vector<double>& tmp, std::vector<double>& dst) {
  const int n = static_cast<int>(win.size());
  const int ow = w - n + 1, oh = h - n + 1;
  tmp.assign(static_cast<size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += win[k] * src[y * w + x + k];
      tmp[y * ow + x] = s;
    }
  }
  dst.assign(static_cast<size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += win[k] * tmp[(y + k) * ow + x];
      dst[y * ow + x] = s;
    }
  }
}

}  // namespace

double ssim(const ImageTensor& a, const ImageTensor& b, const SsimConfig& cfg) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.height() < cfg.window || a.width() < cfg.window) {
    throw std::invalid_argument("ssim: image smaller than window");
  }
  const double c1 = (cfg.k1 * cfg.peak) * (cfg.k1 * cfg.peak);
  const double c2 = (cfg.k2 * cfg.peak) * (cfg.k2 * cfg.peak);
  const auto win = gaussian_window(cfg.window, cfg.sigma);

  const int h = a.height(), w = a.width();
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> aa(plane), bb(plane), ab(plane);
  std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;

  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const double* pa = a.channel(c);
    const double* pb = b.channel(c);
    for (size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    filter_valid(pa, h, w, win, tmp, mu_a);
    filter_valid(pb, h, w, win, tmp, mu_b);
    filter_valid(aa.data(), h, w, win, tmp, m_aa);
    filter_valid(bb.data(), h, w, win, tmp, m_bb);
    filter_valid(ab.data(), h, w, win, tmp, m_ab);

    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = m_aa[i] - ma * ma;
      const double vb = m_bb[i] - mb * mb;
      const double cov = m_ab[i] - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / a.channels();
}

// ---------------------------------------------------------------------------
// LPIPS
// ---------------------------------------------------------------------------

namespace {
constexpr double kNormEps = 1e-10;

// Unit-normalizes v along channels per spatial location.
Tensor channel_normalize(const Tensor& f) {
  Tensor out(f.channels(), f.height(), f.width());
  const int hw = f.height() * f.width();
  for (int i = 0; i < hw; ++i) {
    double sq = 0.0;
    for (int c = 0; c < f.channels(); ++c) {
      const double v = f[static_cast<size_t>(c) * hw + i];
      sq += v * v;
    }
    const double n = std::sqrt(sq);
    if (n == 0.0) continue;  // zero vector stays zero
    const double inv = 1.0 / (n + kNormEps);
    for (int c = 0; c < f.channels(); ++c) {
      out[static_cast<size_t>(c) * hw + i] = f[static_cast<size_t>(c) * hw + i] * inv;
    }
  }
  return out;
}

// d(normalized)/d(raw) applied to upstream grad; dv_j = dn_j/(n+eps)
// - v_j * (v . dn) / (n (n+eps)^2). Zero vectors get zero gradient.
Tensor channel_normalize_backward(const Tensor& f, const Tensor& dnorm) {
  Tensor df(f.channels(), f.height(), f.width());
  const int hw = f.height() * f.width();
  for (int i = 0; i < hw; ++i) {
    double sq = 0.0, dot = 0.0;
    for (int c = 0; c < f.channels(); ++c) {
      const double v = f[static_cast<size_t>(c) * hw + i];
      sq += v * v;
      dot += v * dnorm[static_cast<size_t>(c) * hw + i];
    }
    const double n = std::sqrt(sq);
    if (n == 0.0) continue;
    const double inv = 1.0 / (n + kNormEps);
    const double k = dot / (n * (n + kNormEps) * (n + kNormEps));
    for (int c = 0; c < f.channels(); ++c) {
      const size_t idx = static_cast<size_t>(c) * hw + i;
      df[idx] = dnorm[idx] * inv - f[idx] * k;
    }
  }
  return df;
}

}  // namespace

PerceptualExtractor::PerceptualExtractor(std::vector<Stage> stages,
                                         std::vector<std::vector<double>> layer_weights,
                                         std::string provenance)
    : stages_(std::move(stages)),
      layer_weights_(std::move(layer_weights)),
      provenance_(std::move(provenance)) {
  if (stages_.empty() || stages_.size() != layer_weights_.size()) {
    throw std::invalid_argument("PerceptualExtractor: stage/weight count mismatch");
  }
  for (size_t l = 0; l < stages_.size(); ++l) {
    if (static_cast<int>(layer_weights_[l].size()) != stages_[l].conv.out_ch) {
      throw std::invalid_argument("PerceptualExtractor: w_l size mismatch");
    }
    for (double w : layer_weights_[l]) {
      if (w < 0.0) throw std::invalid_argument("PerceptualExtractor: w_l must be nonnegative");
    }
  }
}

PerceptualExtractor PerceptualExtractor::random_fixed(uint64_t seed, int in_channels) {
  Rng rng(seed);
  const int widths[3] = {16, 32, 64};
  std::vector<Stage> stages;
  std::vector<std::vector<double>> lw;
  int in = in_channels;
  for (int s = 0; s < 3; ++s) {
    Stage st;
    st.pool = s == 0 ? 1 : 2;
    st.conv = Conv2d(in, widths[s], 3);
    st.conv.init_he(rng);
    if (s == 0) {
      // Zero-mean filters: no response to flat inputs.
      const int fsize = st.conv.in_ch * st.conv.ksize * st.conv.ksize;
      for (int o = 0; o < st.conv.out_ch; ++o) {
        double mean = 0.0;
        for (int i = 0; i < fsize; ++i) mean += st.conv.weight.value[o * fsize + i];
        mean /= fsize;
        for (int i = 0; i < fsize; ++i) st.conv.weight.value[o * fsize + i] -= mean;
      }
    }
    std::vector<double> w(widths[s]);
    for (double& v : w) v = std::fabs(rng.normal());
    stages.push_back(std::move(st));
    lw.push_back(std::move(w));
    in = widths[s];
  }
  PerceptualExtractor ex(std::move(stages), std::move(lw),
                         "random-fixed(seed=" + std::to_string(seed) + ")");
  ex.seed_ = seed;
  return ex;
}

int PerceptualExtractor::min_input_size() const {
  int f = 1;
  for (const auto& s : stages_) f *= s.pool;
  return f;
}

double PerceptualExtractor::lpips(const ImageTensor& a, const ImageTensor& b) const {
  return lpips_grad(a, b, nullptr);
}

double PerceptualExtractor::lpips_grad(const ImageTensor& a, const ImageTensor& b,
                                       Tensor* da) const {
  if (!a.same_shape(b)) throw std::invalid_argument("lpips: shape mismatch");
  if (a.channels() != input_channels()) {
    throw std::invalid_argument("lpips: expected " + std::to_string(input_channels()) +
                                " channels");
  }
  if (a.height() < min_input_size() || a.width() < min_input_size()) {
    throw std::invalid_argument("lpips: image smaller than extractor minimum size");
  }

  const size_t L = stages_.size();
  // Forward both images, keeping activations of the a-branch for backprop.
  std::vector<Tensor> a_pool(L), a_pre(L), a_feat(L), b_feat(L);
  Tensor xa = a, xb = b;
  for (size_t l = 0; l < L; ++l) {
    const Stage& st = stages_[l];
    a_pool[l] = st.pool > 1 ? avg_pool(xa, st.pool) : xa;
    Tensor pb = st.pool > 1 ? avg_pool(xb, st.pool) : xb;
    a_pre[l] = st.conv.forward(a_pool[l]);
    a_feat[l] = relu(a_pre[l]);
    b_feat[l] = relu(st.conv.forward(pb));
    xa = a_feat[l];
    xb = b_feat[l];
  }

  double dist = 0.0;
  std::vector<Tensor> ddiff(L);  // d(dist)/d(a_hat) per layer
  for (size_t l = 0; l < L; ++l) {
    const Tensor ahat = channel_normalize(a_feat[l]);
    const Tensor bhat = channel_normalize(b_feat[l]);
    const int hw = ahat.height() * ahat.width();
    const double inv_hw = 1.0 / hw;
    double acc = 0.0;
    if (da) ddiff[l] = Tensor(ahat.channels(), ahat.height(), ahat.width());
    for (int c = 0; c < ahat.channels(); ++c) {
      const double wc = layer_weights_[l][c];
      const double w2 = wc * wc;
      for (int i = 0; i < hw; ++i) {
        const size_t idx = static_cast<size_t>(c) * hw + i;
        const double d = ahat[idx] - bhat[idx];
        acc += w2 * d * d;
        if (da) ddiff[l][idx] = 2.0 * w2 * d * inv_hw;
      }
    }
    dist += acc * inv_hw;
    if (da) ddiff[l] = channel_normalize_backward(a_feat[l], ddiff[l]);
  }

  if (da) {
    // Backprop the a-branch from the deepest stage to the input. Each layer's
    // features receive the distance gradient directly plus whatever flows
    // down from the stage above.
    Tensor g_feat = ddiff[L - 1];
    for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
      const Stage& st = stages_[l];
      const Tensor g_pre = relu_backward(a_pre[l], g_feat);
      Tensor g_x = st.conv.backward_data(g_pre);
      if (st.pool > 1) g_x = avg_pool_backward(l > 0 ? a_feat[l - 1] : a, g_x, st.pool);
      if (l > 0) {
        g_feat = g_x + ddiff[l - 1];
      } else {
        *da = g_x;
      }
    }
  }
  return dist;
}

MetricReport evaluate_pairs(const std::vector<std::string>& ids,
                            const std::vector<ImageTensor>& preds,
                            const std::vector<ImageTensor>& refs,
                            const PerceptualExtractor& extractor) {
  if (ids.size() != preds.size() || preds.size() != refs.size()) {
    throw std::invalid_argument("evaluate_pairs: size mismatch");
  }
  if (preds.empty()) throw std::invalid_argument("evaluate_pairs: empty dataset");
  MetricReport report;
  report.extractor_provenance = extractor.provenance();
  double sp = 0.0, ss = 0.0, sl = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    MetricRow row;
    row.image_id = ids[i];
    row.psnr_db = psnr(preds[i], refs[i]);
    row.ssim = ssim(preds[i], refs[i]);
    row.lpips = extractor.lpips(preds[i], refs[i]);
    sp += row.psnr_db;
    ss += row.ssim;
    sl += row.lpips;
    report.rows.push_back(row);
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean = {"mean", sp / n, ss / n, sl / n};
  return report;
}

void write_metric_report(const MetricReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_metric_report: cannot open " + path);
  f << "image_id,psnr_db,ssim,lpips,extractor_provenance\n";
  char buf[256];
  auto put = [&](const MetricRow& r) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%s\n", r.image_id.c_str(), r.psnr_db,
                  r.ssim, r.lpips, report.extractor_provenance.c_str());
    f << buf;
  };
  for (const auto& r : report.rows) put(r);
  put(report.mean);
}

}  // namespace srspace
