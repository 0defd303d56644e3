#include "srspace/flow.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "srspace/checkpoint.hpp"
#include "srspace/png_io.hpp"

namespace fs = std::filesystem;

namespace srspace {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double stable_sigmoid(double r) {
  if (r >= 0.0) return 1.0 / (1.0 + std::exp(-r));
  const double e = std::exp(r);
  return e / (1.0 + e);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels() + b.channels(), a.height(), a.width());
  const size_t pa = static_cast<size_t>(a.channels()) * a.height() * a.width();
  const size_t pb = static_cast<size_t>(b.channels()) * b.height() * b.width();
  std::copy(a.data(), a.data() + pa, out.data());
  std::copy(b.data(), b.data() + pb, out.data() + pa);
  return out;
}

Tensor slice_channels(const Tensor& t, int c0, int c1) {
  Tensor out(c1 - c0, t.height(), t.width());
  const size_t plane = static_cast<size_t>(t.height()) * t.width();
  std::copy(t.channel(c0), t.channel(c0) + (c1 - c0) * plane, out.data());
  return out;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

}  // namespace

void FlowConfig::validate() const {
  if (!is_power_of_two(scale) || scale < 2) {
    throw std::invalid_argument("FlowConfig: scale must be a power of two >= 2");
  }
  if (in_channels < 1 || levels < 1 || steps_per_level < 1 || hidden_channels < 2 ||
      cond_channels < 1 || encoder_channels < 1 || encoder_blocks < 0) {
    throw std::invalid_argument("FlowConfig: invalid field");
  }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

FlowModel::FlowModel(const FlowConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  build(init_seed);
  std::vector<ParamTensor*> all;
  collect_all(all);
  finalize_params(all);
}

void FlowModel::build(uint64_t init_seed) {
  Rng rng(init_seed);

  enc_in_ = Conv2d(cfg_.in_channels, cfg_.encoder_channels, 3);
  enc_in_.init_he(rng);
  enc_blocks_.resize(cfg_.encoder_blocks);
  for (auto& b : enc_blocks_) {
    b.c1 = Conv2d(cfg_.encoder_channels, cfg_.encoder_channels, 3);
    b.c2 = Conv2d(cfg_.encoder_channels, cfg_.encoder_channels, 3);
    b.c1.init_he(rng);
    b.c2.init_he(rng);
  }
  head_ = Conv2d(cfg_.encoder_channels, cfg_.in_channels * cfg_.scale * cfg_.scale, 3);
  head_.init_zero();  // baseline starts as plain nearest-neighbor upsampling

  levels_.resize(cfg_.levels);
  int ch = cfg_.in_channels;
  for (int li = 0; li < cfg_.levels; ++li) {
    ch *= 4;
    FlowLevel& lvl = levels_[li];
    lvl.channels = ch;
    // Resample encoder features (at LR = HR/scale) to this level's
    // resolution HR / 2^(li+1).
    const int level_div = 1 << (li + 1);
    if (cfg_.scale >= level_div) {
      lvl.up = cfg_.scale / level_div;
      lvl.down = 1;
    } else {
      lvl.up = 1;
      lvl.down = level_div / cfg_.scale;
    }
    lvl.cond_conv = Conv2d(cfg_.encoder_channels, cfg_.cond_channels, 3);
    lvl.cond_conv.init_he(rng);

    lvl.steps.resize(cfg_.steps_per_level);
    for (auto& step : lvl.steps) {
      step.actnorm.ch = ch;
      step.actnorm.log_scale.resize(ch);
      step.actnorm.bias.resize(ch);

      step.mix.ch = ch;
      step.mix.weight.resize(static_cast<size_t>(ch) * ch);
      // Seeded random permutation: identity-like start (|det| = 1, logdet 0).
      std::vector<int> perm(ch);
      std::iota(perm.begin(), perm.end(), 0);
      for (int i = ch - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(i + 1));
        std::swap(perm[i], perm[j]);
      }
      for (int i = 0; i < ch; ++i) step.mix.weight.value[i * ch + perm[i]] = 1.0;

      step.coupling.ca = ch / 2;
      step.coupling.cb = ch - ch / 2;
      step.coupling.net1 =
          Conv2d(step.coupling.ca + cfg_.cond_channels, cfg_.hidden_channels, 3);
      step.coupling.net2 = Conv2d(cfg_.hidden_channels, 2 * step.coupling.cb, 1);
      step.coupling.net1.init_he(rng);
      step.coupling.net2.init_zero();  // coupling starts as the identity
    }
  }
}

void FlowModel::collect_all(std::vector<ParamTensor*>& out) {
  enc_in_.collect(out, "encoder.in");
  for (size_t i = 0; i < enc_blocks_.size(); ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    enc_blocks_[i].c1.collect(out, p + ".c1");
    enc_blocks_[i].c2.collect(out, p + ".c2");
  }
  head_.collect(out, "encoder.head");
  for (size_t li = 0; li < levels_.size(); ++li) {
    const std::string lp = "flow.level" + std::to_string(li);
    levels_[li].cond_conv.collect(out, lp + ".cond");
    for (size_t si = 0; si < levels_[li].steps.size(); ++si) {
      const std::string sp = lp + ".step" + std::to_string(si);
      FlowStep& st = levels_[li].steps[si];
      st.actnorm.log_scale.name = sp + ".actnorm.log_scale";
      st.actnorm.bias.name = sp + ".actnorm.bias";
      out.push_back(&st.actnorm.log_scale);
      out.push_back(&st.actnorm.bias);
      st.mix.weight.name = sp + ".mix.weight";
      out.push_back(&st.mix.weight);
      st.coupling.net1.collect(out, sp + ".coupling.net1");
      st.coupling.net2.collect(out, sp + ".coupling.net2");
    }
  }
}

std::vector<ParamTensor*> FlowModel::all_params() {
  std::vector<ParamTensor*> out;
  collect_all(out);
  return out;
}

std::vector<ParamTensor*> FlowModel::encoder_params() {
  std::vector<ParamTensor*> out;
  enc_in_.collect(out, "encoder.in");
  for (size_t i = 0; i < enc_blocks_.size(); ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    enc_blocks_[i].c1.collect(out, p + ".c1");
    enc_blocks_[i].c2.collect(out, p + ".c2");
  }
  head_.collect(out, "encoder.head");
  return out;
}

std::vector<ParamTensor*> FlowModel::flow_params() {
  std::vector<ParamTensor*> all, enc = encoder_params(), out;
  collect_all(all);
  for (auto* p : all) {
    if (std::find(enc.begin(), enc.end(), p) == enc.end()) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

struct FlowModel::Tape {
  // Encoder activations (present when the encoder ran inside this pass).
  Tensor x;
  std::vector<Tensor> blk_in, blk_pre, blk_relu;
  Tensor feats;
  bool has_encoder = false;

  // Conditioning per level.
  std::vector<Tensor> cond_resampled, cond_pre, conds;

  struct StepCtx {
    Tensor an_in;
    Tensor mix_in;
    Tensor cat_in;
    Tensor h1_pre, h1;
    Tensor xb;
    Tensor sig, s;
  };
  std::vector<std::vector<StepCtx>> steps;
};

// ---------------------------------------------------------------------------
// Encoder and conditioning
// ---------------------------------------------------------------------------

Tensor FlowModel::encoder_features(const Tensor& x, Tape* tape) const {
  if (x.channels() != cfg_.in_channels) {
    throw std::invalid_argument("encode_lr: expected " + std::to_string(cfg_.in_channels) +
                                " channels, got " + std::to_string(x.channels()));
  }
  Tensor f = enc_in_.forward(x);
  if (tape) {
    tape->has_encoder = true;
    tape->x = x;
  }
  for (const auto& b : enc_blocks_) {
    Tensor pre = b.c1.forward(f);
    Tensor r = relu(pre);
    Tensor corr = b.c2.forward(r);
    if (tape) {
      tape->blk_in.push_back(f);
      tape->blk_pre.push_back(std::move(pre));
      tape->blk_relu.push_back(std::move(r));
    }
    f += corr;
  }
  if (tape) tape->feats = f;
  return f;
}

Tensor FlowModel::encode_lr(const Tensor& x) const { return encoder_features(x, nullptr); }

Tensor FlowModel::baseline_sr(const Tensor& x) const {
  const Tensor f = encoder_features(x, nullptr);
  Tensor out = nearest_upsample(x, cfg_.scale);
  out += depth_to_space(head_.forward(f), cfg_.scale);
  return out;
}

std::vector<Tensor> FlowModel::make_conds(const Tensor& feats) const {
  std::vector<Tensor> conds;
  conds.reserve(levels_.size());
  for (const auto& lvl : levels_) {
    Tensor f = feats;
    if (lvl.up > 1) f = nearest_upsample(f, lvl.up);
    if (lvl.down > 1) f = avg_pool(f, lvl.down);
    conds.push_back(relu(lvl.cond_conv.forward(f)));
  }
  return conds;
}

// ---------------------------------------------------------------------------
// Flow layers
// ---------------------------------------------------------------------------

namespace {

Tensor actnorm_forward(const ParamTensor& log_scale, const ParamTensor& bias, const Tensor& x,
                       double& logdet) {
  const int C = x.channels(), HW = x.height() * x.width();
  Tensor y(C, x.height(), x.width());
  double ls_sum = 0.0;
  for (int c = 0; c < C; ++c) {
    const double s = std::exp(log_scale.value[c]);
    const double b = bias.value[c];
    const double* src = x.channel(c);
    double* dst = y.channel(c);
    for (int i = 0; i < HW; ++i) dst[i] = s * (src[i] + b);
    ls_sum += log_scale.value[c];
  }
  logdet += HW * ls_sum;
  return y;
}

Tensor actnorm_inverse(const ParamTensor& log_scale, const ParamTensor& bias, const Tensor& y) {
  const int C = y.channels(), HW = y.height() * y.width();
  Tensor x(C, y.height(), y.width());
  for (int c = 0; c < C; ++c) {
    const double inv = std::exp(-log_scale.value[c]);
    const double b = bias.value[c];
    const double* src = y.channel(c);
    double* dst = x.channel(c);
    for (int i = 0; i < HW; ++i) dst[i] = src[i] * inv - b;
  }
  return x;
}

// dx for actnorm; accumulates d(log_scale), d(bias). g_ld is dL/d(logdet).
Tensor actnorm_backward(const ParamTensor& log_scale, const ParamTensor& bias, const Tensor& x,
                        const Tensor& dy, double g_ld, GradSink& gs) {
  const int C = x.channels(), HW = x.height() * x.width();
  Tensor dx(C, x.height(), x.width());
  auto& gls = gs.of(log_scale);
  auto& gb = gs.of(bias);
  for (int c = 0; c < C; ++c) {
    const double s = std::exp(log_scale.value[c]);
    const double b = bias.value[c];
    const double* px = x.channel(c);
    const double* pdy = dy.channel(c);
    double* pdx = dx.channel(c);
    double acc_b = 0.0, acc_ls = 0.0;
    for (int i = 0; i < HW; ++i) {
      const double d = pdy[i] * s;
      pdx[i] = d;
      acc_b += d;
      acc_ls += d * (px[i] + b);  // dy * y
    }
    gb[c] += acc_b;
    gls[c] += acc_ls + g_ld * HW;
  }
  return dx;
}

double logabsdet(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
  double s = 0.0;
  const auto& diag = lu.matrixLU().diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i) s += std::log(std::fabs(diag[i]));
  return s;
}

Tensor mix_forward(const ParamTensor& weight, int ch, const Tensor& x, double& logdet) {
  const int HW = x.height() * x.width();
  Tensor y(ch, x.height(), x.width());
  Eigen::Map<const MatRM> W(weight.value.data(), ch, ch);
  Eigen::Map<const MatRM> X(x.data(), ch, HW);
  Eigen::Map<MatRM> Y(y.data(), ch, HW);
  Y.noalias() = W * X;
  const Eigen::MatrixXd Wd = W;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Wd);
  logdet += HW * logabsdet(lu);
  return y;
}

Tensor mix_inverse(const ParamTensor& weight, int ch, const Tensor& y) {
  const int HW = y.height() * y.width();
  Tensor x(ch, y.height(), y.width());
  Eigen::Map<const MatRM> W(weight.value.data(), ch, ch);
  Eigen::Map<const MatRM> Y(y.data(), ch, HW);
  Eigen::Map<MatRM> X(x.data(), ch, HW);
  const Eigen::MatrixXd Wd = W;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Wd);
  X = lu.solve(Eigen::MatrixXd(Y));
  return x;
}

Tensor mix_backward(const ParamTensor& weight, int ch, const Tensor& x, const Tensor& dy,
                    double g_ld, GradSink& gs) {
  const int HW = x.height() * x.width();
  Eigen::Map<const MatRM> W(weight.value.data(), ch, ch);
  Eigen::Map<const MatRM> X(x.data(), ch, HW);
  Eigen::Map<const MatRM> dY(dy.data(), ch, HW);

  Tensor dx(ch, x.height(), x.width());
  Eigen::Map<MatRM> dX(dx.data(), ch, HW);
  dX.noalias() = W.transpose() * dY;

  auto& gw = gs.of(weight);
  Eigen::Map<MatRM> gW(gw.data(), ch, ch);
  gW.noalias() += dY * X.transpose();
  // d(HW * log|det W|)/dW = HW * W^{-T}
  const Eigen::MatrixXd Wd = W;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Wd);
  gW.noalias() += g_ld * HW * lu.inverse().transpose();
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / inverse
// ---------------------------------------------------------------------------

FlowForward FlowModel::run_forward(const Tensor& y, const std::vector<Tensor>& conds,
                                   Tape* tape) const {
  Tensor t = y;
  double logdet = 0.0;
  if (tape) tape->steps.resize(levels_.size());
  for (size_t li = 0; li < levels_.size(); ++li) {
    const FlowLevel& lvl = levels_[li];
    t = space_to_depth(t, 2);
    const Tensor& cond = conds[li];
    if (tape) tape->steps[li].resize(lvl.steps.size());
    for (size_t si = 0; si < lvl.steps.size(); ++si) {
      const FlowStep& st = lvl.steps[si];
      Tape::StepCtx* ctx = tape ? &tape->steps[li][si] : nullptr;

      if (ctx) ctx->an_in = t;
      t = actnorm_forward(st.actnorm.log_scale, st.actnorm.bias, t, logdet);

      if (ctx) ctx->mix_in = t;
      t = mix_forward(st.mix.weight, st.mix.ch, t, logdet);

      // Conditional affine coupling.
      const Coupling& cp = st.coupling;
      Tensor xa = slice_channels(t, 0, cp.ca);
      Tensor xb = slice_channels(t, cp.ca, lvl.channels);
      Tensor cat = concat_channels(xa, cond);
      Tensor h1_pre = cp.net1.forward(cat);
      Tensor h1 = relu(h1_pre);
      Tensor h2 = cp.net2.forward(h1);

      const int HW = xb.height() * xb.width();
      Tensor sig(cp.cb, xb.height(), xb.width());
      Tensor s(cp.cb, xb.height(), xb.width());
      Tensor yb(cp.cb, xb.height(), xb.width());
      double ls_sum = 0.0;
      for (int c = 0; c < cp.cb; ++c) {
        const double* pr = h2.channel(c);
        const double* pt = h2.channel(cp.cb + c);
        const double* pxb = xb.channel(c);
        double* psig = sig.channel(c);
        double* ps = s.channel(c);
        double* pyb = yb.channel(c);
        for (int i = 0; i < HW; ++i) {
          const double sg = stable_sigmoid(pr[i]);
          const double sc = 2.0 * sg;
          psig[i] = sg;
          ps[i] = sc;
          pyb[i] = sc * pxb[i] + pt[i];
          ls_sum += std::log(sc);
        }
      }
      logdet += ls_sum;

      if (ctx) {
        ctx->cat_in = std::move(cat);
        ctx->h1_pre = std::move(h1_pre);
        ctx->h1 = std::move(h1);
        ctx->xb = std::move(xb);
        ctx->sig = sig;
        ctx->s = s;
      }
      t = concat_channels(xa, yb);
    }
  }
  return {std::move(t), logdet};
}

void FlowModel::check_pair(const Tensor& y, const Tensor& x) const {
  if (y.channels() != cfg_.in_channels || x.channels() != cfg_.in_channels) {
    throw std::invalid_argument("flow: channel mismatch");
  }
  if (y.height() != x.height() * cfg_.scale || y.width() != x.width() * cfg_.scale) {
    throw std::invalid_argument("flow: y dims " + y.shape_str() + " != x dims " +
                                x.shape_str() + " x scale");
  }
  const int div = 1 << cfg_.levels;
  if (y.height() % div != 0 || y.width() % div != 0) {
    throw std::invalid_argument("flow: y dims must be divisible by 2^levels");
  }
  if (!y.all_finite() || !x.all_finite()) {
    throw std::invalid_argument("flow: non-finite input");
  }
}

FlowForward FlowModel::forward_flow(const Tensor& y, const Tensor& x) const {
  check_pair(y, x);
  const Tensor feats = encoder_features(x, nullptr);
  return run_forward(y, make_conds(feats), nullptr);
}

Tensor FlowModel::inverse_flow(const Tensor& z, const Tensor& x) const {
  const LatentShape ls = latent_shape(x.height(), x.width());
  if (z.channels() != ls.channels || z.height() != ls.height || z.width() != ls.width) {
    throw std::invalid_argument("inverse_flow: latent shape mismatch, expected " +
                                std::to_string(ls.channels) + "x" + std::to_string(ls.height) +
                                "x" + std::to_string(ls.width) + ", got " + z.shape_str());
  }
  const Tensor feats = encoder_features(x, nullptr);
  const std::vector<Tensor> conds = make_conds(feats);

  Tensor t = z;
  for (int li = static_cast<int>(levels_.size()) - 1; li >= 0; --li) {
    const FlowLevel& lvl = levels_[li];
    const Tensor& cond = conds[li];
    for (int si = static_cast<int>(lvl.steps.size()) - 1; si >= 0; --si) {
      const FlowStep& st = lvl.steps[si];
      const Coupling& cp = st.coupling;

      // Coupling inverse: recompute (s, t) from the untouched half.
      Tensor ya = slice_channels(t, 0, cp.ca);
      Tensor yb = slice_channels(t, cp.ca, lvl.channels);
      Tensor h1 = relu(cp.net1.forward(concat_channels(ya, cond)));
      Tensor h2 = cp.net2.forward(h1);
      const int HW = yb.height() * yb.width();
      Tensor xb(cp.cb, yb.height(), yb.width());
      for (int c = 0; c < cp.cb; ++c) {
        const double* pr = h2.channel(c);
        const double* pt = h2.channel(cp.cb + c);
        const double* pyb = yb.channel(c);
        double* pxb = xb.channel(c);
        for (int i = 0; i < HW; ++i) {
          pxb[i] = (pyb[i] - pt[i]) / (2.0 * stable_sigmoid(pr[i]));
        }
      }
      t = concat_channels(ya, xb);

      t = mix_inverse(st.mix.weight, st.mix.ch, t);
      t = actnorm_inverse(st.actnorm.log_scale, st.actnorm.bias, t);
    }
    t = depth_to_space(t, 2);
  }
  return t;
}

LatentShape FlowModel::latent_shape(int lr_height, int lr_width) const {
  const int div = 1 << cfg_.levels;
  return {cfg_.in_channels * div * div, lr_height * cfg_.scale / div,
          lr_width * cfg_.scale / div};
}

// ---------------------------------------------------------------------------
// NLL and gradients
// ---------------------------------------------------------------------------

double FlowModel::nll_loss(const Tensor& y, const Tensor& x) const {
  const FlowForward ff = forward_flow(y, x);
  double sq = 0.0;
  for (size_t i = 0; i < ff.z.size(); ++i) sq += ff.z[i] * ff.z[i];
  const double nll = 0.5 * sq + kHalfLog2Pi * static_cast<double>(ff.z.size()) - ff.logdet;
  if (!std::isfinite(nll)) throw std::runtime_error("nll_loss: non-finite value");
  return nll;
}

double FlowModel::nll_backward_impl(const Tensor& y, const Tensor* x, const Tensor* feats,
                                    GradSink& gs) const {
  Tape tape;
  Tensor f = feats ? *feats : encoder_features(*x, &tape);

  // Conditioning with saved pre-activations.
  tape.cond_resampled.resize(levels_.size());
  tape.cond_pre.resize(levels_.size());
  tape.conds.resize(levels_.size());
  for (size_t li = 0; li < levels_.size(); ++li) {
    const FlowLevel& lvl = levels_[li];
    Tensor r = f;
    if (lvl.up > 1) r = nearest_upsample(r, lvl.up);
    if (lvl.down > 1) r = avg_pool(r, lvl.down);
    tape.cond_resampled[li] = r;
    tape.cond_pre[li] = lvl.cond_conv.forward(r);
    tape.conds[li] = relu(tape.cond_pre[li]);
  }

  FlowForward ff = run_forward(y, tape.conds, &tape);
  double sq = 0.0;
  for (size_t i = 0; i < ff.z.size(); ++i) sq += ff.z[i] * ff.z[i];
  const double nll = 0.5 * sq + kHalfLog2Pi * static_cast<double>(ff.z.size()) - ff.logdet;

  // dL/dz = z, dL/dlogdet = -1.
  Tensor dt = ff.z;
  const double g_ld = -1.0;
  Tensor dfeats(f.channels(), f.height(), f.width());

  for (int li = static_cast<int>(levels_.size()) - 1; li >= 0; --li) {
    const FlowLevel& lvl = levels_[li];
    Tensor dcond(tape.conds[li].channels(), tape.conds[li].height(), tape.conds[li].width());

    for (int si = static_cast<int>(lvl.steps.size()) - 1; si >= 0; --si) {
      const FlowStep& st = lvl.steps[si];
      const Coupling& cp = st.coupling;
      const Tape::StepCtx& ctx = tape.steps[li][si];

      // Coupling backward.
      Tensor dya = slice_channels(dt, 0, cp.ca);
      Tensor dyb = slice_channels(dt, cp.ca, lvl.channels);
      const int HW = dyb.height() * dyb.width();

      Tensor dxb(cp.cb, dyb.height(), dyb.width());
      Tensor dh2(2 * cp.cb, dyb.height(), dyb.width());
      for (int c = 0; c < cp.cb; ++c) {
        const double* pdyb = dyb.channel(c);
        const double* pxb = ctx.xb.channel(c);
        const double* ps = ctx.s.channel(c);
        const double* psig = ctx.sig.channel(c);
        double* pdxb = dxb.channel(c);
        double* pdr = dh2.channel(c);
        double* pdt = dh2.channel(cp.cb + c);
        for (int i = 0; i < HW; ++i) {
          pdxb[i] = pdyb[i] * ps[i];
          // d(log s)/dr = 1 - sigma; ds/dr = s * (1 - sigma)
          pdr[i] = pdyb[i] * pxb[i] * ps[i] * (1.0 - psig[i]) + g_ld * (1.0 - psig[i]);
          pdt[i] = pdyb[i];
        }
      }
      Tensor dh1 = cp.net2.backward(ctx.h1, dh2, gs);
      Tensor dcat = cp.net1.backward(ctx.cat_in, relu_backward(ctx.h1_pre, dh1), gs);
      Tensor dxa = slice_channels(dcat, 0, cp.ca);
      dxa += dya;
      dcond += slice_channels(dcat, cp.ca, cp.ca + cfg_.cond_channels);
      dt = concat_channels(dxa, dxb);

      dt = mix_backward(st.mix.weight, st.mix.ch, ctx.mix_in, dt, g_ld, gs);
      dt = actnorm_backward(st.actnorm.log_scale, st.actnorm.bias, ctx.an_in, dt, g_ld, gs);
    }
    dt = depth_to_space(dt, 2);

    // Conditioning backward for this level.
    Tensor dpre = relu_backward(tape.cond_pre[li], dcond);
    Tensor dresampled = lvl.cond_conv.backward(tape.cond_resampled[li], dpre, gs);
    if (lvl.down > 1) dresampled = avg_pool_backward(f, dresampled, lvl.down);
    if (lvl.up > 1) dresampled = nearest_upsample_backward(f, dresampled, lvl.up);
    dfeats += dresampled;
  }

  if (tape.has_encoder) {
    Tensor d = dfeats;
    for (int i = static_cast<int>(enc_blocks_.size()) - 1; i >= 0; --i) {
      const ResBlock& b = enc_blocks_[i];
      Tensor dh = b.c2.backward(tape.blk_relu[i], d, gs);
      Tensor dfin = b.c1.backward(tape.blk_in[i], relu_backward(tape.blk_pre[i], dh), gs);
      d += dfin;
    }
    enc_in_.backward(tape.x, d, gs);
  }
  return nll;
}

double FlowModel::nll_backward(const Tensor& y, const Tensor& x, GradSink& gs) const {
  check_pair(y, x);
  return nll_backward_impl(y, &x, nullptr, gs);
}

double FlowModel::nll_backward_from_features(const Tensor& y, const Tensor& feats,
                                             GradSink& gs) const {
  return nll_backward_impl(y, nullptr, &feats, gs);
}

double FlowModel::baseline_l1_backward(const Tensor& y, const Tensor& x, GradSink& gs) const {
  check_pair(y, x);
  Tape tape;
  const Tensor f = encoder_features(x, &tape);
  const Tensor head_out = head_.forward(f);
  Tensor pred = nearest_upsample(x, cfg_.scale);
  pred += depth_to_space(head_out, cfg_.scale);

  const double n = static_cast<double>(pred.size());
  double loss = 0.0;
  Tensor dpred(pred.channels(), pred.height(), pred.width());
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - y[i];
    loss += std::fabs(d);
    dpred[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
  }
  loss /= n;

  Tensor dfeats = head_.backward(f, space_to_depth(dpred, cfg_.scale), gs);
  Tensor d = dfeats;
  for (int i = static_cast<int>(enc_blocks_.size()) - 1; i >= 0; --i) {
    const ResBlock& b = enc_blocks_[i];
    Tensor dh = b.c2.backward(tape.blk_relu[i], d, gs);
    Tensor dfin = b.c1.backward(tape.blk_in[i], relu_backward(tape.blk_pre[i], dh), gs);
    d += dfin;
  }
  enc_in_.backward(tape.x, d, gs);
  return loss;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

Tensor FlowModel::sample(const Tensor& x, double temperature, uint64_t seed) const {
  if (temperature < 0.0) throw std::invalid_argument("sample: temperature must be >= 0");
  const LatentShape ls = latent_shape(x.height(), x.width());
  Tensor z(ls.channels, ls.height, ls.width);
  if (temperature > 0.0) {
    Rng rng(seed);
    for (size_t i = 0; i < z.size(); ++i) z[i] = temperature * rng.normal();
  }
  return inverse_flow(z, x);
}

SampleStack FlowModel::sample_stack(const Tensor& x, double temperature,
                                    const std::vector<uint64_t>& seeds) const {
  if (seeds.empty()) throw std::invalid_argument("sample_stack: need at least one seed");
  std::set<uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) {
    throw std::invalid_argument("sample_stack: seeds must be pairwise distinct");
  }
  SampleStack stack;
  stack.lr = x;
  stack.temperature = temperature;
  stack.seeds = seeds;
  stack.samples.resize(seeds.size());
  std::string err;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(seeds.size()); ++i) {
    try {
      stack.samples[i] = sample(x, temperature, seeds[i]);
    } catch (const std::exception& e) {
#pragma omp critical
      if (err.empty()) err = e.what();
    }
  }
  if (!err.empty()) throw std::runtime_error("sample_stack: " + err);
  return stack;
}

// ---------------------------------------------------------------------------
// Actnorm data-dependent init
// ---------------------------------------------------------------------------

void FlowModel::init_actnorm(const std::vector<Tensor>& ys, const std::vector<Tensor>& xs) {
  if (actnorm_initialized_) return;
  if (ys.empty() || ys.size() != xs.size()) {
    throw std::invalid_argument("init_actnorm: need a non-empty batch");
  }
  const size_t n = ys.size();
  std::vector<std::vector<Tensor>> conds(n);
  std::vector<Tensor> ts(n);
  for (size_t i = 0; i < n; ++i) {
    check_pair(ys[i], xs[i]);
    conds[i] = make_conds(encoder_features(xs[i], nullptr));
    ts[i] = ys[i];
  }

  double dummy = 0.0;
  for (size_t li = 0; li < levels_.size(); ++li) {
    FlowLevel& lvl = levels_[li];
    for (size_t i = 0; i < n; ++i) ts[i] = space_to_depth(ts[i], 2);
    for (auto& st : lvl.steps) {
      // Per-channel stats over the batch at this actnorm's input.
      const int C = lvl.channels;
      const int HW = ts[0].height() * ts[0].width();
      for (int c = 0; c < C; ++c) {
        double sum = 0.0, sum2 = 0.0;
        for (size_t i = 0; i < n; ++i) {
          const double* p = ts[i].channel(c);
          for (int j = 0; j < HW; ++j) {
            sum += p[j];
            sum2 += p[j] * p[j];
          }
        }
        const double count = static_cast<double>(n) * HW;
        const double mean = sum / count;
        const double var = std::max(0.0, sum2 / count - mean * mean);
        st.actnorm.bias.value[c] = -mean;
        st.actnorm.log_scale.value[c] = -std::log(std::sqrt(var) + 1e-6);
      }
      for (size_t i = 0; i < n; ++i) {
        ts[i] = actnorm_forward(st.actnorm.log_scale, st.actnorm.bias, ts[i], dummy);
        ts[i] = mix_forward(st.mix.weight, st.mix.ch, ts[i], dummy);
        // Coupling forward (no tape).
        const Coupling& cp = st.coupling;
        Tensor xa = slice_channels(ts[i], 0, cp.ca);
        Tensor xb = slice_channels(ts[i], cp.ca, lvl.channels);
        Tensor h2 = cp.net2.forward(relu(cp.net1.forward(concat_channels(xa, conds[i][li]))));
        const int hw = xb.height() * xb.width();
        Tensor yb(cp.cb, xb.height(), xb.width());
        for (int c = 0; c < cp.cb; ++c) {
          const double* pr = h2.channel(c);
          const double* pt = h2.channel(cp.cb + c);
          const double* pxb = xb.channel(c);
          double* pyb = yb.channel(c);
          for (int j = 0; j < hw; ++j) {
            pyb[j] = 2.0 * stable_sigmoid(pr[j]) * pxb[j] + pt[j];
          }
        }
        ts[i] = concat_channels(xa, yb);
      }
    }
  }
  actnorm_initialized_ = true;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void FlowModel::save(const std::string& path) const {
  nlohmann::json meta;
  meta["kind"] = "flow";
  meta["scale"] = cfg_.scale;
  meta["in_channels"] = cfg_.in_channels;
  meta["levels"] = cfg_.levels;
  meta["steps_per_level"] = cfg_.steps_per_level;
  meta["hidden_channels"] = cfg_.hidden_channels;
  meta["cond_channels"] = cfg_.cond_channels;
  meta["encoder_channels"] = cfg_.encoder_channels;
  meta["encoder_blocks"] = cfg_.encoder_blocks;
  meta["actnorm_initialized"] = actnorm_initialized_;
  save_checkpoint(path, meta, const_cast<FlowModel*>(this)->all_params());
}

FlowModel FlowModel::load(const std::string& path) {
  const nlohmann::json meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "flow") {
    throw std::runtime_error("FlowModel::load: not a flow checkpoint: " + path);
  }
  FlowConfig cfg;
  cfg.scale = meta.at("scale").get<int>();
  cfg.in_channels = meta.at("in_channels").get<int>();
  cfg.levels = meta.at("levels").get<int>();
  cfg.steps_per_level = meta.at("steps_per_level").get<int>();
  cfg.hidden_channels = meta.at("hidden_channels").get<int>();
  cfg.cond_channels = meta.at("cond_channels").get<int>();
  cfg.encoder_channels = meta.at("encoder_channels").get<int>();
  cfg.encoder_blocks = meta.at("encoder_blocks").get<int>();

  FlowModel model(cfg, 0);
  load_checkpoint(path, model.all_params());
  model.actnorm_initialized_ = meta.value("actnorm_initialized", false);
  return model;
}

void FlowModel::randomize_params(uint64_t seed, double amplitude) {
  Rng rng(seed);
  auto rand_conv = [&](Conv2d& c, double scale) {
    c.init_he(rng);
    for (double& w : c.weight.value) w *= scale;
    for (double& b : c.bias.value) b = 0.05 * scale * rng.normal();
  };
  rand_conv(enc_in_, amplitude);
  for (auto& b : enc_blocks_) {
    rand_conv(b.c1, amplitude);
    rand_conv(b.c2, amplitude);
  }
  rand_conv(head_, amplitude);
  for (auto& lvl : levels_) {
    rand_conv(lvl.cond_conv, amplitude);
    for (auto& st : lvl.steps) {
      for (int c = 0; c < st.actnorm.ch; ++c) {
        st.actnorm.log_scale.value[c] = 0.1 * amplitude * rng.normal();
        st.actnorm.bias.value[c] = 0.1 * amplitude * rng.normal();
      }
      // Random orthogonal mix via QR: |det| = 1, always well conditioned.
      const int ch = st.mix.ch;
      Eigen::MatrixXd m(ch, ch);
      for (int i = 0; i < ch; ++i)
        for (int j = 0; j < ch; ++j) m(i, j) = rng.normal();
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
      Eigen::MatrixXd q = qr.householderQ();
      for (int i = 0; i < ch; ++i)
        for (int j = 0; j < ch; ++j) st.mix.weight.value[i * ch + j] = q(i, j);
      rand_conv(st.coupling.net1, amplitude);
      // Small output weights keep the coupling gates away from s -> 0, so
      // random flows stay well conditioned for round-trip checks.
      rand_conv(st.coupling.net2, 0.1 * amplitude);
    }
  }
  actnorm_initialized_ = true;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct PairSet {
  std::vector<Tensor> hr, lr;
};

PairSet load_pairs(const DatasetManifest& manifest, const std::string& manifest_dir) {
  PairSet ps;
  for (const auto& e : manifest.entries) {
    ps.hr.push_back(load_png((fs::path(manifest_dir) / e.hr_path).string()));
    ps.lr.push_back(load_png((fs::path(manifest_dir) / e.lr_path).string()));
  }
  return ps;
}

}  // namespace

FlowModel train_flow_pairs(const std::vector<Tensor>& hr, const std::vector<Tensor>& lr,
                           const FlowConfig& cfg, const FlowTrainConfig& tcfg) {
  if (hr.empty() || hr.size() != lr.size()) {
    throw std::invalid_argument("train_flow: empty or mismatched dataset");
  }
  for (size_t i = 1; i < hr.size(); ++i) {
    if (!hr[i].same_shape(hr[0]) || !lr[i].same_shape(lr[0])) {
      throw std::invalid_argument("train_flow: all pairs must share dimensions");
    }
  }

  if (hr[0].channels() != cfg.in_channels || lr[0].channels() != cfg.in_channels ||
      hr[0].height() != lr[0].height() * cfg.scale ||
      hr[0].width() != lr[0].width() * cfg.scale ||
      hr[0].height() % (1 << cfg.levels) != 0 || hr[0].width() % (1 << cfg.levels) != 0) {
    throw std::invalid_argument("train_flow: pair dimensions inconsistent with the flow config");
  }

  FlowModel model(cfg, mix_seed(tcfg.seed, 0xF10));
  const int n = static_cast<int>(hr.size());
  const int batch = std::min(tcfg.batch_size, n);

  std::ofstream log;
  if (!tcfg.log_path.empty()) {
    log.open(tcfg.log_path, std::ios::binary);
    if (!log) throw std::runtime_error("train_flow: cannot open log " + tcfg.log_path);
  }

  const std::vector<ParamTensor*> all = model.all_params();
  std::vector<GradSink> sinks(batch);
  for (auto& s : sinks) s.init(all);

  // Stage 1: L1 pretraining of the LR encoder + SR head.
  if (tcfg.encoder_iters > 0) {
    std::vector<ParamTensor*> enc = model.encoder_params();
    Adam opt(enc, {.lr = tcfg.encoder_lr});
    Rng rng(mix_seed(tcfg.seed, 1));
    for (int it = 0; it < tcfg.encoder_iters; ++it) {
      std::vector<int> idx(batch);
      for (int b = 0; b < batch; ++b) idx[b] = static_cast<int>(rng.below(n));
      zero_grads(enc);
      std::vector<double> losses(batch);
      std::string err;
#pragma omp parallel for schedule(static)
      for (int b = 0; b < batch; ++b) {
        try {
          sinks[b].zero();
          losses[b] = model.baseline_l1_backward(hr[idx[b]], lr[idx[b]], sinks[b]);
        } catch (const std::exception& e) {
#pragma omp critical
          if (err.empty()) err = e.what();
        }
      }
      if (!err.empty()) throw std::runtime_error("train_flow: " + err);
      double loss = 0.0;
      for (int b = 0; b < batch; ++b) {
        loss += losses[b];
        sinks[b].reduce_into(enc, 1.0 / batch);
      }
      loss /= batch;
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_flow: non-finite encoder loss at iteration " +
                                 std::to_string(it));
      }
      clip_grad_norm(enc, tcfg.grad_clip);
      opt.step(tcfg.encoder_lr);
      if (log) log << "enc " << it << " " << loss << "\n";
    }
  }

  // Stage 2: NLL training of the flow with the encoder frozen. Encoder
  // features are fixed, so cache them per LR input.
  if (tcfg.flow_iters > 0) {
    std::vector<Tensor> feats(n);
    for (int i = 0; i < n; ++i) feats[i] = model.encode_lr(lr[i]);

    Rng rng(mix_seed(tcfg.seed, 2));
    std::vector<int> first(batch);
    for (int b = 0; b < batch; ++b) first[b] = static_cast<int>(rng.below(n));
    {
      std::vector<Tensor> ys, xs;
      for (int b = 0; b < batch; ++b) {
        ys.push_back(hr[first[b]]);
        xs.push_back(lr[first[b]]);
      }
      model.init_actnorm(ys, xs);
    }

    std::vector<ParamTensor*> fparams = model.flow_params();
    Adam opt(fparams, {.lr = tcfg.flow_lr});
    for (int it = 0; it < tcfg.flow_iters; ++it) {
      std::vector<int> idx;
      if (it == 0) {
        idx = first;
      } else {
        idx.resize(batch);
        for (int b = 0; b < batch; ++b) idx[b] = static_cast<int>(rng.below(n));
      }
      zero_grads(fparams);
      std::vector<double> losses(batch);
      std::string err;
#pragma omp parallel for schedule(static)
      for (int b = 0; b < batch; ++b) {
        try {
          sinks[b].zero();
          losses[b] = model.nll_backward_from_features(hr[idx[b]], feats[idx[b]], sinks[b]);
        } catch (const std::exception& e) {
#pragma omp critical
          if (err.empty()) err = e.what();
        }
      }
      if (!err.empty()) throw std::runtime_error("train_flow: " + err);
      double loss = 0.0;
      for (int b = 0; b < batch; ++b) {
        loss += losses[b];
        sinks[b].reduce_into(fparams, 1.0 / batch);
      }
      loss /= batch;
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_flow: non-finite NLL at iteration " +
                                 std::to_string(it) + " (diverged)");
      }
      clip_grad_norm(fparams, tcfg.grad_clip);
      opt.step(tcfg.flow_lr);
      if (log) log << "nll " << it << " " << loss << "\n";
    }
  }
  return model;
}

FlowModel train_flow(const DatasetManifest& manifest, const std::string& manifest_dir,
                     const FlowConfig& cfg, const FlowTrainConfig& tcfg) {
  if (manifest.entries.empty()) throw std::invalid_argument("train_flow: empty manifest");
  const PairSet ps = load_pairs(manifest, manifest_dir);
  return train_flow_pairs(ps.hr, ps.lr, cfg, tcfg);
}

}  // namespace srspace
