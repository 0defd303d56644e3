#include "srspace/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace srspace {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatCM = Eigen::MatrixXd;

// im2col: (in_ch*k*k) x (H*W), column-major. Column j holds the receptive
// field of output position j (row-major over y,x), zero padded.
void im2col(const Tensor& x, int k, MatCM& cols) {
  const int C = x.channels(), H = x.height(), W = x.width();
  const int pad = k / 2;
  cols.resize(C * k * k, H * W);
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      const int col = y * W + xx;
      double* dst = cols.data() + static_cast<size_t>(col) * C * k * k;
      int r = 0;
      for (int c = 0; c < C; ++c) {
        const double* plane = x.channel(c);
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - pad;
          for (int kx = 0; kx < k; ++kx, ++r) {
            const int sx = xx + kx - pad;
            dst[r] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                         ? plane[sy * W + sx]
                         : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const MatCM& cols, int k, Tensor& dx) {
  const int C = dx.channels(), H = dx.height(), W = dx.width();
  const int pad = k / 2;
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      const int col = y * W + xx;
      const double* src = cols.data() + static_cast<size_t>(col) * C * k * k;
      int r = 0;
      for (int c = 0; c < C; ++c) {
        double* plane = dx.channel(c);
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - pad;
          for (int kx = 0; kx < k; ++kx, ++r) {
            const int sx = xx + kx - pad;
            if (sy >= 0 && sy < H && sx >= 0 && sx < W) plane[sy * W + sx] += src[r];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in, int out, int k) : in_ch(in), out_ch(out), ksize(k) {
  weight.resize(static_cast<size_t>(out) * in * k * k);
  bias.resize(out);
}

void Conv2d::init_he(Rng& rng) {
  const double std = std::sqrt(2.0 / (in_ch * ksize * ksize));
  for (double& w : weight.value) w = rng.normal() * std;
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Conv2d::init_zero() {
  std::fill(weight.value.begin(), weight.value.end(), 0.0);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Conv2d::collect(std::vector<ParamTensor*>& out, const std::string& prefix) {
  weight.name = prefix + ".weight";
  bias.name = prefix + ".bias";
  out.push_back(&weight);
  out.push_back(&bias);
}

void finalize_params(const std::vector<ParamTensor*>& params) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->id = static_cast<int>(i);
}

void zero_grads(const std::vector<ParamTensor*>& params) {
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

size_t total_param_count(const std::vector<ParamTensor*>& params) {
  size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.channels() != in_ch) {
    throw std::invalid_argument("Conv2d: expected " + std::to_string(in_ch) +
                                " input channels, got " + std::to_string(x.channels()));
  }
  const int H = x.height(), W = x.width();
  Tensor y(out_ch, H, W);

  MatCM cols;
  im2col(x, ksize, cols);
  Eigen::Map<const MatRM> wmap(weight.value.data(), out_ch, in_ch * ksize * ksize);
  Eigen::Map<MatRM> ymap(y.data(), out_ch, H * W);
  ymap.noalias() = wmap * cols;
  for (int o = 0; o < out_ch; ++o) ymap.row(o).array() += bias.value[o];
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, GradSink& gs) const {
  const int H = x.height(), W = x.width();
  MatCM cols;
  im2col(x, ksize, cols);

  Eigen::Map<const MatRM> dymap(dy.data(), out_ch, H * W);
  Eigen::Map<const MatRM> wmap(weight.value.data(), out_ch, in_ch * ksize * ksize);

  auto& gw = gs.of(weight);
  Eigen::Map<MatRM> gwmap(gw.data(), out_ch, in_ch * ksize * ksize);
  gwmap.noalias() += dymap * cols.transpose();

  auto& gb = gs.of(bias);
  for (int o = 0; o < out_ch; ++o) gb[o] += dymap.row(o).sum();

  MatCM dcols(in_ch * ksize * ksize, H * W);
  dcols.noalias() = wmap.transpose() * dymap;
  Tensor dx(in_ch, H, W);
  col2im(dcols, ksize, dx);
  return dx;
}

Tensor Conv2d::backward_data(const Tensor& dy) const {
  const int H = dy.height(), W = dy.width();
  Eigen::Map<const MatRM> dymap(dy.data(), out_ch, H * W);
  Eigen::Map<const MatRM> wmap(weight.value.data(), out_ch, in_ch * ksize * ksize);
  MatCM dcols(in_ch * ksize * ksize, H * W);
  dcols.noalias() = wmap.transpose() * dymap;
  Tensor dx(in_ch, H, W);
  col2im(dcols, ksize, dx);
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0.0) y[i] = 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (x[i] <= 0.0) dx[i] = 0.0;
  return dx;
}

Tensor avg_pool(const Tensor& x, int factor) {
  const int C = x.channels(), H = x.height() / factor, W = x.width() / factor;
  Tensor y(C, H, W);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < C; ++c) {
    for (int yy = 0; yy < H; ++yy) {
      for (int xx = 0; xx < W; ++xx) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            s += x.at(c, yy * factor + dy, xx * factor + dx);
        y.at(c, yy, xx) = s * inv;
      }
    }
  }
  return y;
}

Tensor avg_pool_backward(const Tensor& x_shape_like, const Tensor& dy, int factor) {
  Tensor dx(x_shape_like.channels(), x_shape_like.height(), x_shape_like.width());
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < dy.channels(); ++c) {
    for (int yy = 0; yy < dy.height(); ++yy) {
      for (int xx = 0; xx < dy.width(); ++xx) {
        const double g = dy.at(c, yy, xx) * inv;
        for (int fy = 0; fy < factor; ++fy)
          for (int fx = 0; fx < factor; ++fx)
            dx.at(c, yy * factor + fy, xx * factor + fx) = g;
      }
    }
  }
  return dx;
}

Tensor nearest_upsample(const Tensor& x, int factor) {
  const int C = x.channels(), H = x.height() * factor, W = x.width() * factor;
  Tensor y(C, H, W);
  for (int c = 0; c < C; ++c)
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx)
        y.at(c, yy, xx) = x.at(c, yy / factor, xx / factor);
  return y;
}

Tensor nearest_upsample_backward(const Tensor& x_shape_like, const Tensor& dy, int factor) {
  Tensor dx(x_shape_like.channels(), x_shape_like.height(), x_shape_like.width());
  for (int c = 0; c < dy.channels(); ++c)
    for (int yy = 0; yy < dy.height(); ++yy)
      for (int xx = 0; xx < dy.width(); ++xx)
        dx.at(c, yy / factor, xx / factor) += dy.at(c, yy, xx);
  return dx;
}

Tensor space_to_depth(const Tensor& x, int factor) {
  if (x.height() % factor != 0 || x.width() % factor != 0) {
    throw std::invalid_argument("space_to_depth: dimensions not divisible by factor");
  }
  const int C = x.channels(), H = x.height() / factor, W = x.width() / factor;
  Tensor y(C * factor * factor, H, W);
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < factor; ++dy)
      for (int dx = 0; dx < factor; ++dx) {
        const int oc = (c * factor + dy) * factor + dx;
        for (int yy = 0; yy < H; ++yy)
          for (int xx = 0; xx < W; ++xx)
            y.at(oc, yy, xx) = x.at(c, yy * factor + dy, xx * factor + dx);
      }
  return y;
}

Tensor depth_to_space(const Tensor& x, int factor) {
  if (x.channels() % (factor * factor) != 0) {
    throw std::invalid_argument("depth_to_space: channels not divisible by factor^2");
  }
  const int C = x.channels() / (factor * factor);
  const int H = x.height() * factor, W = x.width() * factor;
  Tensor y(C, H, W);
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < factor; ++dy)
      for (int dx = 0; dx < factor; ++dx) {
        const int ic = (c * factor + dy) * factor + dx;
        for (int yy = 0; yy < x.height(); ++yy)
          for (int xx = 0; xx < x.width(); ++xx)
            y.at(c, yy * factor + dy, xx * factor + dx) = x.at(ic, yy, xx);
      }
  return y;
}

Adam::Adam(const std::vector<ParamTensor*>& params, const AdamConfig& cfg)
    : params_(params), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->value.size(), 0.0);
    v_[i].assign(params_[i]->value.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    ParamTensor& p = *params_[i];
    for (size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double cosine_lr(double lr0, int step, int total) {
  if (total <= 0) return lr0;
  const double t = std::min(1.0, static_cast<double>(step) / total);
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * t));
}

double clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params)
      for (double& g : p->grad) g *= s;
  }
  return norm;
}

}  // namespace srspace
