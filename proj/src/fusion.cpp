#include "srspace/fusion.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "srspace/checkpoint.hpp"
#include "srspace/ensemble.hpp"

namespace srspace {

void FusionConfig::validate() const {
  if (k_in < 1 || channels < 1 || width < 1 || blocks < 0) {
    throw std::invalid_argument("FusionConfig: invalid field");
  }
  if (variant != "l1" && variant != "lpips") {
    throw std::invalid_argument("FusionConfig: variant must be 'l1' or 'lpips'");
  }
}

double l1_loss(const ImageTensor& pred, const ImageTensor& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

FusionNet::FusionNet(const FusionConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  in_proj_ = Conv2d(cfg_.k_in * cfg_.channels, cfg_.width, 3);
  in_proj_.init_he(rng);
  blocks_.resize(cfg_.blocks);
  for (auto& b : blocks_) {
    b.c1 = Conv2d(cfg_.width, cfg_.width, 3);
    b.c2 = Conv2d(cfg_.width, cfg_.width, 3);
    b.c1.init_he(rng);
    b.c2.init_he(rng);
  }
  out_proj_ = Conv2d(cfg_.width, cfg_.channels, 3);
  out_proj_.init_zero();  // untrained net == average ensemble

  std::vector<ParamTensor*> all;
  collect_all(all);
  finalize_params(all);
}

void FusionNet::collect_all(std::vector<ParamTensor*>& out) {
  in_proj_.collect(out, "fusion.in_proj");
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "fusion.block" + std::to_string(i);
    blocks_[i].c1.collect(out, p + ".c1");
    blocks_[i].c2.collect(out, p + ".c2");
  }
  out_proj_.collect(out, "fusion.out_proj");
}

std::vector<ParamTensor*> FusionNet::all_params() {
  std::vector<ParamTensor*> out;
  collect_all(out);
  return out;
}

Tensor FusionNet::stacked_input(const SampleStack& stack) const {
  if (static_cast<int>(stack.samples.size()) < cfg_.k_in) {
    throw std::invalid_argument("fuse: stack smaller than k_in = " + std::to_string(cfg_.k_in));
  }
  const Tensor& s0 = stack.samples[0];
  if (s0.channels() != cfg_.channels) {
    throw std::invalid_argument("fuse: channel mismatch");
  }
  Tensor in(cfg_.k_in * cfg_.channels, s0.height(), s0.width());
  const size_t per = s0.size();
  for (int i = 0; i < cfg_.k_in; ++i) {
    if (!stack.samples[i].same_shape(s0)) {
      throw std::invalid_argument("fuse: samples differ in shape");
    }
    std::copy(stack.samples[i].data(), stack.samples[i].data() + per, in.data() + i * per);
  }
  return in;
}

Tensor FusionNet::fuse(const SampleStack& stack) const {
  const Tensor in = stacked_input(stack);
  Tensor f = in_proj_.forward(in);
  for (const auto& b : blocks_) {
    f += b.c2.forward(relu(b.c1.forward(f)));
  }
  Tensor out = ensemble_average(stack, cfg_.k_in);
  out += out_proj_.forward(f);
  return out;
}

double FusionNet::loss_backward(const SampleStack& stack, const Tensor& target,
                                const PerceptualExtractor* extractor, GradSink& gs) const {
  // Forward with saved activations.
  const Tensor in = stacked_input(stack);
  Tensor f = in_proj_.forward(in);
  std::vector<Tensor> blk_in(blocks_.size()), blk_pre(blocks_.size()), blk_relu(blocks_.size());
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blk_in[i] = f;
    blk_pre[i] = blocks_[i].c1.forward(f);
    blk_relu[i] = relu(blk_pre[i]);
    f += blocks_[i].c2.forward(blk_relu[i]);
  }
  Tensor fused = ensemble_average(stack, cfg_.k_in);
  fused += out_proj_.forward(f);

  if (!fused.same_shape(target)) throw std::invalid_argument("fusion loss: shape mismatch");

  double loss = 0.0;
  Tensor dfused(fused.channels(), fused.height(), fused.width());
  if (cfg_.variant == "lpips") {
    if (!extractor) throw std::invalid_argument("fusion: LPIPS variant needs an extractor");
    loss = extractor->lpips_grad(fused, target, &dfused);
  } else {
    const double n = static_cast<double>(fused.size());
    for (size_t i = 0; i < fused.size(); ++i) {
      const double d = fused[i] - target[i];
      loss += std::fabs(d);
      dfused[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
    loss /= n;
  }

  Tensor df = out_proj_.backward(f, dfused, gs);
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    Tensor dh = blocks_[i].c2.backward(blk_relu[i], df, gs);
    Tensor din = blocks_[i].c1.backward(blk_in[i], relu_backward(blk_pre[i], dh), gs);
    df += din;
  }
  in_proj_.backward(in, df, gs);
  return loss;
}

void FusionNet::save(const std::string& path, const std::string& extractor_provenance,
                     uint64_t extractor_seed) const {
  nlohmann::json meta;
  meta["kind"] = "fusion";
  meta["k_in"] = cfg_.k_in;
  meta["channels"] = cfg_.channels;
  meta["width"] = cfg_.width;
  meta["blocks"] = cfg_.blocks;
  meta["variant"] = cfg_.variant;
  meta["extractor_provenance"] = extractor_provenance;
  meta["extractor_seed"] = extractor_seed;
  save_checkpoint(path, meta, const_cast<FusionNet*>(this)->all_params());
}

FusionNet::Loaded FusionNet::load(const std::string& path) {
  const nlohmann::json meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "fusion") {
    throw std::runtime_error("FusionNet::load: not a fusion checkpoint: " + path);
  }
  FusionConfig cfg;
  cfg.k_in = meta.at("k_in").get<int>();
  cfg.channels = meta.at("channels").get<int>();
  cfg.width = meta.at("width").get<int>();
  cfg.blocks = meta.at("blocks").get<int>();
  cfg.variant = meta.at("variant").get<std::string>();

  FusionNet net(cfg, 0);
  load_checkpoint(path, net.all_params());
  return {std::move(net), meta.value("extractor_provenance", ""),
          meta.value("extractor_seed", uint64_t{0})};
}

FusionNet train_fusion(const std::vector<FusionPair>& data, const FusionConfig& cfg,
                       const FusionTrainConfig& tcfg, const PerceptualExtractor* extractor) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_fusion: empty dataset");
  if (cfg.variant == "lpips" && !extractor) {
    throw std::invalid_argument("train_fusion: LPIPS variant requires a PerceptualExtractor");
  }

  FusionNet net(cfg, mix_seed(tcfg.seed, 0xFA5));
  if (tcfg.iterations == 0) return net;

  std::ofstream log;
  if (!tcfg.log_path.empty()) {
    log.open(tcfg.log_path, std::ios::binary);
    if (!log) throw std::runtime_error("train_fusion: cannot open log " + tcfg.log_path);
  }

  const int n = static_cast<int>(data.size());
  const int batch = std::min(tcfg.batch_size, n);
  const std::vector<ParamTensor*> params = net.all_params();
  std::vector<GradSink> sinks(batch);
  for (auto& s : sinks) s.init(params);

  Adam opt(params, {.lr = tcfg.initial_lr});
  Rng rng(mix_seed(tcfg.seed, 3));
  for (int it = 0; it < tcfg.iterations; ++it) {
    std::vector<int> idx(batch);
    for (int b = 0; b < batch; ++b) idx[b] = static_cast<int>(rng.below(n));
    zero_grads(params);
    std::vector<double> losses(batch);
    std::string err;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < batch; ++b) {
      try {
        sinks[b].zero();
        losses[b] =
            net.loss_backward(data[idx[b]].stack, data[idx[b]].target, extractor, sinks[b]);
      } catch (const std::exception& e) {
#pragma omp critical
        if (err.empty()) err = e.what();
      }
    }
    if (!err.empty()) throw std::runtime_error("train_fusion: " + err);
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      loss += losses[b];
      sinks[b].reduce_into(params, 1.0 / batch);
    }
    loss /= batch;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_fusion: non-finite loss at iteration " +
                               std::to_string(it));
    }
    clip_grad_norm(params, tcfg.grad_clip);
    opt.step(cosine_lr(tcfg.initial_lr, it, tcfg.iterations));
    if (log) log << cfg.variant << " " << it << " " << loss << "\n";
  }
  return net;
}

}  // namespace srspace
