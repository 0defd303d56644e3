#include <doctest.h>

#include <cmath>

#include "srspace/ensemble.hpp"
#include "srspace/fusion.hpp"
#include "test_support.hpp"

using namespace srspace;
using namespace srspace::test;

namespace {

SampleStack make_stack(uint64_t seed, int k, int c = 3, int h = 8, int w = 8) {
  Rng rng(seed);
  SampleStack st;
  st.lr = random_image(rng, c, std::max(1, h / 4), std::max(1, w / 4));
  st.temperature = 0.9;
  for (int i = 0; i < k; ++i) {
    st.samples.push_back(random_image(rng, c, h, w));
    st.seeds.push_back(i);
  }
  return st;
}

FusionConfig small_cfg(const std::string& variant = "l1") {
  FusionConfig c;
  c.k_in = 4;
  c.width = 8;
  c.blocks = 2;
  c.variant = variant;
  return c;
}

}  // namespace

TEST_CASE("l1_loss examples and brute-force oracle") {
  const ImageTensor a = make_toy_image(1, 8, 8);
  CHECK(l1_loss(a, a) == 0.0);

  ImageTensor b = a;
  for (size_t i = 0; i < b.size(); ++i) b[i] += 0.1;
  CHECK(l1_loss(a, b) == doctest::Approx(0.1).epsilon(1e-12));

  Rng rng(2);
  const ImageTensor p = random_image(rng, 3, 6, 6);
  const ImageTensor q = random_image(rng, 3, 6, 6);
  double want = 0.0;
  for (size_t i = 0; i < p.size(); ++i) want += std::fabs(p[i] - q[i]);
  want /= p.size();
  CHECK(std::fabs(l1_loss(p, q) - want) < 1e-7);

  CHECK_THROWS_AS(l1_loss(p, ImageTensor(3, 4, 4)), std::invalid_argument);
}

TEST_CASE("zero-initialized fusion equals the average ensemble exactly") {
  const FusionNet net(small_cfg(), 11);
  const SampleStack st = make_stack(5, 6);
  const Tensor fused = net.fuse(st);
  const Tensor avg = ensemble_average(st, 4);
  CHECK(max_abs_diff(fused, avg) < 1e-12);
  CHECK(fused.height() == 8);
  CHECK(fused.channels() == 3);

  // Determinism and stack-size validation.
  CHECK(max_abs_diff(net.fuse(st), fused) == 0.0);
  CHECK_THROWS_AS(net.fuse(make_stack(6, 3)), std::invalid_argument);  // < k_in samples
}

TEST_CASE("fusion respects the 10-sample default and shape contract") {
  FusionConfig cfg;  // defaults: k_in 10, width 64, 2 blocks
  CHECK(cfg.k_in == 10);
  const FusionNet net(cfg, 3);
  const SampleStack st = make_stack(9, 10, 3, 32, 32);
  const Tensor out = net.fuse(st);
  CHECK(out.channels() == 3);
  CHECK(out.height() == 32);
  CHECK(out.width() == 32);
  CHECK(max_abs_diff(out, ensemble_average(st, 10)) < 1e-12);
}

TEST_CASE("train_fusion: zero iterations returns the zero-init net") {
  std::vector<FusionPair> data;
  for (int i = 0; i < 3; ++i) {
    data.push_back({make_stack(20 + i, 4), make_toy_image(30 + i, 8, 8)});
  }
  FusionTrainConfig tcfg;
  tcfg.iterations = 0;
  tcfg.seed = 4;
  FusionNet net = train_fusion(data, small_cfg(), tcfg);
  CHECK(max_abs_diff(net.fuse(data[0].stack), ensemble_average(data[0].stack, 4)) < 1e-12);
}

TEST_CASE("train_fusion: L1 training reduces the dataset loss") {
  std::vector<FusionPair> data;
  for (int i = 0; i < 6; ++i) {
    SampleStack st = make_stack(40 + i, 4);
    // Targets correlated with the stack mean so there is something to learn.
    ImageTensor target = ensemble_average(st, 4);
    Rng rng(50 + i);
    for (size_t j = 0; j < target.size(); ++j) target[j] = 0.8 * target[j] + 0.1;
    data.push_back({std::move(st), std::move(target)});
  }
  auto mean_l1 = [&](const FusionNet& net) {
    double s = 0.0;
    for (const auto& p : data) s += l1_loss(net.fuse(p.stack), p.target);
    return s / data.size();
  };
  FusionTrainConfig tcfg;
  tcfg.iterations = 0;
  tcfg.seed = 8;
  const FusionNet before = train_fusion(data, small_cfg(), tcfg);
  tcfg.iterations = 60;
  tcfg.batch_size = 3;
  const FusionNet after = train_fusion(data, small_cfg(), tcfg);
  CHECK(mean_l1(after) < mean_l1(before));

  // Determinism.
  const FusionNet again = train_fusion(data, small_cfg(), tcfg);
  CHECK(max_abs_diff(again.fuse(data[0].stack), after.fuse(data[0].stack)) == 0.0);
}

TEST_CASE("fusion gradients (L1 and LPIPS losses) match finite differences") {
  const SampleStack st = make_stack(60, 4, 3, 6, 6);
  Rng trng(61);
  ImageTensor target = random_image(trng, 3, 6, 6);

  const auto extractor = PerceptualExtractor::random_fixed(17);

  for (const std::string variant : {"l1", "lpips"}) {
    FusionNet net(small_cfg(variant), 9);
    // Perturb away from the zero init so gradients are generic; for L1 this
    // also moves predictions off the |.| kinks.
    auto params = net.all_params();
    Rng prng(62);
    for (auto* p : params)
      for (double& v : p->value) v += 0.02 * prng.normal();

    GradSink gs;
    gs.init(params);
    const PerceptualExtractor* ex = variant == "lpips" ? &extractor : nullptr;
    const double base = net.loss_backward(st, target, ex, gs);
    CHECK(base > 0.0);

    auto loss_value = [&]() {
      const Tensor pred = net.fuse(st);
      return variant == "lpips" ? extractor.lpips(pred, target) : l1_loss(pred, target);
    };
    CHECK(base == doctest::Approx(loss_value()));

    const double h = 1e-6;
    int checked = 0;
    for (auto* p : params) {
      const size_t stride = std::max<size_t>(1, p->value.size() / 3);
      for (size_t i = 0; i < p->value.size() && checked < 30; i += stride) {
        const double orig = p->value[i];
        p->value[i] = orig + h;
        const double up = loss_value();
        p->value[i] = orig - h;
        const double dn = loss_value();
        p->value[i] = orig;
        CHECK(rel_err(gs.of(*p)[i], (up - dn) / (2 * h), 1e-7) < 1e-3);
        ++checked;
      }
    }
    CHECK(checked >= 20);
  }
}

TEST_CASE("train_fusion: lpips variant requires an extractor") {
  std::vector<FusionPair> data = {{make_stack(70, 4), make_toy_image(71, 8, 8)}};
  FusionTrainConfig tcfg;
  tcfg.iterations = 1;
  CHECK_THROWS_AS(train_fusion(data, small_cfg("lpips"), tcfg, nullptr),
                  std::invalid_argument);
}

TEST_CASE("fusion checkpoint round trip") {
  TempDir dir("fusion");
  FusionNet net(small_cfg("lpips"), 15);
  auto params = net.all_params();
  Rng rng(16);
  for (auto* p : params)
    for (double& v : p->value) v = 0.1 * rng.normal();
  const std::string path = dir.file("fusion.ckpt");
  net.save(path, "random-fixed(seed=17)", 17);

  auto loaded = FusionNet::load(path);
  CHECK(loaded.extractor_seed == 17);
  CHECK(loaded.extractor_provenance == "random-fixed(seed=17)");
  CHECK(loaded.net.config().variant == "lpips");
  const SampleStack st = make_stack(80, 4);
  CHECK(max_abs_diff(loaded.net.fuse(st), net.fuse(st)) == 0.0);
}
