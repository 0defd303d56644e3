#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "srspace/png_io.hpp"
#include "srspace/sample_stack.hpp"
#include "test_support.hpp"

using namespace srspace;
using namespace srspace::test;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SRSPACE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

}  // namespace

TEST_CASE("cli: dataset -> flow train/sample -> ensemble -> fusion -> metrics") {
  TempDir dir("cli");
  const std::string hr_dir = dir.file("hr_src");
  fs::create_directories(hr_dir);
  for (int i = 0; i < 2; ++i) {
    save_png((fs::path(hr_dir) / ("img" + std::to_string(i) + ".png")).string(),
             make_toy_image(900 + i, 32, 32));
  }

  REQUIRE(run("dataset build --hr-dir " + hr_dir + " --scale 4 --patch 16 --seed 5 --count 2" +
              " --out " + dir.file("ds")) == 0);
  REQUIRE(fs::exists(dir.file("ds/manifest.txt")));

  REQUIRE(run("flow train --manifest " + dir.file("ds/manifest.txt") +
              " --out " + dir.file("flow.ckpt") +
              " --iters 2 --encoder-iters 2 --steps 1 --hidden 8 --seed 1") == 0);
  REQUIRE(fs::exists(dir.file("flow.ckpt")));
  CHECK(fs::exists(dir.file("flow.ckpt.loss.txt")));

  const std::string lr0 = dir.file("ds/lr/img0_p00.png");
  const std::string hr0 = dir.file("ds/hr/img0_p00.png");
  REQUIRE(run("flow sample --ckpt " + dir.file("flow.ckpt") + " --lr-image " + lr0 +
              " --hr-image " + hr0 + " --tau 0.9 --seeds 0..3 --out " + dir.file("stack0")) ==
          0);
  const LoadedStack ls = load_stack(dir.file("stack0"));
  CHECK(ls.stack.size() == 4);
  CHECK(ls.stack.temperature == doctest::Approx(0.9));
  CHECK(ls.hr.has_value());

  REQUIRE(run("ensemble --stack " + dir.file("stack0") +
              " --method average --k 2 --out " + dir.file("avg.png")) == 0);
  CHECK(load_png(dir.file("avg.png")).height() == 16);
  REQUIRE(run("ensemble --stack " + dir.file("stack0") +
              " --method median --k 3 --out " + dir.file("med.png")) == 0);

  // Fusion training needs a directory of stacks with HR targets.
  fs::create_directories(dir.file("stacks"));
  fs::rename(dir.file("stack0"), dir.file("stacks/s0"));
  REQUIRE(run("flow sample --ckpt " + dir.file("flow.ckpt") + " --lr-image " +
              dir.file("ds/lr/img1_p00.png") + " --hr-image " + dir.file("ds/hr/img1_p00.png") +
              " --tau 0.9 --seeds 0..3 --out " + dir.file("stacks/s1")) == 0);
  REQUIRE(run("fusion train --stacks " + dir.file("stacks") +
              " --loss l1 --iters 2 --k-in 3 --ckpt " + dir.file("fusion.ckpt")) == 0);
  REQUIRE(run("fusion apply --ckpt " + dir.file("fusion.ckpt") + " --stack " +
              dir.file("stacks/s0") + " --out " + dir.file("fused.png")) == 0);
  CHECK(load_png(dir.file("fused.png")).height() == 16);

  REQUIRE(run("metrics eval --pred " + dir.file("fused.png") + " --ref " + hr0 + " --out " +
              dir.file("metrics.csv")) == 0);
  std::ifstream f(dir.file("metrics.csv"));
  std::string header;
  std::getline(f, header);
  CHECK(header == "image_id,psnr_db,ssim,lpips,extractor_provenance");
}

TEST_CASE("cli: bad arguments produce nonzero exit codes") {
  TempDir dir("clibad");
  CHECK(run("ensemble --stack " + dir.file("nope") + " --method average --k 1 --out " +
            dir.file("x.png")) != 0);
  CHECK(run("dataset build --hr-dir " + dir.file("empty") + " --out " + dir.file("o")) != 0);
}
