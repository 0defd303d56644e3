#include "srspace/sample_stack.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "srspace/png_io.hpp"

namespace fs = std::filesystem;

namespace srspace {

namespace {
std::string sample_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%02zu.png", i);
  return buf;
}
}  // namespace

void save_stack(const SampleStack& stack, const std::string& dir, const ImageTensor* hr) {
  if (stack.samples.size() != stack.seeds.size()) {
    throw std::invalid_argument("save_stack: seed/sample count mismatch");
  }
  fs::create_directories(dir);
  for (size_t i = 0; i < stack.samples.size(); ++i) {
    save_png((fs::path(dir) / sample_name(i)).string(), stack.samples[i]);
  }
  save_png((fs::path(dir) / "lr.png").string(), stack.lr);
  if (hr) save_png((fs::path(dir) / "hr.png").string(), *hr);

  std::ofstream f((fs::path(dir) / "stack.txt").string(), std::ios::binary);
  if (!f) throw std::runtime_error("save_stack: cannot write stack.txt in " + dir);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", stack.temperature);
  f << "# srspace sample stack v1\n";
  f << "tau " << buf << "\n";
  f << "k " << stack.samples.size() << "\n";
  for (size_t i = 0; i < stack.seeds.size(); ++i) {
    f << "seed " << i << " " << stack.seeds[i] << "\n";
  }
  if (hr) f << "hr hr.png\n";
}

LoadedStack load_stack(const std::string& dir) {
  std::ifstream f((fs::path(dir) / "stack.txt").string());
  if (!f) throw std::runtime_error("load_stack: no stack.txt in " + dir);

  LoadedStack out;
  size_t k = 0;
  bool has_hr = false;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "tau") {
      ss >> out.stack.temperature;
    } else if (key == "k") {
      ss >> k;
    } else if (key == "seed") {
      size_t idx;
      uint64_t seed;
      ss >> idx >> seed;
      out.stack.seeds.push_back(seed);
    } else if (key == "hr") {
      has_hr = true;
    }
  }
  if (k == 0 || out.stack.seeds.size() != k) {
    throw std::runtime_error("load_stack: malformed stack.txt in " + dir);
  }
  out.stack.lr = load_png((fs::path(dir) / "lr.png").string());
  for (size_t i = 0; i < k; ++i) {
    out.stack.samples.push_back(load_png((fs::path(dir) / sample_name(i)).string()));
  }
  if (has_hr) out.hr = load_png((fs::path(dir) / "hr.png").string());
  return out;
}

}  // namespace srspace
