#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "srspace/tensor.hpp"

namespace srspace {

// Ordered stack of SR samples for one LR input. Sample i was drawn with
// seeds[i] at the recorded temperature; all samples share dimensions
// lr * scale. Values are kept unclamped in memory; clamping happens when the
// stack is written as PNGs.
struct SampleStack {
  ImageTensor lr;
  std::vector<ImageTensor> samples;
  std::vector<uint64_t> seeds;
  double temperature = 0.0;

  size_t size() const { return samples.size(); }
};

// Writes sample_NN.png for each sample plus stack.txt recording tau and the
// seed list. If hr is given it is stored as hr.png (fusion training target).
void save_stack(const SampleStack& stack, const std::string& dir,
                const ImageTensor* hr = nullptr);

struct LoadedStack {
  SampleStack stack;
  std::optional<ImageTensor> hr;
};

LoadedStack load_stack(const std::string& dir);

}  // namespace srspace
