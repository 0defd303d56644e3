#pragma once

#include "srspace/sample_stack.hpp"
#include "srspace/tensor.hpp"

namespace srspace {

// Per-pixel, per-channel arithmetic mean of the first k samples.
// Throws if k is out of [1, stack size].
ImageTensor ensemble_average(const SampleStack& stack, int k);

// Per-pixel, per-channel scalar median of the first k samples; for even k,
// the mean of the two middle order statistics.
ImageTensor ensemble_median(const SampleStack& stack, int k);

}  // namespace srspace
