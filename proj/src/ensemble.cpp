#include "srspace/ensemble.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace srspace {

namespace {

void check_k(const SampleStack& stack, int k) {
  if (k < 1 || k > static_cast<int>(stack.samples.size())) {
    throw std::invalid_argument("ensemble: k out of range");
  }
  for (int i = 1; i < k; ++i) {
    if (!stack.samples[i].same_shape(stack.samples[0])) {
      throw std::invalid_argument("ensemble: samples differ in shape");
    }
  }
}

}  // namespace

ImageTensor ensemble_average(const SampleStack& stack, int k) {
  check_k(stack, k);
  ImageTensor out = stack.samples[0];
  for (int i = 1; i < k; ++i) out += stack.samples[i];
  out *= 1.0 / k;
  return out;
}

ImageTensor ensemble_median(const SampleStack& stack, int k) {
  check_k(stack, k);
  const ImageTensor& first = stack.samples[0];
  ImageTensor out(first.channels(), first.height(), first.width());
  std::vector<double> vals(k);
  for (size_t i = 0; i < out.size(); ++i) {
    for (int j = 0; j < k; ++j) vals[j] = stack.samples[j][i];
    const int mid = k / 2;
    std::nth_element(vals.begin(), vals.begin() + mid, vals.begin() + k);
    if (k % 2 == 1) {
      out[i] = vals[mid];
    } else {
      const double hi = vals[mid];
      const double lo = *std::max_element(vals.begin(), vals.begin() + mid);
      out[i] = 0.5 * (lo + hi);
    }
  }
  return out;
}

}  // namespace srspace
