#pragma once

#include <array>
#include <string>
#include <vector>

#include "srspace/tensor.hpp"

namespace srspace {

// Minimal raster plotting, enough for the trade-off scatter: axes with tick
// labels (built-in 5x7 font, rendered uppercase), markers with optional
// horizontal error bars, polyline paths with arrowheads, and a legend.
struct PlotPoint {
  std::string label;
  double x = 0.0;
  double y = 0.0;
  double x_band = 0.0;  // half-width of the horizontal error bar (0 = none)
};

struct PlotPath {
  std::vector<int> point_indices;  // into the point list, in draw order
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotPoint> points;
  std::vector<PlotPath> paths;
  int width = 760;
  int height = 560;
};

// Renders the spec into an RGB image tensor ([0,1] values).
ImageTensor render_plot(const PlotSpec& spec);

// Low-level text helper, exposed for reuse: draws `text` with its top-left
// corner at (x, y), pixel scale `scale`, color rgb.
void draw_text(ImageTensor& img, int x, int y, const std::string& text,
               const std::array<double, 3>& rgb, int scale = 1);

}  // namespace srspace
