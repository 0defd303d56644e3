#include "srspace/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace srspace {

namespace {

// 5x7 glyphs, 35 chars per glyph, row-major, '#' = on.
const std::map<char, const char*>& font() {
  static const std::map<char, const char*> f = {
      {'0', " ### #   ##  ### # ###  ##   # ### "},
      {'1', "  #   ##    #    #    #    #   ### "},
      {'2', " ### #   #    #   #   #   #   #####"},
      {'3', " ### #   #    #  ##     ##   # ### "},
      {'4', "   #   ##  # # #  # #####   #    # "},
      {'5', "######    ####     #    ##   # ### "},
      {'6', "  ##  #   #    #### #   ##   # ### "},
      {'7', "#####    #   #   #    #    #    #  "},
      {'8', " ### #   ##   # ### #   ##   # ### "},
      {'9', " ### #   ##   # ####    #   #  ##  "},
      {'.', "                          ##   ##  "},
      {',', "                     ##    #   #   "},
      {'-', "                ###                "},
      {'+', "       #    #  #####  #    #       "},
      {'(', "   #   #   #    #    #     #     # "},
      {')', " #     #     #    #    #   #   #   "},
      {'=', "          #####     #####          "},
      {':', "      ##   ##        ##   ##       "},
      {'_', "                              #####"},
      {'/', "    #    #   #   #   #   #    #    "},
      {' ', "                                   "},
      {'A', " ### #   ##   #######   ##   ##   #"},
      {'B', "#### #   ##   ##### #   ##   ##### "},
      {'C', " ### #   ##    #    #    #   # ### "},
      {'D', "#### #   ##   ##   ##   ##   ##### "},
      {'E', "######    #    #### #    #    #####"},
      {'F', "######    #    #### #    #    #    "},
      {'G', " ### #   ##    # ####   ##   # ### "},
      {'H', "#   ##   ##   #######   ##   ##   #"},
      {'I', " ###   #    #    #    #    #   ### "},
      {'J', "  ###   #    #    #    # #  #  ##  "},
      {'K', "#   ##  # # #  ##   # #  #  # #   #"},
      {'L', "#    #    #    #    #    #    #####"},
      {'M', "#   ### ### # ## # ##   ##   ##   #"},
      {'N', "#   ###  ## # ##  ###   ##   ##   #"},
      {'O', " ### #   ##   ##   ##   ##   # ### "},
      {'P', "#### #   ##   ##### #    #    #    "},
      {'Q', " ### #   ##   ##   ## # ##  #  ## #"},
      {'R', "#### #   ##   ##### # #  #  # #   #"},
      {'S', " #####    #     ###     #    ##### "},
      {'T', "#####  #    #    #    #    #    #  "},
      {'U', "#   ##   ##   ##   ##   ##   # ### "},
      {'V', "#   ##   ##   ##   ##   # # #   #  "},
      {'W', "#   ##   ##   ## # ## # ## # # # # "},
      {'X', "#   ##   # # #   #   # # #   ##   #"},
      {'Y', "#   ##   # # #   #    #    #    #  "},
      {'Z', "#####    #   #   #   #   #    #####"},
  };
  return f;
}

void set_px(ImageTensor& img, int x, int y, const std::array<double, 3>& rgb) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
}

void draw_line(ImageTensor& img, int x0, int y0, int x1, int y1,
               const std::array<double, 3>& rgb) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set_px(img, x0, y0, rgb);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void fill_disc(ImageTensor& img, int cx, int cy, int r, const std::array<double, 3>& rgb) {
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x)
      if (x * x + y * y <= r * r) set_px(img, cx + x, cy + y, rgb);
}

void draw_arrowhead(ImageTensor& img, int x0, int y0, int x1, int y1,
                    const std::array<double, 3>& rgb) {
  const double ang = std::atan2(static_cast<double>(y1 - y0), static_cast<double>(x1 - x0));
  for (double da : {2.6, -2.6}) {
    const int ex = x1 + static_cast<int>(std::lround(8.0 * std::cos(ang + da)));
    const int ey = y1 + static_cast<int>(std::lround(8.0 * std::sin(ang + da)));
    draw_line(img, x1, y1, ex, ey, rgb);
  }
}

const std::array<double, 3> kPalette[] = {
    {0.85, 0.10, 0.10}, {0.10, 0.35, 0.85}, {0.10, 0.60, 0.20}, {0.80, 0.45, 0.05},
    {0.55, 0.10, 0.65}, {0.05, 0.60, 0.60}, {0.70, 0.15, 0.45}, {0.35, 0.35, 0.35},
    {0.60, 0.50, 0.10}, {0.10, 0.10, 0.55}, {0.45, 0.25, 0.05}, {0.00, 0.00, 0.00},
};

std::string fmt(double v, const char* f) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

void draw_text(ImageTensor& img, int x, int y, const std::string& text,
               const std::array<double, 3>& rgb, int scale) {
  const auto& f = font();
  int cx = x;
  for (char raw : text) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    auto it = f.find(ch);
    if (it != f.end()) {
      const char* g = it->second;
      for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 5; ++c) {
          const size_t i = static_cast<size_t>(r) * 5 + c;
          if (i < 35 && g[i] == '#') {
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx)
                set_px(img, cx + c * scale + sx, y + r * scale + sy, rgb);
          }
        }
      }
    }
    cx += 6 * scale;
  }
}

ImageTensor render_plot(const PlotSpec& spec) {
  const int W = spec.width, H = spec.height;
  ImageTensor img(3, H, W);
  img.fill(1.0);

  const std::array<double, 3> black = {0, 0, 0};
  const std::array<double, 3> gray = {0.55, 0.55, 0.55};

  const int ml = 86, mr = 200, mt = 34, mb = 56;
  const int x0 = ml, x1 = W - mr, y0 = H - mb, y1 = mt;  // y grows downward

  // Data ranges with 8% padding.
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : spec.points) {
    xmin = std::min(xmin, p.x - p.x_band);
    xmax = std::max(xmax, p.x + p.x_band);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (spec.points.empty()) xmin = ymin = 0, xmax = ymax = 1;
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double xpad = 0.08 * (xmax - xmin), ypad = 0.08 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double v) {
    return x0 + static_cast<int>(std::lround((v - xmin) / (xmax - xmin) * (x1 - x0)));
  };
  auto py = [&](double v) {
    return y0 - static_cast<int>(std::lround((v - ymin) / (ymax - ymin) * (y0 - y1)));
  };

  // Axes and ticks.
  draw_line(img, x0, y0, x1, y0, black);
  draw_line(img, x0, y0, x0, y1, black);
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    draw_line(img, px(xv), y0, px(xv), y0 + 4, black);
    draw_text(img, px(xv) - 15, y0 + 8, fmt(xv, "%.1f"), black);
    draw_line(img, x0 - 4, py(yv), x0, py(yv), black);
    draw_text(img, x0 - 52, py(yv) - 3, fmt(yv, "%.3f"), black);
  }
  draw_text(img, (x0 + x1) / 2 - 3 * static_cast<int>(spec.x_label.size()), H - 18,
            spec.x_label, black);
  draw_text(img, 8, y1 - 12, spec.y_label, black);
  if (!spec.title.empty()) {
    draw_text(img, (x0 + x1) / 2 - 3 * static_cast<int>(spec.title.size()), 10, spec.title,
              black);
  }

  // Paths underneath the markers.
  for (const auto& path : spec.paths) {
    for (size_t i = 1; i < path.point_indices.size(); ++i) {
      const auto& a = spec.points[path.point_indices[i - 1]];
      const auto& b = spec.points[path.point_indices[i]];
      draw_line(img, px(a.x), py(a.y), px(b.x), py(b.y), gray);
      draw_arrowhead(img, px(a.x), py(a.y), px(b.x), py(b.y), gray);
    }
  }

  // Markers, error bars, legend.
  const int npal = static_cast<int>(std::size(kPalette));
  for (size_t i = 0; i < spec.points.size(); ++i) {
    const auto& p = spec.points[i];
    const auto& col = kPalette[i % npal];
    if (p.x_band > 0.0) {
      const int yb = py(p.y);
      draw_line(img, px(p.x - p.x_band), yb, px(p.x + p.x_band), yb, col);
      draw_line(img, px(p.x - p.x_band), yb - 3, px(p.x - p.x_band), yb + 3, col);
      draw_line(img, px(p.x + p.x_band), yb - 3, px(p.x + p.x_band), yb + 3, col);
    }
    fill_disc(img, px(p.x), py(p.y), 4, col);
    const int ly = mt + 14 * static_cast<int>(i);
    fill_disc(img, x1 + 14, ly + 3, 4, col);
    draw_text(img, x1 + 24, ly, p.label, black);
  }
  return img;
}

}  // namespace srspace
