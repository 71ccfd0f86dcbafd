#pragma once

#include <vector>

#include "tvrl/io/png.hpp"

namespace tvrl::viz {

/// Minimal RGB raster canvas for the trajectory plots.
struct Canvas {
  int width, height;
  std::vector<uint8_t> rgb;

  Canvas(int w, int h, uint8_t r = 255, uint8_t g = 255, uint8_t b = 255)
      : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3) {
    for (int i = 0; i < w * h; ++i) set_index(i, r, g, b);
  }

  void set_index(int idx, uint8_t r, uint8_t g, uint8_t b) {
    rgb[3 * static_cast<size_t>(idx)] = r;
    rgb[3 * static_cast<size_t>(idx) + 1] = g;
    rgb[3 * static_cast<size_t>(idx) + 2] = b;
  }

  void put(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    set_index(y * width + x, r, g, b);
  }

  void disc(int cx, int cy, int radius, uint8_t r, uint8_t g, uint8_t b) {
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx)
        if (dx * dx + dy * dy <= radius * radius) put(cx + dx, cy + dy, r, g, b);
  }

  void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      put(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
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

  void save(const std::string& path) const {
    io::write_png_rgb8(path, width, height, rgb);
  }
};

/// Scatter-with-path plot of 2D points ordered in time; early points blue,
/// late points red, connected by a gray polyline.
inline void render_trajectory_plot(const std::string& path,
                                   const std::vector<std::pair<double, double>>& pts,
                                   int size = 512) {
  Canvas canvas(size, size);
  const int margin = 40;
  canvas.line(margin, margin, size - margin, margin, 0, 0, 0);
  canvas.line(margin, margin, margin, size - margin, 0, 0, 0);
  canvas.line(size - margin, margin, size - margin, size - margin, 0, 0, 0);
  canvas.line(margin, size - margin, size - margin, size - margin, 0, 0, 0);
  if (pts.empty()) {
    canvas.save(path);
    return;
  }
  double xmin = pts[0].first, xmax = pts[0].first;
  double ymin = pts[0].second, ymax = pts[0].second;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.first);
    xmax = std::max(xmax, p.first);
    ymin = std::min(ymin, p.second);
    ymax = std::max(ymax, p.second);
  }
  double xr = std::max(xmax - xmin, 1e-12), yr = std::max(ymax - ymin, 1e-12);
  auto px = [&](const std::pair<double, double>& p) {
    int x = margin + static_cast<int>((p.first - xmin) / xr * (size - 2 * margin));
    int y = size - margin -
            static_cast<int>((p.second - ymin) / yr * (size - 2 * margin));
    return std::make_pair(x, y);
  };
  for (size_t i = 1; i < pts.size(); ++i) {
    auto [x0, y0] = px(pts[i - 1]);
    auto [x1, y1] = px(pts[i]);
    canvas.line(x0, y0, x1, y1, 150, 150, 150);
  }
  for (size_t i = 0; i < pts.size(); ++i) {
    double f = pts.size() > 1 ? static_cast<double>(i) / (pts.size() - 1) : 0.0;
    auto [x, y] = px(pts[i]);
    canvas.disc(x, y, 4, static_cast<uint8_t>(40 + 200 * f), 60,
                static_cast<uint8_t>(240 - 200 * f));
  }
  canvas.save(path);
}

}  // namespace tvrl::viz
