#pragma once

#include <cstdint>
#include <vector>

#include "tvrl/core/error.hpp"
#include "tvrl/core/mat.hpp"

namespace tvrl {

/// 8-bit grayscale image, the on-disk unit of the dataset format.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // row-major

  uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
  uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }

  bool operator==(const ImageU8&) const = default;
};

inline Mat<float> to_float(const ImageU8& img) {
  Mat<float> out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out(r, c) = static_cast<float>(img.at(r, c)) / 255.0f;
  return out;
}

inline ImageU8 to_u8(const Mat<float>& img) {
  ImageU8 out;
  out.height = static_cast<int>(img.rows());
  out.width = static_cast<int>(img.cols());
  out.pixels.resize(static_cast<size_t>(out.height) * out.width);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) {
      float v = std::min(1.0f, std::max(0.0f, img(r, c)));
      out.at(r, c) = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  return out;
}

/// Bilinear sample of a square crop region back to `out_size` x `out_size`.
/// Destination pixel centers map linearly onto the crop (half-pixel
/// convention); source coordinates clamp to the crop bounds.
inline Mat<float> resize_crop_bilinear(const Mat<float>& src, int crop_x,
                                       int crop_y, int crop_size, int out_size) {
  if (crop_x < 0 || crop_y < 0 || crop_size < 1 ||
      crop_x + crop_size > src.cols() || crop_y + crop_size > src.rows())
    throw contract_error("resize_crop_bilinear: crop outside image");
  Mat<float> out(out_size, out_size);
  const double ratio = static_cast<double>(crop_size) / out_size;
  for (int r = 0; r < out_size; ++r) {
    double sy = (r + 0.5) * ratio - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(crop_size - 1));
    int y0 = static_cast<int>(sy);
    int y1 = std::min(y0 + 1, crop_size - 1);
    double fy = sy - y0;
    for (int c = 0; c < out_size; ++c) {
      double sx = (c + 0.5) * ratio - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(crop_size - 1));
      int x0 = static_cast<int>(sx);
      int x1 = std::min(x0 + 1, crop_size - 1);
      double fx = sx - x0;
      double v00 = src(crop_y + y0, crop_x + x0);
      double v01 = src(crop_y + y0, crop_x + x1);
      double v10 = src(crop_y + y1, crop_x + x0);
      double v11 = src(crop_y + y1, crop_x + x1);
      out(r, c) = static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                     fy * ((1 - fx) * v10 + fx * v11));
    }
  }
  return out;
}

inline Mat<float> hflip(const Mat<float>& src) {
  return src.rowwise().reverse();
}

/// Separable Gaussian blur, kernel radius ceil(2.5 sigma), clamp-to-edge.
inline Mat<float> gaussian_blur(const Mat<float>& src, double sigma) {
  if (sigma <= 0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  const int h = static_cast<int>(src.rows()), w = static_cast<int>(src.cols());
  Mat<float> tmp(h, w), out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        int cc = std::min(std::max(c + i, 0), w - 1);
        acc += kernel[i + radius] * src(r, cc);
      }
      tmp(r, c) = static_cast<float>(acc);
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        int rr = std::min(std::max(r + i, 0), h - 1);
        acc += kernel[i + radius] * tmp(rr, c);
      }
      out(r, c) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace tvrl
