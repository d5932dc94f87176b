#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recon/camera.hpp"
#include "recon/curve.hpp"

namespace recon {

// Binary raster, row-major, true = white = robot.
struct BinaryImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  static BinaryImage black(int width, int height);

  bool in_bounds(int u, int v) const { return u >= 0 && u < width && v >= 0 && v < height; }
  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool white) {
    bits[static_cast<std::size_t>(v) * width + u] = white ? 1 : 0;
  }
  std::size_t count_white() const;
};

// White pixel coordinates of one view, row-major extraction order.
struct PixelSet {
  int view = 0;
  std::vector<Eigen::Vector2d> coords;
};

struct RasterResult {
  std::vector<BinaryImage> images;
  std::vector<int> skipped;  // out-of-frame projections per view
};

// Projects curve samples into every view and sets the rounded pixels white.
// Rounding is half away from zero. Throws if a view ends up all black.
RasterResult rasterize_curve(const CameraRig& rig, const CurveSamples& samples, int width,
                             int height);

// Integer offsets of the closed Euclidean disk a^2 + b^2 <= r^2.
std::vector<std::pair<int, int>> disk_offsets(int radius);

BinaryImage dilate(const BinaryImage& img, int radius);
BinaryImage erode(const BinaryImage& img, int radius);

// All white pixels in deterministic row-major order; all-black input is an error.
PixelSet extract_pixels(const BinaryImage& img, int view = 0);

// Binary PGM (P5, maxval 255). Reader treats values >= 128 as white.
BinaryImage read_pgm(const std::string& path);
void write_pgm(const BinaryImage& img, const std::string& path);

}  // namespace recon
