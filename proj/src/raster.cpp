#include "recon/raster.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "recon/errors.hpp"

namespace recon {

BinaryImage BinaryImage::black(int width, int height) {
  if (width <= 0 || height <= 0) throw ConfigError("image dimensions must be positive");
  BinaryImage img;
  img.width = width;
  img.height = height;
  img.bits.assign(static_cast<std::size_t>(width) * height, 0);
  return img;
}

std::size_t BinaryImage::count_white() const {
  std::size_t n = 0;
  for (std::uint8_t b : bits) n += b;
  return n;
}

RasterResult rasterize_curve(const CameraRig& rig, const CurveSamples& samples, int width,
                             int height) {
  if (rig.cameras.empty()) throw ConfigError("rasterize_curve: empty camera rig");
  if (samples.points.empty()) throw ConfigError("rasterize_curve: no samples");
  RasterResult result;
  result.images.reserve(rig.cameras.size());
  result.skipped.assign(rig.cameras.size(), 0);
  for (std::size_t v = 0; v < rig.cameras.size(); ++v) {
    BinaryImage img = BinaryImage::black(width, height);
    int skipped = 0;
    for (const Eigen::Vector3d& point : samples.points) {
      const Projection proj = project_checked(rig.cameras[v], point);
      if (proj.behind) {
        ++skipped;
        continue;
      }
      // round half away from zero
      const int u = static_cast<int>(std::round(proj.pixel.x()));
      const int pv = static_cast<int>(std::round(proj.pixel.y()));
      if (!img.in_bounds(u, pv)) {
        ++skipped;
        continue;
      }
      img.set(u, pv, true);
    }
    if (img.count_white() == 0) {
      throw NumericError("rasterize_curve: all points out of frame in view " + std::to_string(v));
    }
    result.skipped[v] = skipped;
    result.images.push_back(std::move(img));
  }
  return result;
}

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  if (radius < 0) throw ConfigError("disk radius must be non-negative");
  std::vector<std::pair<int, int>> offsets;
  const int r2 = radius * radius;
  for (int b = -radius; b <= radius; ++b) {
    for (int a = -radius; a <= radius; ++a) {
      if (a * a + b * b <= r2) offsets.emplace_back(a, b);
    }
  }
  return offsets;
}

BinaryImage dilate(const BinaryImage& img, int radius) {
  if (radius == 0) return img;
  const auto offsets = disk_offsets(radius);
  BinaryImage out = BinaryImage::black(img.width, img.height);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (!img.at(u, v)) continue;
      for (const auto& [a, b] : offsets) {
        const int uu = u + a;
        const int vv = v + b;
        if (out.in_bounds(uu, vv)) out.set(uu, vv, true);
      }
    }
  }
  return out;
}

BinaryImage erode(const BinaryImage& img, int radius) {
  if (radius == 0) return img;
  const auto offsets = disk_offsets(radius);
  BinaryImage out = BinaryImage::black(img.width, img.height);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (!img.at(u, v)) continue;
      bool keep = true;
      for (const auto& [a, b] : offsets) {
        const int uu = u + a;
        const int vv = v + b;
        if (!img.in_bounds(uu, vv) || !img.at(uu, vv)) {
          keep = false;
          break;
        }
      }
      if (keep) out.set(u, v, true);
    }
  }
  return out;
}

PixelSet extract_pixels(const BinaryImage& img, int view) {
  PixelSet set;
  set.view = view;
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (img.at(u, v)) set.coords.emplace_back(static_cast<double>(u), static_cast<double>(v));
    }
  }
  if (set.coords.empty()) throw NumericError("extract_pixels: image is all black");
  return set;
}

BinaryImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open PGM: " + path);

  auto next_token = [&in, &path]() {
    std::string tok;
    while (true) {
      const int c = in.get();
      if (c == EOF) throw IoError("truncated PGM header: " + path);
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
  };

  if (next_token() != "P5") throw IoError("not a binary PGM (P5): " + path);
  const int width = std::stoi(next_token());
  const int height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (width <= 0 || height <= 0) throw IoError("bad PGM dimensions: " + path);
  if (maxval <= 0 || maxval > 255) throw IoError("unsupported PGM maxval: " + path);

  BinaryImage img = BinaryImage::black(width, height);
  std::vector<char> row(static_cast<std::size_t>(width));
  for (int v = 0; v < height; ++v) {
    in.read(row.data(), width);
    if (in.gcount() != width) throw IoError("truncated PGM data: " + path);
    for (int u = 0; u < width; ++u) {
      img.set(u, v, static_cast<unsigned char>(row[u]) >= 128);
    }
  }
  return img;
}

void write_pgm(const BinaryImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<char> row(static_cast<std::size_t>(img.width));
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) row[u] = img.at(u, v) ? static_cast<char>(255) : 0;
    out.write(row.data(), img.width);
  }
  out.flush();
  if (!out) throw IoError("write failure: " + path);
}

}  // namespace recon
