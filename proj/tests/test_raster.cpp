#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "recon/errors.hpp"
#include "recon/raster.hpp"

using namespace recon;

namespace {

// independent disk-count oracle
int disk_count(int radius) {
  int n = 0;
  for (int a = -radius; a <= radius; ++a) {
    for (int b = -radius; b <= radius; ++b) {
      if (a * a + b * b <= radius * radius) ++n;
    }
  }
  return n;
}

CameraRig identity_rig(int width, int height) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  CameraRig rig;
  rig.cameras.push_back(cam);
  return rig;
}

CurveSamples single_point(double x, double y) {
  CurveSamples s;
  s.arc_lengths = {0.0};
  s.points = {Eigen::Vector3d(x, y, 1.0)};
  return s;
}

}  // namespace

TEST_CASE("rasterize: round half away from zero") {
  const CameraRig rig = identity_rig(2448, 2048);
  const RasterResult result = rasterize_curve(rig, single_point(100.4, 200.6), 2448, 2048);
  CHECK(result.images[0].count_white() == 1);
  CHECK(result.images[0].at(100, 201));
  CHECK(result.skipped[0] == 0);

  // halfway cases round away from zero
  const RasterResult half = rasterize_curve(rig, single_point(10.5, 20.5), 2448, 2048);
  CHECK(half.images[0].at(11, 21));
}

TEST_CASE("rasterize: straight line gives a 1-px-wide column") {
  const CameraRig rig = identity_rig(640, 480);
  CurveSamples s;
  for (int i = 0; i <= 400; ++i) {
    s.arc_lengths.push_back(i);
    s.points.emplace_back(50.0, 20.0 + 0.5 * i, 1.0);  // u fixed, v sweeps
  }
  const RasterResult result = rasterize_curve(rig, s, 640, 480);
  const BinaryImage& img = result.images[0];
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (img.at(u, v)) CHECK(u == 50);
    }
  }
  CHECK(img.count_white() == 201);  // rows 20..220
}

TEST_CASE("rasterize: out-of-frame handling") {
  const CameraRig rig = identity_rig(640, 480);
  CurveSamples s;
  s.arc_lengths = {0.0, 1.0};
  s.points = {Eigen::Vector3d(-3.0, 10.0, 1.0), Eigen::Vector3d(5.0, 10.0, 1.0)};
  const RasterResult result = rasterize_curve(rig, s, 640, 480);
  CHECK(result.skipped[0] == 1);
  CHECK(result.images[0].count_white() == 1);

  CurveSamples gone;
  gone.arc_lengths = {0.0};
  gone.points = {Eigen::Vector3d(-3.0, 10.0, 1.0)};
  CHECK_THROWS_AS(rasterize_curve(rig, gone, 640, 480), NumericError);
}

TEST_CASE("dilate: disk cardinality oracle") {
  CHECK(static_cast<int>(disk_offsets(15).size()) == disk_count(15));
  CHECK(disk_count(15) == 709);  // frozen enumeration result

  BinaryImage img = BinaryImage::black(101, 101);
  img.set(50, 50, true);
  const BinaryImage grown = dilate(img, 15);
  CHECK(grown.count_white() == 709);

  // all pixels within radius, none outside
  for (int v = 0; v < 101; ++v) {
    for (int u = 0; u < 101; ++u) {
      const int du = u - 50;
      const int dv = v - 50;
      CHECK(grown.at(u, v) == (du * du + dv * dv <= 225));
    }
  }
}

TEST_CASE("dilate: radius zero is the identity") {
  BinaryImage img = BinaryImage::black(32, 32);
  img.set(3, 4, true);
  img.set(20, 11, true);
  const BinaryImage out = dilate(img, 0);
  CHECK(out.bits == img.bits);
}

TEST_CASE("dilate: two distant pixels give disjoint disks") {
  BinaryImage img = BinaryImage::black(201, 101);
  img.set(50, 50, true);
  img.set(90, 50, true);  // 40 px apart, radius 15 disks cannot touch
  const BinaryImage grown = dilate(img, 15);
  CHECK(grown.count_white() == 1418);
}

TEST_CASE("dilate: monotonicity properties") {
  BinaryImage img = BinaryImage::black(101, 101);
  img.set(30, 40, true);
  img.set(60, 52, true);
  img.set(33, 41, true);
  const BinaryImage a = dilate(img, 4);
  // input is contained in the dilation
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (img.at(u, v)) CHECK(a.at(u, v));
    }
  }
  // iterated dilation covers the single larger dilation
  const BinaryImage ab = dilate(dilate(img, 4), 3);
  const BinaryImage m = dilate(img, 4);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (m.at(u, v)) CHECK(ab.at(u, v));
    }
  }
}

TEST_CASE("erode inverts dilate on blobs away from the border") {
  BinaryImage img = BinaryImage::black(101, 101);
  img.set(50, 50, true);
  img.set(51, 50, true);
  const BinaryImage opened = erode(dilate(img, 10), 10);
  // opening of a dilated set recovers at least the original pixels
  CHECK(opened.at(50, 50));
  CHECK(opened.at(51, 50));
}

TEST_CASE("extract_pixels: row-major order and dilate consistency") {
  BinaryImage img = BinaryImage::black(101, 101);
  img.set(50, 50, true);
  const PixelSet set = extract_pixels(dilate(img, 15), 3);
  CHECK(set.view == 3);
  CHECK(set.coords.size() == 709);
  for (std::size_t i = 1; i < set.coords.size(); ++i) {
    const auto& prev = set.coords[i - 1];
    const auto& cur = set.coords[i];
    CHECK((cur.y() > prev.y() || (cur.y() == prev.y() && cur.x() > prev.x())));
  }
  CHECK_THROWS_AS(extract_pixels(BinaryImage::black(8, 8)), NumericError);
}

TEST_CASE("extract after rasterize returns the rounded projection set") {
  const CameraRig rig = identity_rig(640, 480);
  CurveSamples s;
  std::set<std::pair<int, int>> expected;
  for (int i = 0; i < 300; ++i) {
    const double x = 100.0 + 0.7 * i;
    const double y = 50.0 + 0.31 * i;
    s.arc_lengths.push_back(i);
    s.points.emplace_back(x, y, 1.0);
    expected.insert({static_cast<int>(std::round(x)), static_cast<int>(std::round(y))});
  }
  const RasterResult result = rasterize_curve(rig, s, 640, 480);
  const PixelSet pixels = extract_pixels(result.images[0]);
  CHECK(pixels.coords.size() == expected.size());
  for (const auto& px : pixels.coords) {
    CHECK(expected.count({static_cast<int>(px.x()), static_cast<int>(px.y())}) == 1);
  }
}

TEST_CASE("PGM: round trip and threshold reading") {
  BinaryImage img = BinaryImage::black(37, 23);
  img.set(0, 0, true);
  img.set(36, 22, true);
  img.set(10, 5, true);
  const std::string path = "raster_roundtrip_test.pgm";
  write_pgm(img, path);
  const BinaryImage back = read_pgm(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.bits == img.bits);
  std::remove(path.c_str());

  // handwritten PGM with a comment and mid-gray values around the threshold
  const std::string gray_path = "raster_gray_test.pgm";
  {
    std::ofstream out(gray_path, std::ios::binary);
    out << "P5\n# comment line\n2 2\n255\n";
    const unsigned char data[4] = {127, 128, 0, 255};
    out.write(reinterpret_cast<const char*>(data), 4);
  }
  const BinaryImage gray = read_pgm(gray_path);
  CHECK_FALSE(gray.at(0, 0));
  CHECK(gray.at(1, 0));
  CHECK_FALSE(gray.at(0, 1));
  CHECK(gray.at(1, 1));
  std::remove(gray_path.c_str());

  CHECK_THROWS_AS(read_pgm("does_not_exist.pgm"), IoError);
}
