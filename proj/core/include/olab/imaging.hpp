#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "olab/engine.hpp"

namespace olab::imaging {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Deterministic integer rasterization; no anti-aliasing, no platform
// dependence. image_side must be divisible by 8 (cells) and by 20 (the
// pooling grid of the ablation featurizers).
struct RenderSpec {
  int image_side = 600;
  Rgb background{0, 110, 60};  // green felt
  Rgb grid{0, 0, 0};
  Rgb black_disc{20, 20, 20};
  Rgb white_disc{240, 240, 240};
  double disc_radius_fraction = 0.40;  // of the cell side, in (0, 0.5)

  void validate() const;
  uint64_t hash() const;  // cache key component
};

struct BoardImage {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // row-major RGB, 3 bytes per pixel

  uint8_t at(int r, int c, int ch) const { return pixels[(r * width + c) * 3 + ch]; }
  bool operator==(const BoardImage&) const = default;
};

BoardImage render(const engine::Board& board, const RenderSpec& spec = {});

// (r, c) -> (H-1-r, W-1-c); an involution.
BoardImage rotate_image_180(const BoardImage& image);

// 20x20 grid of equal patches, per-patch per-channel byte mean scaled to
// [0,1], flattened channel-major: index = (ch * 20 + gy) * 20 + gx.
std::vector<double> pool_features(const BoardImage& image);

// Area-weighted downscale to 20x20x3 (each output pixel the exact mean of
// its covered source area), same scaling and layout as pool_features.
std::vector<double> area_features(const BoardImage& image);

void write_png(const std::string& path, const BoardImage& image);

}  // namespace olab::imaging
