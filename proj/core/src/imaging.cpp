#include "olab/imaging.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "olab/errors.hpp"

namespace olab::imaging {

void RenderSpec::validate() const {
  if (image_side <= 0 || image_side % 8 != 0 || image_side % 20 != 0) {
    throw ConfigError("image_side must be positive and divisible by 8 and 20, got " +
                     std::to_string(image_side));
  }
  if (!(disc_radius_fraction > 0.0 && disc_radius_fraction < 0.5)) {
    throw ConfigError("disc_radius_fraction must lie in (0, 0.5)");
  }
}

uint64_t RenderSpec::hash() const {
  // FNV-1a over the fields, stable across runs.
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<uint64_t>(image_side));
  for (Rgb c : {background, grid, black_disc, white_disc}) {
    mix((uint64_t(c.r) << 16) | (uint64_t(c.g) << 8) | c.b);
  }
  mix(static_cast<uint64_t>(std::llround(disc_radius_fraction * 1e9)));
  return h;
}

BoardImage render(const engine::Board& board, const RenderSpec& spec) {
  spec.validate();
  const int side = spec.image_side;
  const int cell = side / 8;
  BoardImage img;
  img.height = img.width = side;
  img.pixels.assign(static_cast<size_t>(side) * side * 3, 0);

  auto put = [&](int r, int c, Rgb color) {
    size_t off = (static_cast<size_t>(r) * side + c) * 3;
    img.pixels[off] = color.r;
    img.pixels[off + 1] = color.g;
    img.pixels[off + 2] = color.b;
  };

  // Disc test in doubled coordinates so the rasterization is exactly
  // symmetric under within-cell point reflection: dx = 2p + 1 - cell.
  const int64_t r2 = static_cast<int64_t>(std::llround(2.0 * spec.disc_radius_fraction * cell));
  const int64_t r2sq = r2 * r2;

  for (int row = 0; row < 8; ++row) {
    for (int col = 0; col < 8; ++col) {
      const engine::Cell state = board.cells[row * 8 + col];
      for (int py = 0; py < cell; ++py) {
        for (int px = 0; px < cell; ++px) {
          const int ir = row * cell + py;
          const int ic = col * cell + px;
          Rgb color = spec.background;
          if (py == 0 || py == cell - 1 || px == 0 || px == cell - 1) color = spec.grid;
          if (state != engine::Cell::Empty) {
            const int64_t dx = 2 * px + 1 - cell;
            const int64_t dy = 2 * py + 1 - cell;
            if (dx * dx + dy * dy <= r2sq) {
              color = state == engine::Cell::Black ? spec.black_disc : spec.white_disc;
            }
          }
          put(ir, ic, color);
        }
      }
    }
  }
  return img;
}

BoardImage rotate_image_180(const BoardImage& image) {
  BoardImage out;
  out.height = image.height;
  out.width = image.width;
  out.pixels.resize(image.pixels.size());
  const size_t n = static_cast<size_t>(image.height) * image.width;
  for (size_t p = 0; p < n; ++p) {
    std::memcpy(&out.pixels[(n - 1 - p) * 3], &image.pixels[p * 3], 3);
  }
  return out;
}

std::vector<double> pool_features(const BoardImage& image) {
  constexpr int kGrid = 20;
  if (image.height != image.width || image.height % kGrid != 0) {
    throw ShapeError("pool_features: image side must be square and divisible by 20");
  }
  const int patch = image.height / kGrid;
  std::vector<double> out(kGrid * kGrid * 3, 0.0);
  for (int gy = 0; gy < kGrid; ++gy) {
    for (int gx = 0; gx < kGrid; ++gx) {
      double sum[3] = {0, 0, 0};
      for (int py = 0; py < patch; ++py) {
        for (int px = 0; px < patch; ++px) {
          const int r = gy * patch + py, c = gx * patch + px;
          for (int ch = 0; ch < 3; ++ch) sum[ch] += image.at(r, c, ch);
        }
      }
      const double denom = 255.0 * patch * patch;
      for (int ch = 0; ch < 3; ++ch) {
        out[(ch * kGrid + gy) * kGrid + gx] = sum[ch] / denom;
      }
    }
  }
  return out;
}

std::vector<double> area_features(const BoardImage& image) {
  constexpr int kGrid = 20;
  if (image.height != image.width || image.height % kGrid != 0) {
    throw ShapeError("area_features: image side must be square and divisible by 20");
  }
  // General fractional-coverage downscale; with a divisible side the cover
  // is exact and this coincides with pool_features.
  const double sy = static_cast<double>(image.height) / kGrid;
  const double sx = static_cast<double>(image.width) / kGrid;
  std::vector<double> out(kGrid * kGrid * 3, 0.0);
  for (int gy = 0; gy < kGrid; ++gy) {
    const double y0 = gy * sy, y1 = (gy + 1) * sy;
    for (int gx = 0; gx < kGrid; ++gx) {
      const double x0 = gx * sx, x1 = (gx + 1) * sx;
      double sum[3] = {0, 0, 0};
      double area = 0.0;
      for (int r = static_cast<int>(std::floor(y0)); r < static_cast<int>(std::ceil(y1)); ++r) {
        const double wy = std::min<double>(y1, r + 1) - std::max<double>(y0, r);
        for (int c = static_cast<int>(std::floor(x0)); c < static_cast<int>(std::ceil(x1)); ++c) {
          const double wx = std::min<double>(x1, c + 1) - std::max<double>(x0, c);
          const double w = wy * wx;
          area += w;
          for (int ch = 0; ch < 3; ++ch) sum[ch] += w * image.at(r, c, ch);
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        out[(ch * kGrid + gy) * kGrid + gx] = sum[ch] / (255.0 * area);
      }
    }
  }
  return out;
}

namespace {

void put_u32be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(uint8_t(x >> 24));
  v.push_back(uint8_t(x >> 16));
  v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x));
}

void write_chunk(std::FILE* f, const char type[4], const std::vector<uint8_t>& data) {
  std::vector<uint8_t> hdr;
  put_u32be(hdr, static_cast<uint32_t>(data.size()));
  std::fwrite(hdr.data(), 1, 4, f);
  uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::fwrite(type, 1, 4, f);
  if (!data.empty()) std::fwrite(data.data(), 1, data.size(), f);
  std::vector<uint8_t> tail;
  put_u32be(tail, crc);
  std::fwrite(tail.data(), 1, 4, f);
}

}  // namespace

void write_png(const std::string& path, const BoardImage& image) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open " + path + " for writing");
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  std::fwrite(sig, 1, 8, f);

  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(image.width));
  put_u32be(ihdr, static_cast<uint32_t>(image.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(f, "IHDR", ihdr);

  // Filter byte 0 per scanline, then one zlib stream.
  std::vector<uint8_t> raw;
  raw.reserve((static_cast<size_t>(image.width) * 3 + 1) * image.height);
  for (int r = 0; r < image.height; ++r) {
    raw.push_back(0);
    const uint8_t* row = &image.pixels[static_cast<size_t>(r) * image.width * 3];
    raw.insert(raw.end(), row, row + static_cast<size_t>(image.width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    std::fclose(f);
    throw NumericalError("zlib compression failed for " + path);
  }
  compressed.resize(bound);
  write_chunk(f, "IDAT", compressed);
  write_chunk(f, "IEND", {});
  std::fclose(f);
}

}  // namespace olab::imaging
