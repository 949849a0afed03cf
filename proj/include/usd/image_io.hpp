#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "usd/particles.hpp"

namespace usd {

struct ImageRgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // rgb triplets, raster order from top-left

  std::uint8_t& at(int row, int col, int ch) { return pixels[3 * (row * width + col) + ch]; }
  std::uint8_t at(int row, int col, int ch) const {
    return pixels[3 * (row * width + col) + ch];
  }
};

// 8-bit RGB PNG; other PNG layouts (palette, gray, alpha) are expanded on
// read.
ImageRgb8 read_png_rgb8(const std::string& path);
void write_png_rgb8(const std::string& path, const ImageRgb8& img);

// One particle per pixel in raster order, coordinates rgb scaled to [0,1],
// uniform weights 1/n.
WeightedParticles image_to_particles(const ImageRgb8& img);

// Inverse of image_to_particles for a cloud of width * height particles:
// coordinates are clamped to [0,1] and quantized to 8 bits.
ImageRgb8 particles_to_image(const WeightedParticles& p, int width, int height);

}  // namespace usd
