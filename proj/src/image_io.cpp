#include "usd/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <png.h>

namespace usd {

namespace {

struct FileCloser {
  FILE* fp;
  ~FileCloser() {
    if (fp != nullptr) std::fclose(fp);
  }
};

}  // namespace

ImageRgb8 read_png_rgb8(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (fp == nullptr) throw std::runtime_error("read_png_rgb8: cannot open " + path);
  FileCloser closer{fp};

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("read_png_rgb8: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png_rgb8: png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb8: failed to decode " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // normalize every input layout to 8-bit rgb
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  ImageRgb8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png_rgb8: unsupported channel layout in " + path);
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  rows.resize(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = img.pixels.data() + static_cast<std::size_t>(r) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_rgb8(const std::string& path, const ImageRgb8& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_png_rgb8: inconsistent image buffer");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw std::runtime_error("write_png_rgb8: cannot open " + path);
  FileCloser closer{fp};

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("write_png_rgb8: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png_rgb8: png_create_info_struct failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png_rgb8: failed to encode " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.height; ++r)
    rows[r] = const_cast<png_bytep>(img.pixels.data() +
                                    static_cast<std::size_t>(r) * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

WeightedParticles image_to_particles(const ImageRgb8& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("image_to_particles: inconsistent image buffer");
  const int n = img.width * img.height;
  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch)
      pts(i, ch) = img.pixels[static_cast<std::size_t>(i) * 3 + ch] / 255.0;
  return WeightedParticles::uniform(std::move(pts));
}

ImageRgb8 particles_to_image(const WeightedParticles& p, int width, int height) {
  if (p.dim() != 3) throw std::invalid_argument("particles_to_image: particles must be rgb");
  if (p.size() != width * height)
    throw std::invalid_argument("particles_to_image: particle count does not match size");
  ImageRgb8 img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  for (int i = 0; i < p.size(); ++i)
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::min(1.0, std::max(0.0, p.points(i, ch)));
      img.pixels[static_cast<std::size_t>(i) * 3 + ch] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

}  // namespace usd
