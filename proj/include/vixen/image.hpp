#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace vixen {

// RGB image with channel-last float pixels in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // height * width * 3, row-major

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
};

/// Throws ImageIoError unless the buffer length matches and every value is finite in [0, 1].
void validate(const Image& image);

/// Reads a PNG or JPEG (detected from magic bytes) and normalizes 8-bit samples to [0, 1].
Image load_image(const std::filesystem::path& path);

/// Writes 8-bit RGB PNG, rounding to the nearest level.
void save_png(const std::filesystem::path& path, const Image& image);

}  // namespace vixen
