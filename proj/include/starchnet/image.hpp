#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "starchnet/tensor.hpp"

namespace starchnet {

class Rng;

/// RGB image, HWC layout, values in [0, 1] before normalization.
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  static constexpr std::size_t kChannels = 3;

  ImageBuffer() = default;
  ImageBuffer(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), values(h * w * kChannels, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return values[(y * width + x) * kChannels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * kChannels + c];
  }
};

/// Decodes a JPEG (.jpg/.jpeg) or PNG (.png) file to RGB in [0, 1].
/// Grayscale is replicated to three channels and alpha is dropped. Unsupported
/// extensions and corrupt or truncated files raise DecodeError.
ImageBuffer decode_image(const std::filesystem::path& path);

bool has_image_extension(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG (values clamped to [0, 1] and rounded).
void write_png(const ImageBuffer& image, const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centers (align_corners = false);
/// source coordinates are clamped to the image edge.
ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t out_height, std::size_t out_width);

/// (x - 0.5) / 0.5 on every channel, returned as a CHW f32 tensor.
Tensor normalize(const ImageBuffer& image);

struct AugmentParams {
  bool flip = false;
  /// Counter-clockwise rotation in degrees about the image center.
  double angle_deg = 0.0;
};

/// Draws a flip with probability 0.5 and an angle uniform in [-10, 10].
AugmentParams sample_augment(Rng& rng);

ImageBuffer hflip(const ImageBuffer& image);

/// Rotation by inverse mapping with bilinear sampling; samples outside the
/// source read as 0.
ImageBuffer rotate(const ImageBuffer& image, double angle_deg);

ImageBuffer apply_augment(const ImageBuffer& image, const AugmentParams& params);

/// Random horizontal flip followed by random rotation.
ImageBuffer augment(const ImageBuffer& image, Rng& rng);

}  // namespace starchnet
