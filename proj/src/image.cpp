#include "starchnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "starchnet/error.hpp"
#include "starchnet/rng.hpp"

namespace starchnet {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// libjpeg reports truncated or damaged streams as warnings and pads the
// missing rows; treat every warning as fatal.
void jpeg_on_message(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_on_error(cinfo);
}

struct JpegPixels {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<unsigned char> rgb;
};

// Keeps no objects with non-trivial destructors in the frame that setjmp
// returns to; `out` lives in the caller.
bool jpeg_decode_raw(const unsigned char* data, std::size_t size, JpegPixels* out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_on_error;
  err.base.emit_message = jpeg_on_message;
  err.message[0] = '\0';
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out->height = cinfo.output_height;
  out->width = cinfo.output_width;
  out->rgb.resize(out->height * out->width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out->rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out->width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

ImageBuffer from_rgb8(std::size_t h, std::size_t w, const unsigned char* rgb) {
  ImageBuffer img(h, w);
  for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = static_cast<float>(rgb[i]) / 255.0f;
  return img;
}

ImageBuffer decode_jpeg(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.empty()) throw DecodeError("empty image file " + path.string());
  JpegPixels pixels;
  char message[JMSG_LENGTH_MAX] = {0};
  if (!jpeg_decode_raw(bytes.data(), bytes.size(), &pixels, message)) {
    throw DecodeError("cannot decode JPEG " + path.string() + ": " + message);
  }
  return from_rgb8(pixels.height, pixels.width, pixels.rgb.data());
}

ImageBuffer decode_png(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_rgb8(image.height, image.width, rgb.data());
}

// Bilinear read with zero outside the image.
float sample_zero_fill(const ImageBuffer& img, double sy, double sx, std::size_t c) {
  const double fy0 = std::floor(sy), fx0 = std::floor(sx);
  const double ty = sy - fy0, tx = sx - fx0;
  const auto y0 = static_cast<std::ptrdiff_t>(fy0), x0 = static_cast<std::ptrdiff_t>(fx0);
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(img.height) ||
        x >= static_cast<std::ptrdiff_t>(img.width)) {
      return 0.0;
    }
    return img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
  };
  const double v00 = px(y0, x0), v01 = px(y0, x0 + 1), v10 = px(y0 + 1, x0), v11 = px(y0 + 1, x0 + 1);
  const double top = v00 + tx * (v01 - v00);
  const double bottom = v10 + tx * (v11 - v10);
  return static_cast<float>(top + ty * (bottom - top));
}

}  // namespace

bool has_image_extension(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

ImageBuffer decode_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".jpg" || ext == ".jpeg") return decode_jpeg(path);
  if (ext == ".png") return decode_png(path);
  throw DecodeError("unsupported image format '" + (ext.empty() ? std::string("(none)") : ext) + "' for " +
                    path.string());
}

void write_png(const ImageBuffer& image, const std::filesystem::path& path) {
  std::vector<unsigned char> rgb(image.values.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const float v = std::clamp(image.values[i], 0.0f, 1.0f);
    rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw DecodeError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t out_height, std::size_t out_width) {
  if (image.height == 0 || image.width == 0) throw ArgumentError("cannot resize an empty image");
  if (out_height == 0 || out_width == 0) throw ArgumentError("resize target must be positive");
  if (image.height == out_height && image.width == out_width) return image;

  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = std::max(0.0, (static_cast<double>(i) + 0.5) * scale - 0.5);
      auto lo = std::min(static_cast<std::size_t>(src), in - 1);
      std::size_t hi = std::min(lo + 1, in - 1);
      result[i] = {lo, hi, std::min(src - static_cast<double>(lo), 1.0)};
    }
    return result;
  };
  const auto ys = taps(image.height, out_height);
  const auto xs = taps(image.width, out_width);
  ImageBuffer out(out_height, out_width);
  for (std::size_t y = 0; y < out_height; ++y) {
    const auto& ty = ys[y];
    for (std::size_t x = 0; x < out_width; ++x) {
      const auto& tx = xs[x];
      for (std::size_t c = 0; c < ImageBuffer::kChannels; ++c) {
        const double v00 = image.at(ty.lo, tx.lo, c), v01 = image.at(ty.lo, tx.hi, c);
        const double v10 = image.at(ty.hi, tx.lo, c), v11 = image.at(ty.hi, tx.hi, c);
        const double top = v00 + tx.t * (v01 - v00);
        const double bottom = v10 + tx.t * (v11 - v10);
        out.at(y, x, c) = static_cast<float>(top + ty.t * (bottom - top));
      }
    }
  }
  return out;
}

Tensor normalize(const ImageBuffer& image) {
  const std::size_t plane = image.height * image.width;
  std::vector<float> chw(plane * ImageBuffer::kChannels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < ImageBuffer::kChannels; ++c) {
      chw[c * plane + i] = (image.values[i * ImageBuffer::kChannels + c] - 0.5f) / 0.5f;
    }
  }
  return Tensor::from_vector({ImageBuffer::kChannels, image.height, image.width}, std::move(chw));
}

AugmentParams sample_augment(Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.angle_deg = rng.uniform(-10.0, 10.0);
  return p;
}

ImageBuffer hflip(const ImageBuffer& image) {
  ImageBuffer out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < ImageBuffer::kChannels; ++c) {
        out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
      }
    }
  }
  return out;
}

ImageBuffer rotate(const ImageBuffer& image, double angle_deg) {
  if (angle_deg == 0.0) return image;
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  ImageBuffer out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      // Inverse map of a counter-clockwise turn with the y axis pointing down.
      const double sx = cx + cs * dx - sn * dy;
      const double sy = cy + sn * dx + cs * dy;
      for (std::size_t c = 0; c < ImageBuffer::kChannels; ++c) out.at(y, x, c) = sample_zero_fill(image, sy, sx, c);
    }
  }
  return out;
}

ImageBuffer apply_augment(const ImageBuffer& image, const AugmentParams& params) {
  ImageBuffer out = params.flip ? hflip(image) : image;
  return rotate(out, params.angle_deg);
}

ImageBuffer augment(const ImageBuffer& image, Rng& rng) { return apply_augment(image, sample_augment(rng)); }

}  // namespace starchnet
