#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

#include "starchnet/error.hpp"
#include "starchnet/image.hpp"
#include "starchnet/rng.hpp"
#include "support.hpp"

using namespace starchnet;

namespace {

void write_jpeg(const std::filesystem::path& path, std::size_t h, std::size_t w, unsigned char value,
                int components = 3) {
  FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  jpeg_compress_struct cinfo;
  jpeg_error_mgr err;
  cinfo.err = jpeg_std_error(&err);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = components;
  cinfo.in_color_space = components == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 100, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<unsigned char> row(w * static_cast<std::size_t>(components), value);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW r = row.data();
    jpeg_write_scanlines(&cinfo, &r, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

void write_gray_png(const std::filesystem::path& path, const std::vector<unsigned char>& pixels, std::size_t h,
                    std::size_t w) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_GRAY;
  ASSERT_TRUE(png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr));
}

ImageBuffer ramp(std::size_t h, std::size_t w) {
  ImageBuffer img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>((y * w + x) * 3 + c) / (h * w * 3);
  return img;
}

// Independent scalar bilinear sample with half-pixel centres and edge clamping.
double oracle_bilinear(const std::vector<std::vector<double>>& src, std::size_t out_h, std::size_t out_w,
                       std::size_t oy, std::size_t ox) {
  const double in_h = static_cast<double>(src.size()), in_w = static_cast<double>(src[0].size());
  auto coord = [](double o, double in, double out) {
    return std::clamp((o + 0.5) * in / out - 0.5, 0.0, in - 1.0);
  };
  const double sy = coord(static_cast<double>(oy), in_h, static_cast<double>(out_h));
  const double sx = coord(static_cast<double>(ox), in_w, static_cast<double>(out_w));
  const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min<std::size_t>(y0 + 1, src.size() - 1);
  const std::size_t x1 = std::min<std::size_t>(x0 + 1, src[0].size() - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * src[y0][x0] + fx * src[y0][x1]) + fy * ((1 - fx) * src[y1][x0] + fx * src[y1][x1]);
}

}  // namespace

TEST(Normalize, MapsUnitIntervalToSymmetricRange) {
  ImageBuffer img(1, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0.0f;
    img.at(0, 1, c) = 0.5f;
    img.at(0, 2, c) = 1.0f;
  }
  const Tensor t = normalize(img);
  EXPECT_EQ(t.shape(), (Shape{3, 1, 3}));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(t.at(c * 3 + 0), -1.0);
    EXPECT_EQ(t.at(c * 3 + 1), 0.0);
    EXPECT_EQ(t.at(c * 3 + 2), 1.0);
  }
  const Tensor gray = normalize(ImageBuffer(4, 4, 0.5f));
  for (double v : gray.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, LayoutIsChannelMajor) {
  ImageBuffer img(1, 2);
  img.at(0, 1, 2) = 1.0f;
  const Tensor t = normalize(img);
  EXPECT_EQ(t.at(2 * 2 + 1), 1.0);
  EXPECT_EQ(t.at(0 * 2 + 1), -1.0);
}

TEST(Resize, SameSizeIsBitIdentical) {
  const ImageBuffer img = ramp(224, 224);
  EXPECT_EQ(resize_bilinear(img, 224, 224).values, img.values);
}

TEST(Resize, ConstantStaysConstant) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 7}, {300, 180}}) {
    const ImageBuffer out = resize_bilinear(ImageBuffer(h, w, 0.3f), 224, 224);
    ASSERT_EQ(out.values.size(), 224u * 224 * 3);
    for (float v : out.values) ASSERT_FLOAT_EQ(v, 0.3f);
  }
}

TEST(Resize, CheckerboardMatchesScalarOracle) {
  const std::vector<std::vector<double>> board{{0, 1}, {1, 0}};
  ImageBuffer img(2, 2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(board[y][x]);
  const ImageBuffer out = resize_bilinear(img, 4, 4);
  std::set<double> levels;
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      const double want = oracle_bilinear(board, 4, 4, y, x);
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(y, x, c), want, 1e-7) << y << "," << x;
      levels.insert(want);
    }
  }
  EXPECT_TRUE(levels.count(0.375) && levels.count(0.625) && levels.count(0.25) && levels.count(0.75));
}

TEST(Resize, DownscaleMatchesOracle) {
  std::vector<std::vector<double>> src(5, std::vector<double>(7));
  ImageBuffer img(5, 7);
  Rng rng(3);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 7; ++x) {
      src[y][x] = static_cast<double>(static_cast<float>(rng.uniform()));
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(src[y][x]);
    }
  const ImageBuffer out = resize_bilinear(img, 3, 4);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out.at(y, x, 0), oracle_bilinear(src, 3, 4, y, x), 1e-6);
  EXPECT_THROW(resize_bilinear(ImageBuffer{}, 4, 4), ArgumentError);
}

TEST(Augment, FlipMirrorsColumns) {
  const ImageBuffer img = ramp(3, 5);
  const ImageBuffer out = apply_augment(img, {true, 0.0});
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(y, x, c), img.at(y, 4 - x, c));
  EXPECT_EQ(apply_augment(img, {false, 0.0}).values, img.values);
}

TEST(Augment, RotationKeepsConstantInterior) {
  const ImageBuffer img(32, 32, 0.7f);
  const ImageBuffer out = rotate(rotate(img, 10.0), -10.0);
  ASSERT_EQ(out.values.size(), img.values.size());
  for (std::size_t y = 8; y < 24; ++y)
    for (std::size_t x = 8; x < 24; ++x) EXPECT_NEAR(out.at(y, x, 1), 0.7f, 1e-6);
  // Corners rotate out of the frame and are filled with black.
  EXPECT_EQ(rotate(img, 10.0).at(0, 0, 0), 0.0f);
}

TEST(Augment, RightAngleRotationMovesPixels) {
  ImageBuffer img(3, 3);
  img.at(0, 1, 0) = 1.0f;  // top middle
  const ImageBuffer ccw = rotate(img, 90.0);
  EXPECT_NEAR(ccw.at(1, 0, 0), 1.0f, 1e-6);  // counter-clockwise: top goes left
  EXPECT_NEAR(ccw.at(0, 1, 0), 0.0f, 1e-6);
}

TEST(Augment, DeterministicAndWithinRange) {
  const ImageBuffer img = ramp(16, 16);
  Rng a(5), b(5);
  int flips = 0;
  for (int i = 0; i < 200; ++i) {
    const AugmentParams p = sample_augment(a);
    const AugmentParams q = sample_augment(b);
    EXPECT_EQ(p.flip, q.flip);
    EXPECT_EQ(p.angle_deg, q.angle_deg);
    EXPECT_GE(p.angle_deg, -10.0);
    EXPECT_LE(p.angle_deg, 10.0);
    flips += p.flip;
  }
  EXPECT_NEAR(flips, 100, 30);
  Rng c(9), d(9);
  const ImageBuffer x = augment(img, c), y = augment(img, d);
  EXPECT_EQ(x.values, y.values);
  EXPECT_EQ(x.height, 16u);
  for (float v : x.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Decode, PngRoundTripScalesToUnitInterval) {
  support::TempDir dir;
  ImageBuffer img(2, 3);
  img.at(0, 0, 0) = 1.0f;
  img.at(1, 2, 1) = 128.0f / 255.0f;
  write_png(img, dir / "a.png");
  const ImageBuffer back = decode_image(dir / "a.png");
  ASSERT_EQ(back.height, 2u);
  ASSERT_EQ(back.width, 3u);
  EXPECT_EQ(back.at(0, 0, 0), 1.0f);
  EXPECT_EQ(back.at(0, 0, 1), 0.0f);
  EXPECT_FLOAT_EQ(back.at(1, 2, 1), 128.0f / 255.0f);
}

TEST(Decode, GrayscalePngReplicatesChannels) {
  support::TempDir dir;
  write_gray_png(dir / "g.png", {0, 255, 51, 204}, 2, 2);
  const ImageBuffer img = decode_image(dir / "g.png");
  EXPECT_FLOAT_EQ(img.at(1, 0, 0), 0.2f);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(img.at(0, 1, c), 1.0f);
    EXPECT_EQ(img.at(1, 0, c), img.at(1, 0, 0));
  }
}

TEST(Decode, JpegColourAndGrayscale) {
  support::TempDir dir;
  write_jpeg(dir / "c.jpg", 8, 8, 200);
  write_jpeg(dir / "g.JPEG", 8, 8, 100, 1);
  const ImageBuffer c = decode_image(dir / "c.jpg");
  EXPECT_EQ(c.height, 8u);
  for (float v : c.values) EXPECT_NEAR(v, 200.0 / 255.0, 2.0 / 255.0);
  const ImageBuffer g = decode_image(dir / "g.JPEG");
  for (float v : g.values) EXPECT_NEAR(v, 100.0 / 255.0, 2.0 / 255.0);
}

TEST(Decode, ErrorsNameTheProblem) {
  support::TempDir dir;
  {
    std::ofstream(dir / "x.heic") << "ftypheic";
  }
  try {
    decode_image(dir / "x.heic");
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find(".heic"), std::string::npos) << e.what();
  }
  write_jpeg(dir / "t.jpg", 64, 64, 90);
  const std::string full = support::read_file(dir / "t.jpg");
  {
    std::ofstream(dir / "t.jpg", std::ios::binary) << full.substr(0, full.size() / 2);
  }
  EXPECT_THROW(decode_image(dir / "t.jpg"), DecodeError);
  {
    std::ofstream(dir / "bad.png", std::ios::binary) << "\x89PNG\r\n\x1a\nnot really";
  }
  EXPECT_THROW(decode_image(dir / "bad.png"), DecodeError);
  EXPECT_THROW(decode_image(dir / "missing.png"), DecodeError);
  EXPECT_TRUE(has_image_extension("a/B.JPG"));
  EXPECT_FALSE(has_image_extension("a/notes.txt"));
}
