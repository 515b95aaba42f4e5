#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mtlu/image.hpp"

using namespace mtlu;

namespace {

const std::filesystem::path kData = MTLU_TEST_DATA;

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mtlu_test_" + name);
}

}  // namespace

TEST(Png, GrayFixture) {
  const Image im = load_png(kData / "gray_2x2.png");
  ASSERT_EQ(im.width, 2);
  ASSERT_EQ(im.height, 2);
  ASSERT_EQ(im.channels, 1);
  EXPECT_EQ(im.pixels, (std::vector<std::uint8_t>{0, 64, 128, 255}));
  EXPECT_DOUBLE_EQ(im.real(1, 0, 0), 64.0 / 255.0);
  EXPECT_EQ(luminance(im).data, (std::vector<double>{0.0, 64 / 255.0, 128 / 255.0, 1.0}));
}

TEST(Png, RgbFixture) {
  const Image im = load_png(kData / "rgb_2x2.png");
  ASSERT_EQ(im.channels, 3);
  EXPECT_EQ(im.at(0, 0, 0), 255);
  EXPECT_EQ(im.at(1, 0, 1), 255);
  EXPECT_EQ(im.at(0, 1, 2), 255);
  EXPECT_EQ(im.at(1, 1, 0), 200);
  EXPECT_EQ(im.at(1, 1, 1), 100);
  EXPECT_EQ(im.at(1, 1, 2), 50);
}

TEST(Png, AlphaIsDroppedAndPaletteExpanded) {
  const Image a = load_png(kData / "rgba_2x1.png");
  EXPECT_EQ(a.channels, 3);
  EXPECT_EQ(a.pixels, (std::vector<std::uint8_t>{10, 20, 30, 40, 50, 60}));
  const Image p = load_png(kData / "palette_2x1.png");
  EXPECT_EQ(p.channels, 3);
  EXPECT_EQ(p.pixels, (std::vector<std::uint8_t>{9, 8, 7, 1, 2, 3}));
}

TEST(Png, SixteenBitIsRejected) {
  try {
    load_png(kData / "gray16_2x2.png");
    FAIL() << "16-bit PNG accepted";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bit depth"), std::string::npos);
  }
}

TEST(Png, MissingAndGarbageFiles) {
  EXPECT_THROW(load_png(kData / "no_such_image.png"), IoError);
  const auto junk = temp_file("junk.png");
  { std::ofstream(junk) << "not a png"; }
  EXPECT_THROW(load_png(junk), IoError);
  std::filesystem::remove(junk);
}

TEST(Png, SaveLoadRoundTrip) {
  Image im(5, 3, 3);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<std::uint8_t>(i * 17);
  const auto path = temp_file("roundtrip.png");
  save_png(im, path);
  EXPECT_EQ(load_png(path), im);
  std::filesystem::remove(path);
}

TEST(Image, ByteConversionRoundsAndClamps) {
  EXPECT_EQ(to_byte(-0.2), 0);
  EXPECT_EQ(to_byte(1.7), 255);
  EXPECT_EQ(to_byte(0.5), 128);  // 127.5 rounds to even
  EXPECT_EQ(to_byte(2.5 / 255.0), 2);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(to_byte(b / 255.0), b);
}

TEST(Image, LumaWeights) {
  Image im(1, 1, 3);
  im.at(0, 0, 0) = 255;
  EXPECT_NEAR(rgb_to_y(im).data[0], 0.299, 1e-15);
  im.at(0, 0, 0) = 0;
  im.at(0, 0, 1) = 255;
  EXPECT_NEAR(rgb_to_y(im).data[0], 0.587, 1e-15);
  im.at(0, 0, 1) = 0;
  im.at(0, 0, 2) = 255;
  EXPECT_NEAR(rgb_to_y(im).data[0], 0.114, 1e-15);
}

TEST(Image, GrayPixelsKeepTheirLuma) {
  Image im(256, 1, 3);
  for (int x = 0; x < 256; ++x)
    for (int c = 0; c < 3; ++c) im.at(x, 0, c) = static_cast<std::uint8_t>(x);
  const Plane y = rgb_to_y(im);
  for (int x = 0; x < 256; ++x) EXPECT_EQ(y.at(x, 0), x / 255.0);
}

TEST(Image, YcbcrRoundTrip) {
  const Image im = load_png(kData / "rgb_2x2.png");
  EXPECT_EQ(ycbcr_to_rgb(rgb_to_ycbcr(im)), im);
}

TEST(Image, ChannelErrors) {
  EXPECT_THROW(Image(2, 2, 2), ShapeError);
  Image gray(2, 2, 1);
  EXPECT_THROW(rgb_to_y(gray), ShapeError);
  EXPECT_THROW(channel_plane(gray, 1), ShapeError);
  EXPECT_THROW(image_from_planes({Plane(2, 2), Plane(2, 3), Plane(2, 2)}), ShapeError);
}
