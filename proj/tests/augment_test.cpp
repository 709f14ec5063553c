#include <gtest/gtest.h>

#include <cmath>

#include "affnet/augment.hpp"
#include "affnet/rng.hpp"

using affnet::Rng;
using affnet::Tensor;
using affnet::ami::AffectiveImage;
using affnet::eval::AugmentMode;

namespace {

Tensor<double> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> image({h, w, 3});
  for (std::size_t i = 0; i < image.size(); ++i)
    image[i] = rng.uniform(-2.0, 6.0);
  return image;
}

}  // namespace

TEST(Augment, FlipIsAnInvolution) {
  Tensor<double> image = random_image(9, 14, 1);
  EXPECT_EQ(affnet::eval::hflip(affnet::eval::hflip(image)), image);
}

TEST(Augment, FlipMirrorsColumns) {
  Tensor<double> image({1, 3, 1});
  image[0] = 1.0;
  image[1] = 2.0;
  image[2] = 3.0;
  Tensor<double> flipped = affnet::eval::hflip(image);
  EXPECT_DOUBLE_EQ(flipped[0], 3.0);
  EXPECT_DOUBLE_EQ(flipped[1], 2.0);
  EXPECT_DOUBLE_EQ(flipped[2], 1.0);
}

TEST(Augment, ZeroRotationIsIdentity) {
  Tensor<double> image = random_image(8, 8, 2);
  Tensor<double> rotated = affnet::eval::rotate_bilinear(image, 0.0);
  for (std::size_t i = 0; i < image.size(); ++i)
    EXPECT_NEAR(rotated[i], image[i], 1e-6);
}

TEST(Augment, UnitZoomIsIdentity) {
  Tensor<double> image = random_image(7, 9, 3);
  Tensor<double> zoomed = affnet::eval::center_zoom(image, 1.0);
  for (std::size_t i = 0; i < image.size(); ++i)
    EXPECT_NEAR(zoomed[i], image[i], 1e-6);
}

TEST(Augment, RotationFillsOutsideWithZero) {
  Tensor<double> image({5, 5, 1});
  image.fill(1.0);
  Tensor<double> rotated = affnet::eval::rotate_bilinear(image, 45.0);
  // corners sample outside the source square
  EXPECT_NEAR(rotated[0], 0.0, 0.51);
  double interior = rotated[(2 * 5 + 2) * 1];
  EXPECT_NEAR(interior, 1.0, 1e-9);
}

TEST(Augment, CountMatchesMode) {
  AffectiveImage image{random_image(6, 6, 4), "v", 3};
  EXPECT_EQ(affnet::eval::augment(image, 0, AugmentMode::kNone).size(), 1u);
  EXPECT_EQ(affnet::eval::augment(image, 0, AugmentMode::kFlip).size(), 2u);
  EXPECT_EQ(affnet::eval::augment(image, 0, AugmentMode::kFull).size(), 6u);
  EXPECT_EQ(affnet::eval::augment_count(AugmentMode::kFull), 6);
}

TEST(Augment, OriginalAlwaysFirstAndShapePreserved) {
  AffectiveImage image{random_image(10, 12, 5), "clip7", 4};
  auto out = affnet::eval::augment(image, 123, AugmentMode::kFull);
  EXPECT_EQ(out[0].pixels, image.pixels);
  for (const auto& variant : out) {
    EXPECT_EQ(variant.pixels.shape(), image.pixels.shape());
    EXPECT_EQ(variant.source_video_id, "clip7");
    EXPECT_EQ(variant.frames_used, 4);
  }
}

TEST(Augment, DeterministicForAGivenSeed) {
  AffectiveImage image{random_image(6, 6, 6), "v", 3};
  auto a = affnet::eval::augment(image, 9, AugmentMode::kFull);
  auto b = affnet::eval::augment(image, 9, AugmentMode::kFull);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(a[i].pixels, b[i].pixels);
}

TEST(Augment, ModeNamesRoundTrip) {
  for (AugmentMode mode :
       {AugmentMode::kNone, AugmentMode::kFlip, AugmentMode::kFull})
    EXPECT_EQ(affnet::eval::parse_augment_mode(affnet::eval::to_string(mode)),
              mode);
  EXPECT_THROW(affnet::eval::parse_augment_mode("extreme"),
               std::invalid_argument);
}
