#include "rbcnet/augment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "rbcnet/errors.hpp"
#include "rbcnet/rng.hpp"

namespace rbcnet {
namespace {

ImagePatch gradient_patch(int h, int w) {
  ImagePatch p(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      p.at(y, x, 0) = static_cast<float>(y * 255.0 / (h - 1));
      p.at(y, x, 1) = static_cast<float>(x * 255.0 / (w - 1));
      p.at(y, x, 2) = static_cast<float>((y + x) * 255.0 / (h + w - 2));
    }
  p.label = kParasitized;
  p.patient_id = "C7";
  p.source_path = "cell.png";
  return p;
}

ImagePatch random_patch(int h, int w, uint64_t seed) {
  RngStream s(seed, 0x617567ULL);
  ImagePatch p(h, w);
  for (size_t i = 0; i < p.pixels.size(); ++i)
    p.pixels[i] = static_cast<float>(s.uniform(0.0, 255.0));
  return p;
}

// Smooth blob image: plateaus in the middle make small geometric transforms
// nearly invertible away from the black-fill rim.
ImagePatch smooth_blob(int size) {
  ImagePatch p(size, size);
  const double c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      const double v = 200.0 * std::exp(-d2 / (0.08 * size * size));
      for (int ch = 0; ch < 3; ++ch) p.at(y, x, ch) = static_cast<float>(v);
    }
  return p;
}

// ---------------------------------------------------------------------------
// Parameter sampling
// ---------------------------------------------------------------------------

TEST(DrawAugment, TenThousandDrawsStayInPolicyRanges) {
  const AugmentPolicy pol;  // published defaults
  RngStream s(42, 1);
  std::map<int, int> noise_on;
  for (int i = 0; i < 10000; ++i) {
    const SampledAugment a = draw_augment(pol, s);
    // The order is a permutation of the ten op slots.
    std::array<bool, kAugOpCount> seen{};
    for (int op : a.order) {
      ASSERT_GE(op, 0);
      ASSERT_LT(op, kAugOpCount);
      ASSERT_FALSE(seen[static_cast<size_t>(op)]);
      seen[static_cast<size_t>(op)] = true;
    }
    ASSERT_GE(a.contrast, 0.5);
    ASSERT_LE(a.contrast, 1.5);
    ASSERT_GE(a.crop_frac, 0.0);
    ASSERT_LE(a.crop_frac, 0.2);
    ASSERT_GE(a.rotate_deg, -25.0);
    ASSERT_LE(a.rotate_deg, 25.0);
    ASSERT_GE(a.translate_x, -0.2);
    ASSERT_LE(a.translate_x, 0.2);
    ASSERT_GE(a.translate_y, -0.2);
    ASSERT_LE(a.translate_y, 0.2);
    ASSERT_GE(a.shear_deg, -25.0);
    ASSERT_LE(a.shear_deg, 25.0);
    if (a.do_color) {
      ASSERT_GE(a.hue_shift_deg, -15.0);
      ASSERT_LE(a.hue_shift_deg, 15.0);
      ASSERT_GE(a.sat_scale, 0.7);
      ASSERT_LE(a.sat_scale, 1.3);
    } else {
      ASSERT_EQ(a.sat_scale, 1.0);
    }
    if (a.do_blur) {
      ASSERT_GE(a.blur_sigma, 0.5);
      ASSERT_LE(a.blur_sigma, 1.0);
    }
    ASSERT_GE(a.noise_sigma, 0.0);
    ASSERT_LE(a.noise_sigma, 0.05 * 255.0);
    ++noise_on[a.do_blur ? 1 : 0];
  }
  // The gated ops fire roughly half the time.
  EXPECT_NEAR(noise_on[1] / 10000.0, 0.5, 0.05);
}

TEST(DrawAugment, IdentityPolicyIsPixelExactNoOp) {
  const ImagePatch src = random_patch(17, 13, 3);
  RngStream s(9, 2);
  const ImagePatch out = augment_sample(src, AugmentPolicy::identity(), s);
  for (size_t i = 0; i < src.pixels.size(); ++i)
    ASSERT_EQ(out.pixels[i], src.pixels[i]) << "pixel " << i;
  EXPECT_EQ(out.label, src.label);
}

TEST(DrawAugment, SameStreamSameResult) {
  const ImagePatch src = random_patch(16, 16, 4);
  const AugmentPolicy pol;
  RngStream a(77, 5), b(77, 5);
  const ImagePatch out_a = augment_sample(src, pol, a);
  const ImagePatch out_b = augment_sample(src, pol, b);
  for (size_t i = 0; i < out_a.pixels.size(); ++i)
    ASSERT_EQ(out_a.pixels[i], out_b.pixels[i]);
  RngStream c(78, 5);
  const ImagePatch out_c = augment_sample(src, pol, c);
  double diff = 0.0;
  for (size_t i = 0; i < out_a.pixels.size(); ++i)
    diff += std::fabs(out_a.pixels[i] - out_c.pixels[i]);
  EXPECT_GT(diff, 1.0);
}

// ---------------------------------------------------------------------------
// Individual transforms
// ---------------------------------------------------------------------------

TEST(Ops, FlipsAreExactInvolutions) {
  const ImagePatch src = random_patch(9, 12, 5);
  const ImagePatch h2 = flip_h(flip_h(src));
  const ImagePatch v2 = flip_v(flip_v(src));
  for (size_t i = 0; i < src.pixels.size(); ++i) {
    ASSERT_EQ(h2.pixels[i], src.pixels[i]);
    ASSERT_EQ(v2.pixels[i], src.pixels[i]);
  }
  const ImagePatch h = flip_h(src);
  EXPECT_EQ(h.at(3, 0, 1), src.at(3, 11, 1));
}

TEST(Ops, ContrastScalesDeviationsAboutTheMean) {
  const ImagePatch src = gradient_patch(8, 8);
  double mean = 0.0;
  for (size_t i = 0; i < src.pixels.size(); ++i) mean += src.pixels[i];
  mean /= static_cast<double>(src.pixels.size());
  const ImagePatch out = adjust_contrast(src, 1.2);
  for (size_t i = 0; i < src.pixels.size(); ++i) {
    const double want =
        std::min(255.0, std::max(0.0, mean + 1.2 * (src.pixels[i] - mean)));
    ASSERT_NEAR(out.pixels[i], want, 1e-4);
  }
  // Unit contrast is exact identity.
  const ImagePatch same = adjust_contrast(src, 1.0);
  for (size_t i = 0; i < src.pixels.size(); ++i)
    ASSERT_EQ(same.pixels[i], src.pixels[i]);
}

TEST(Ops, CropZeroFractionIsIdentityAndBadFractionThrows) {
  const ImagePatch src = random_patch(10, 10, 6);
  const ImagePatch out = crop_resample(src, 0.0, 0.3, 0.7);
  for (size_t i = 0; i < src.pixels.size(); ++i)
    ASSERT_EQ(out.pixels[i], src.pixels[i]);
  EXPECT_THROW(crop_resample(src, 1.0, 0.0, 0.0), RangeError);
  EXPECT_THROW(crop_resample(src, -0.1, 0.0, 0.0), RangeError);
  const ImagePatch cropped = crop_resample(src, 0.2, 0.0, 0.0);
  EXPECT_EQ(cropped.height(), 10);
  EXPECT_EQ(cropped.width(), 10);
}

TEST(Ops, RotateForwardThenBackRecoversInterior) {
  const ImagePatch src = smooth_blob(33);
  const ImagePatch back = rotate_patch(rotate_patch(src, 25.0), -25.0);
  double worst = 0.0;
  for (int y = 8; y < 25; ++y)
    for (int x = 8; x < 25; ++x)
      for (int c = 0; c < 3; ++c)
        worst = std::max(
            worst, static_cast<double>(std::fabs(back.at(y, x, c) -
                                                 src.at(y, x, c))));
  EXPECT_LT(worst, 3.0);
  // A quarter turn moves the column gradient onto rows (up to resampling).
  ImagePatch ramp(21, 21);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 21; ++x)
      for (int c = 0; c < 3; ++c) ramp.at(y, x, c) = static_cast<float>(10 * x);
  const ImagePatch quarter = rotate_patch(ramp, 90.0);
  // CCW: the old +x axis content now runs along -y.
  EXPECT_NEAR(quarter.at(2, 10, 0), ramp.at(10, 18, 0), 1e-3);
}

TEST(Ops, WholePixelTranslationIsExactAndFillsBlack) {
  const ImagePatch src = random_patch(10, 10, 7);
  const ImagePatch out = translate_patch(src, 0.2, -0.1);  // +2 cols, -1 row
  for (int y = 0; y < 9; ++y)
    for (int x = 2; x < 10; ++x)
      for (int c = 0; c < 3; ++c)
        ASSERT_EQ(out.at(y, x, c), src.at(y + 1, x - 2, c));
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(y, x, c), 0.0f);
}

TEST(Ops, ShearSlidesRowsProportionally) {
  const ImagePatch src = random_patch(11, 11, 8);
  // tan(45deg) = 1: the row below center shifts right by exactly one pixel.
  const ImagePatch out = shear_patch(src, 45.0);
  for (int x = 1; x < 11; ++x)
    for (int c = 0; c < 3; ++c)
      ASSERT_NEAR(out.at(6, x, c), src.at(6, x - 1, c), 1e-3);
  // The center row is fixed.
  for (int x = 0; x < 11; ++x)
    for (int c = 0; c < 3; ++c) ASSERT_NEAR(out.at(5, x, c), src.at(5, x, c), 1e-3);
}

TEST(Ops, HsvJitterShiftsHueAndKeepsValue) {
  ImagePatch px(1, 1);
  px.at(0, 0, 0) = 200.0f;  // reddish
  px.at(0, 0, 1) = 40.0f;
  px.at(0, 0, 2) = 40.0f;
  const ImagePatch shifted = hsv_jitter(px, 120.0, 1.0);
  // Red shifted by +120 degrees lands on green.
  EXPECT_NEAR(shifted.at(0, 0, 1), 200.0, 1.0);
  EXPECT_NEAR(shifted.at(0, 0, 0), 40.0, 1.0);
  const ImagePatch same = hsv_jitter(px, 0.0, 1.0);
  for (int c = 0; c < 3; ++c) ASSERT_NEAR(same.at(0, 0, c), px.at(0, 0, c), 0.5);
  // Saturation 0 collapses to gray with the original value channel.
  const ImagePatch gray = hsv_jitter(px, 0.0, 0.0);
  EXPECT_NEAR(gray.at(0, 0, 0), 200.0, 0.5);
  EXPECT_NEAR(gray.at(0, 0, 1), 200.0, 0.5);
  EXPECT_NEAR(gray.at(0, 0, 2), 200.0, 0.5);
}

TEST(Ops, BlurPreservesMassAndFlattens) {
  const ImagePatch src = smooth_blob(15);
  const ImagePatch out = gaussian_blur(src, 1.0);
  double sum_in = 0.0, sum_out = 0.0, peak_in = 0.0, peak_out = 0.0;
  for (size_t i = 0; i < src.pixels.size(); ++i) {
    sum_in += src.pixels[i];
    sum_out += out.pixels[i];
    peak_in = std::max(peak_in, static_cast<double>(src.pixels[i]));
    peak_out = std::max(peak_out, static_cast<double>(out.pixels[i]));
  }
  EXPECT_LT(peak_out, peak_in);
  // Clamped edges keep total brightness within a percent on this image.
  EXPECT_NEAR(sum_out / sum_in, 1.0, 0.01);
  // A constant image is a fixed point.
  ImagePatch flat(6, 6);
  for (size_t i = 0; i < flat.pixels.size(); ++i) flat.pixels[i] = 99.0f;
  const ImagePatch still = gaussian_blur(flat, 0.8);
  for (size_t i = 0; i < flat.pixels.size(); ++i)
    ASSERT_NEAR(still.pixels[i], 99.0f, 1e-3);
}

TEST(Ops, NoiseIsSharedAcrossChannelsAndClipped) {
  ImagePatch mid(8, 8);
  for (size_t i = 0; i < mid.pixels.size(); ++i) mid.pixels[i] = 120.0f;
  RngStream s(31, 9);
  const ImagePatch out = add_gaussian_noise(mid, 10.0, s);
  bool any_change = false;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const float d0 = out.at(y, x, 0) - 120.0f;
      ASSERT_EQ(out.at(y, x, 1) - 120.0f, d0);
      ASSERT_EQ(out.at(y, x, 2) - 120.0f, d0);
      any_change = any_change || d0 != 0.0f;
      ASSERT_GE(out.at(y, x, 0), 0.0f);
      ASSERT_LE(out.at(y, x, 0), 255.0f);
    }
  EXPECT_TRUE(any_change);
}

// ---------------------------------------------------------------------------
// Expansion bookkeeping
// ---------------------------------------------------------------------------

TEST(Expand, FullCorpusWithFourCopiesGives137790Rows) {
  std::vector<ManifestRow> rows(27558);
  for (size_t i = 0; i < rows.size(); ++i) {
    rows[i].path = "img" + std::to_string(i);
    rows[i].label = i < 13779 ? kParasitized : kUninfected;
  }
  const auto expanded = expand_training_set(rows, 4);
  EXPECT_EQ(expanded.size(), 137790u);
  size_t pos = 0, originals = 0;
  for (const auto& er : expanded) {
    pos += er.row.label == kParasitized ? 1 : 0;
    originals += er.variant == 0 ? 1 : 0;
  }
  // Uniform expansion preserves class balance exactly.
  EXPECT_EQ(pos, 13779u * 5);
  EXPECT_EQ(originals, 27558u);
  EXPECT_THROW(expand_training_set(rows, 0), ParameterError);
}

TEST(Expand, VariantStreamsAreReproducibleAndDistinct) {
  const ImagePatch src = random_patch(12, 12, 10);
  std::vector<ManifestRow> rows(3);
  const auto expanded = expand_training_set(rows, 2);
  ASSERT_EQ(expanded.size(), 9u);
  const AugmentPolicy pol;
  // Variant 0 is the untouched source.
  const ImagePatch v0 = realize_expanded(src, expanded[0], pol, 55);
  for (size_t i = 0; i < src.pixels.size(); ++i)
    ASSERT_EQ(v0.pixels[i], src.pixels[i]);
  // Same (seed,row,variant) twice -> identical pixels.
  const ImagePatch a = realize_expanded(src, expanded[1], pol, 55);
  const ImagePatch b = realize_expanded(src, expanded[1], pol, 55);
  for (size_t i = 0; i < a.pixels.size(); ++i) ASSERT_EQ(a.pixels[i], b.pixels[i]);
  // Different variants differ.
  const ImagePatch c = realize_expanded(src, expanded[2], pol, 55);
  double diff = 0.0;
  for (size_t i = 0; i < a.pixels.size(); ++i)
    diff += std::fabs(a.pixels[i] - c.pixels[i]);
  EXPECT_GT(diff, 1.0);
}

}  // namespace
}  // namespace rbcnet
