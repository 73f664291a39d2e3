#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/manifest.hpp"
#include "rbcnet/rng.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Augmentation policy: the sampling ranges for every transform. Contrast,
// crop fraction, rotation, translation and shear carry the published ranges;
// the color-jitter and blur strengths are declared here because only the
// operations themselves are prescribed. Blur and color jitter fire with
// probability 0.5 each; all transforms are applied in a randomized order.
// ---------------------------------------------------------------------------

struct AugmentPolicy {
  double flip_prob = 0.5;       // horizontal and vertical, independently
  double contrast_lo = 0.5;
  double contrast_hi = 1.5;
  double crop_lo = 0.0;         // fraction of extent removed before resample
  double crop_hi = 0.2;
  double rotate_deg = 25.0;     // sampled in (-rotate_deg, +rotate_deg)
  double translate_frac = 0.2;  // of extent, per axis
  double shear_deg = 25.0;
  double color_prob = 0.5;      // HSV round-trip jitter
  double hue_deg = 15.0;
  double sat_lo = 0.7;
  double sat_hi = 1.3;
  double blur_prob = 0.5;
  double blur_sigma_lo = 0.5;
  double blur_sigma_hi = 1.0;
  double noise_sigma_hi = 0.05 * 255.0;  // per-pixel gaussian, sigma in (0, hi)
  bool featurewise_standardize = false;  // dataset-level, applied by harness
  bool zca_whiten = false;               // dataset-level, applied by harness

  // Every range collapsed to its identity value: augmenting with this policy
  // is a pixel-exact no-op.
  static AugmentPolicy identity() {
    AugmentPolicy p;
    p.flip_prob = 0.0;
    p.contrast_lo = p.contrast_hi = 1.0;
    p.crop_lo = p.crop_hi = 0.0;
    p.rotate_deg = 0.0;
    p.translate_frac = 0.0;
    p.shear_deg = 0.0;
    p.color_prob = 0.0;
    p.hue_deg = 0.0;
    p.sat_lo = p.sat_hi = 1.0;
    p.blur_prob = 0.0;
    p.noise_sigma_hi = 0.0;
    return p;
  }
};

// The ten transform slots, in their fixed identity numbering; application
// order is a sampled permutation of these.
enum class AugOp : int {
  hflip = 0,
  vflip = 1,
  contrast = 2,
  crop = 3,
  rotate = 4,
  translate = 5,
  shear = 6,
  color = 7,
  blur = 8,
  noise = 9,
};
inline constexpr int kAugOpCount = 10;

// One concrete draw from a policy: everything needed to transform a patch
// except the per-pixel noise values themselves.
struct SampledAugment {
  std::array<int, kAugOpCount> order{};
  bool hflip = false;
  bool vflip = false;
  double contrast = 1.0;
  double crop_frac = 0.0;
  double crop_ox = 0.0;  // window position within the freed margin, [0,1)
  double crop_oy = 0.0;
  double rotate_deg = 0.0;
  double translate_x = 0.0;  // fraction of extent
  double translate_y = 0.0;
  double shear_deg = 0.0;
  bool do_color = false;
  double hue_shift_deg = 0.0;
  double sat_scale = 1.0;
  bool do_blur = false;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
};

namespace aug_detail {

// Collapsed ranges (lo == hi) are legal in a policy and mean "fixed value";
// they consume no draw so identity policies stay cheap.
inline double uniform_or(RngStream& s, double lo, double hi) {
  return lo == hi ? lo : s.uniform(lo, hi);
}

inline bool bernoulli_or(RngStream& s, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return s.bernoulli(p);
}

}  // namespace aug_detail

inline SampledAugment draw_augment(const AugmentPolicy& policy,
                                   RngStream& stream) {
  SampledAugment s;
  std::vector<int> order(kAugOpCount);
  for (int i = 0; i < kAugOpCount; ++i) order[static_cast<size_t>(i)] = i;
  stream.shuffle(order);
  std::copy(order.begin(), order.end(), s.order.begin());

  s.hflip = aug_detail::bernoulli_or(stream, policy.flip_prob);
  s.vflip = aug_detail::bernoulli_or(stream, policy.flip_prob);
  s.contrast =
      aug_detail::uniform_or(stream, policy.contrast_lo, policy.contrast_hi);
  s.crop_frac = aug_detail::uniform_or(stream, policy.crop_lo, policy.crop_hi);
  if (s.crop_frac > 0.0) {
    s.crop_ox = stream.uniform(0.0, 1.0);
    s.crop_oy = stream.uniform(0.0, 1.0);
  }
  s.rotate_deg =
      aug_detail::uniform_or(stream, -policy.rotate_deg, policy.rotate_deg);
  s.translate_x = aug_detail::uniform_or(stream, -policy.translate_frac,
                                         policy.translate_frac);
  s.translate_y = aug_detail::uniform_or(stream, -policy.translate_frac,
                                         policy.translate_frac);
  s.shear_deg =
      aug_detail::uniform_or(stream, -policy.shear_deg, policy.shear_deg);
  s.do_color = aug_detail::bernoulli_or(stream, policy.color_prob);
  if (s.do_color) {
    s.hue_shift_deg =
        aug_detail::uniform_or(stream, -policy.hue_deg, policy.hue_deg);
    s.sat_scale = aug_detail::uniform_or(stream, policy.sat_lo, policy.sat_hi);
  }
  s.do_blur = aug_detail::bernoulli_or(stream, policy.blur_prob);
  if (s.do_blur)
    s.blur_sigma = aug_detail::uniform_or(stream, policy.blur_sigma_lo,
                                          policy.blur_sigma_hi);
  s.noise_sigma = aug_detail::uniform_or(stream, 0.0, policy.noise_sigma_hi);
  return s;
}

// ---------------------------------------------------------------------------
// Individual transforms. All preserve size, label and metadata; geometric
// resampling fills regions pulled in from outside the frame with black.
// ---------------------------------------------------------------------------

inline ImagePatch flip_h(const ImagePatch& src) {
  require_patch(src, "flip_h");
  ImagePatch out = src;
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = src.at(y, src.width() - 1 - x, c);
  return out;
}

inline ImagePatch flip_v(const ImagePatch& src) {
  require_patch(src, "flip_v");
  ImagePatch out = src;
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = src.at(src.height() - 1 - y, x, c);
  return out;
}

// Scales pixel deviations from the image's mean intensity; alpha > 1 spreads
// the histogram, alpha < 1 flattens it.
inline ImagePatch adjust_contrast(const ImagePatch& src, double alpha) {
  require_patch(src, "adjust_contrast");
  double mean = 0.0;
  for (size_t i = 0; i < src.pixels.size(); ++i) mean += src.pixels[i];
  mean /= static_cast<double>(src.pixels.size());
  ImagePatch out = src;
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = mean + alpha * (src.pixels[i] - mean);
    out.pixels[i] = static_cast<float>(std::min(255.0, std::max(0.0, v)));
  }
  return out;
}

// Cuts a window of (1-frac) of each extent at a position chosen by
// (ox, oy) in [0,1] within the freed margin, then resamples back to the
// original size so shapes stay uniform.
inline ImagePatch crop_resample(const ImagePatch& src, double frac, double ox,
                                double oy) {
  require_patch(src, "crop_resample");
  if (frac < 0.0 || frac >= 1.0)
    throw RangeError("crop fraction must be in [0,1): " + std::to_string(frac));
  const int h = src.height(), w = src.width();
  const int ch = std::max(1, static_cast<int>(std::lround((1.0 - frac) * h)));
  const int cw = std::max(1, static_cast<int>(std::lround((1.0 - frac) * w)));
  const int y0 = static_cast<int>(std::lround(oy * (h - ch)));
  const int x0 = static_cast<int>(std::lround(ox * (w - cw)));
  ImagePatch window(ch, cw);
  window.label = src.label;
  window.patient_id = src.patient_id;
  window.source_path = src.source_path;
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c)
        window.at(y, x, c) = src.at(y0 + y, x0 + x, c);
  return resample_bilinear(window, h, w);
}

// Core inverse-mapped affine resampler: for each output pixel, samples the
// source at m * (out - center) + center with bilinear weights; source
// coordinates outside the frame contribute black.
inline ImagePatch affine_sample(const ImagePatch& src, const double m[4]) {
  require_patch(src, "affine_sample");
  const int h = src.height(), w = src.width();
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  ImagePatch out = src;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double fy = m[0] * dy + m[1] * dx + cy;
      const double fx = m[2] * dy + m[3] * dx + cx;
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      const double wy = fy - y0, wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            const int sy = y0 + ky, sx = x0 + kx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            const double wgt =
                (ky ? wy : 1.0 - wy) * (kx ? wx : 1.0 - wx);
            acc += wgt * src.at(sy, sx, c);
          }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  return out;
}

// Rotates image content counter-clockwise by `deg` about the center.
inline ImagePatch rotate_patch(const ImagePatch& src, double deg) {
  const double rad = deg * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  // inverse rotation in (row, col) coordinates
  const double m[4] = {c, s, -s, c};
  return affine_sample(src, m);
}

// Shifts content by the given fractions of each extent (positive = right or
// down), with whole-pixel shifts staying exact.
inline ImagePatch translate_patch(const ImagePatch& src, double x_frac,
                                  double y_frac) {
  require_patch(src, "translate_patch");
  const int h = src.height(), w = src.width();
  const double tx = x_frac * w, ty = y_frac * h;
  ImagePatch out = src;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fy = y - ty, fx = x - tx;
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      const double wy = fy - y0, wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            const int sy = y0 + ky, sx = x0 + kx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            acc += (ky ? wy : 1.0 - wy) * (kx ? wx : 1.0 - wx) *
                   src.at(sy, sx, c);
          }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  return out;
}

// Horizontal shear about the center: rows slide sideways proportionally to
// their distance from the middle, by tan(deg).
inline ImagePatch shear_patch(const ImagePatch& src, double deg) {
  const double t = std::tan(deg * M_PI / 180.0);
  // forward: x' = x + t*(y - cy)  =>  inverse: x = x' - t*(y - cy)
  const double m[4] = {1.0, 0.0, -t, 1.0};
  return affine_sample(src, m);
}

namespace aug_detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s,
                       double& v) {
  r /= 255.0;
  g /= 255.0;
  b /= 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx <= 0.0 ? 0.0 : d / mx;
  if (d <= 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g,
                       double& b) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0, gg = 0, bb = 0;
  switch (static_cast<int>(hp)) {
    case 0: rr = c; gg = x; break;
    case 1: rr = x; gg = c; break;
    case 2: gg = c; bb = x; break;
    case 3: gg = x; bb = c; break;
    case 4: rr = x; bb = c; break;
    default: rr = c; bb = x; break;
  }
  const double m = v - c;
  r = (rr + m) * 255.0;
  g = (gg + m) * 255.0;
  b = (bb + m) * 255.0;
}

}  // namespace aug_detail

// Color jitter through an HSV round trip: hue shifted in degrees, saturation
// scaled (clamped to [0,1]), value untouched.
inline ImagePatch hsv_jitter(const ImagePatch& src, double hue_shift_deg,
                             double sat_scale) {
  require_patch(src, "hsv_jitter");
  ImagePatch out = src;
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      double h, s, v, r, g, b;
      aug_detail::rgb_to_hsv(src.at(y, x, 0), src.at(y, x, 1), src.at(y, x, 2),
                             h, s, v);
      h += hue_shift_deg;
      s = std::min(1.0, std::max(0.0, s * sat_scale));
      aug_detail::hsv_to_rgb(h, s, v, r, g, b);
      out.at(y, x, 0) = static_cast<float>(std::min(255.0, std::max(0.0, r)));
      out.at(y, x, 1) = static_cast<float>(std::min(255.0, std::max(0.0, g)));
      out.at(y, x, 2) = static_cast<float>(std::min(255.0, std::max(0.0, b)));
    }
  return out;
}

// Separable gaussian blur, kernel radius 2*sigma rounded up, edges clamped.
inline ImagePatch gaussian_blur(const ImagePatch& src, double sigma) {
  require_patch(src, "gaussian_blur");
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] =
        std::exp(-0.5 * (i / sigma) * (i / sigma));
    norm += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= norm;

  const int h = src.height(), w = src.width();
  ImagePatch tmp = src, out = src;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sx = std::min(w - 1, std::max(0, x + i));
          acc += k[static_cast<size_t>(i + radius)] * src.at(y, sx, c);
        }
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sy = std::min(h - 1, std::max(0, y + i));
          acc += k[static_cast<size_t>(i + radius)] * tmp.at(sy, x, c);
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

// Additive gaussian pixel noise: one draw per pixel location, shared by the
// three channels, clipped back to the byte range.
inline ImagePatch add_gaussian_noise(const ImagePatch& src, double sigma,
                                     RngStream& stream) {
  require_patch(src, "add_gaussian_noise");
  if (sigma <= 0.0) return src;
  ImagePatch out = src;
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      const double noise = stream.normal(0.0, sigma);
      for (int c = 0; c < 3; ++c) {
        const double v = src.at(y, x, c) + noise;
        out.at(y, x, c) =
            static_cast<float>(std::min(255.0, std::max(0.0, v)));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Full augmentation of one sample: transforms run in the sampled order, each
// skipped exactly when its parameters are the identity, so a collapsed
// policy changes nothing — bit for bit.
// ---------------------------------------------------------------------------

inline ImagePatch apply_augment(const ImagePatch& patch,
                                const SampledAugment& s, RngStream& stream) {
  ImagePatch cur = patch;
  for (int op_id : s.order) {
    switch (static_cast<AugOp>(op_id)) {
      case AugOp::hflip:
        if (s.hflip) cur = flip_h(cur);
        break;
      case AugOp::vflip:
        if (s.vflip) cur = flip_v(cur);
        break;
      case AugOp::contrast:
        if (s.contrast != 1.0) cur = adjust_contrast(cur, s.contrast);
        break;
      case AugOp::crop:
        if (s.crop_frac > 0.0)
          cur = crop_resample(cur, s.crop_frac, s.crop_ox, s.crop_oy);
        break;
      case AugOp::rotate:
        if (s.rotate_deg != 0.0) cur = rotate_patch(cur, s.rotate_deg);
        break;
      case AugOp::translate:
        if (s.translate_x != 0.0 || s.translate_y != 0.0)
          cur = translate_patch(cur, s.translate_x, s.translate_y);
        break;
      case AugOp::shear:
        if (s.shear_deg != 0.0) cur = shear_patch(cur, s.shear_deg);
        break;
      case AugOp::color:
        if (s.do_color) cur = hsv_jitter(cur, s.hue_shift_deg, s.sat_scale);
        break;
      case AugOp::blur:
        if (s.do_blur) cur = gaussian_blur(cur, s.blur_sigma);
        break;
      case AugOp::noise:
        if (s.noise_sigma > 0.0)
          cur = add_gaussian_noise(cur, s.noise_sigma, stream);
        break;
    }
  }
  cur.label = patch.label;
  cur.patient_id = patch.patient_id;
  cur.source_path = patch.source_path;
  return cur;
}

inline ImagePatch augment_sample(const ImagePatch& patch,
                                 const AugmentPolicy& policy,
                                 RngStream& stream) {
  const SampledAugment s = draw_augment(policy, stream);
  return apply_augment(patch, s, stream);
}

// ---------------------------------------------------------------------------
// Training-set expansion: each manifest row yields the original (variant 0)
// plus `copies` augmented variants. Variants carry their own derived random
// stream, a pure function of (seed, source row, variant), so expansion is
// order-independent and reproducible; per-class counts scale uniformly.
// ---------------------------------------------------------------------------

struct ExpandedRow {
  size_t source_row = 0;
  int variant = 0;  // 0 = original image, 1..copies = augmented
  ManifestRow row;
};

inline RngStream augment_stream(uint64_t seed, size_t source_row,
                                int variant) {
  return RngStream(seed, 0x617567)  // augmentation stream family
      .substream(source_row)
      .substream(static_cast<uint64_t>(variant));
}

inline std::vector<ExpandedRow> expand_training_set(
    const std::vector<ManifestRow>& rows, int copies) {
  if (copies < 1)
    throw ParameterError("expand_training_set needs copies >= 1, got " +
                         std::to_string(copies));
  std::vector<ExpandedRow> out;
  out.reserve(rows.size() * static_cast<size_t>(copies + 1));
  for (size_t i = 0; i < rows.size(); ++i)
    for (int v = 0; v <= copies; ++v)
      out.push_back(ExpandedRow{i, v, rows[i]});
  return out;
}

// Materializes one expanded row: variant 0 is the source patch untouched,
// higher variants are seeded augmentations of it.
inline ImagePatch realize_expanded(const ImagePatch& source,
                                   const ExpandedRow& er,
                                   const AugmentPolicy& policy,
                                   uint64_t seed) {
  if (er.variant == 0) return source;
  RngStream stream = augment_stream(seed, er.source_row, er.variant);
  return augment_sample(source, policy, stream);
}

}  // namespace rbcnet
