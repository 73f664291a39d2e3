#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

// Class labels used throughout the pipeline: the positive class is a
// parasitized cell.
inline constexpr int kUninfected = 0;
inline constexpr int kParasitized = 1;

inline const char* label_name(int label) {
  if (label == kParasitized) return "parasitized";
  if (label == kUninfected) return "uninfected";
  throw ParameterError("label must be 0 or 1, got " + std::to_string(label));
}

// ---------------------------------------------------------------------------
// ImagePatch: one segmented cell image in HWC float layout. Pixel values live
// on the 8-bit scale [0, 255] from ingest until a preprocessing transform
// maps them elsewhere; exactly 3 channels always.
// ---------------------------------------------------------------------------

struct ImagePatch {
  Tensor<float> pixels;  // (H, W, 3)
  int label = kUninfected;
  std::string patient_id;
  std::string source_path;

  ImagePatch() = default;
  ImagePatch(int h, int w) : pixels({h, w, 3}) {}

  int height() const { return pixels.rank() == 3 ? pixels.dim(0) : 0; }
  int width() const { return pixels.rank() == 3 ? pixels.dim(1) : 0; }

  float& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width() + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width() + x) * 3 + c];
  }
};

inline void require_patch(const ImagePatch& p, const char* op) {
  if (p.pixels.rank() != 3 || p.pixels.dim(2) != 3 || p.height() < 1 ||
      p.width() < 1)
    throw FormatError(std::string(op) + " needs a nonempty HxWx3 patch");
}

// ---------------------------------------------------------------------------
// PNG and binary-PPM ingest/export. Everything is converted to 8-bit RGB on
// read (palette expanded, alpha dropped, 16-bit narrowed); writes clamp and
// round the float pixels back to 8 bits.
// ---------------------------------------------------------------------------

namespace img_detail {

struct FileHandle {
  std::FILE* f = nullptr;
  explicit FileHandle(std::FILE* file) : f(file) {}
  ~FileHandle() {
    if (f) std::fclose(f);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

inline ImagePatch read_png(std::FILE* f, const std::string& path) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("png reader allocation failed for " + path);
  }
  std::vector<png_byte> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt png: " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png did not decode to 8-bit RGB: " + path);
  }

  data.resize(static_cast<size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = data.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  ImagePatch patch(static_cast<int>(h), static_cast<int>(w));
  for (size_t i = 0; i < data.size(); ++i)
    patch.pixels[i] = static_cast<float>(data[i]);
  patch.source_path = path;
  return patch;
}

inline ImagePatch read_ppm(std::FILE* f, const std::string& path) {
  auto next_token = [&]() -> long {
    int ch = std::fgetc(f);
    while (ch != EOF) {
      if (ch == '#') {
        while (ch != EOF && ch != '\n') ch = std::fgetc(f);
      } else if (!std::isspace(ch)) {
        break;
      }
      ch = std::fgetc(f);
    }
    if (ch == EOF) throw FormatError("truncated ppm header: " + path);
    long v = 0;
    while (ch != EOF && std::isdigit(ch)) {
      v = v * 10 + (ch - '0');
      ch = std::fgetc(f);
    }
    return v;
  };
  char magic[3] = {};
  if (std::fread(magic, 1, 2, f) != 2 || std::strncmp(magic, "P6", 2) != 0)
    throw FormatError("not a binary ppm: " + path);
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w < 1 || h < 1 || maxval != 255)
    throw FormatError("unsupported ppm geometry in " + path);
  std::vector<uint8_t> data(static_cast<size_t>(w) * h * 3);
  if (std::fread(data.data(), 1, data.size(), f) != data.size())
    throw FormatError("truncated ppm payload: " + path);
  ImagePatch patch(static_cast<int>(h), static_cast<int>(w));
  for (size_t i = 0; i < data.size(); ++i)
    patch.pixels[i] = static_cast<float>(data[i]);
  patch.source_path = path;
  return patch;
}

inline uint8_t to_byte(float v) {
  return static_cast<uint8_t>(
      std::lround(std::min(255.0f, std::max(0.0f, v))));
}

}  // namespace img_detail

inline ImagePatch read_image(const std::string& path) {
  img_detail::FileHandle fh(std::fopen(path.c_str(), "rb"));
  if (!fh.f) throw LoadError("cannot open image: " + path);
  unsigned char magic[8] = {};
  const size_t got = std::fread(magic, 1, 8, fh.f);
  std::rewind(fh.f);
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G',
                                           0x0d, 0x0a, 0x1a, 0x0a};
  if (got == 8 && std::memcmp(magic, png_sig, 8) == 0)
    return img_detail::read_png(fh.f, path);
  if (got >= 2 && magic[0] == 'P' && magic[1] == '6')
    return img_detail::read_ppm(fh.f, path);
  throw FormatError("unrecognized image format: " + path);
}

inline void write_png(const std::string& path, const ImagePatch& patch) {
  require_patch(patch, "write_png");
  img_detail::FileHandle fh(std::fopen(path.c_str(), "wb"));
  if (!fh.f) throw LoadError("cannot create image: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw LoadError("png writer allocation failed for " + path);
  }
  std::vector<png_byte> row(static_cast<size_t>(patch.width()) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw LoadError("png write failed: " + path);
  }
  png_init_io(png, fh.f);
  png_set_IHDR(png, info, patch.width(), patch.height(), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < patch.height(); ++y) {
    for (int x = 0; x < patch.width(); ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] =
            img_detail::to_byte(patch.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_ppm(const std::string& path, const ImagePatch& patch) {
  require_patch(patch, "write_ppm");
  img_detail::FileHandle fh(std::fopen(path.c_str(), "wb"));
  if (!fh.f) throw LoadError("cannot create image: " + path);
  std::fprintf(fh.f, "P6\n%d %d\n255\n", patch.width(), patch.height());
  std::vector<uint8_t> data(patch.pixels.size());
  for (size_t i = 0; i < data.size(); ++i)
    data[i] = img_detail::to_byte(patch.pixels[i]);
  if (std::fwrite(data.data(), 1, data.size(), fh.f) != data.size())
    throw LoadError("short write: " + path);
}

// ---------------------------------------------------------------------------
// Bilinear resampling with endpoint-anchored coordinates: output corner
// pixels sample the source corners exactly, and a same-size resample is the
// identity. This is the canonical "re-sample everything to 200x200" step.
// ---------------------------------------------------------------------------

inline ImagePatch resample_bilinear(const ImagePatch& src, int out_h,
                                    int out_w) {
  require_patch(src, "resample_bilinear");
  if (out_h < 1 || out_w < 1)
    throw FormatError("resample target must be positive");
  const int ih = src.height(), iw = src.width();
  ImagePatch dst(out_h, out_w);
  dst.label = src.label;
  dst.patient_id = src.patient_id;
  dst.source_path = src.source_path;

  const double sy = out_h > 1 ? double(ih - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? double(iw - 1) / (out_w - 1) : 0.0;
  for (int y = 0; y < out_h; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(ih - 1, static_cast<int>(fy));
    const int y1 = std::min(ih - 1, y0 + 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(iw - 1, static_cast<int>(fx));
      const int x1 = std::min(iw - 1, x0 + 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top =
            (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot =
            (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

inline ImagePatch resample_to(const ImagePatch& src, int target) {
  return resample_bilinear(src, target, target);
}

// ---------------------------------------------------------------------------
// HWC patch <-> NCHW tensor conversion for the network input side.
// ---------------------------------------------------------------------------

inline Tensor<float> to_chw(const ImagePatch& patch) {
  require_patch(patch, "to_chw");
  const int h = patch.height(), w = patch.width();
  Tensor<float> out({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<size_t>(c) * h + y) * w + x] = patch.at(y, x, c);
  return out;
}

inline ImagePatch from_chw(const Tensor<float>& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3)
    throw ShapeError("from_chw expects a (3,H,W) tensor, got " +
                     chw.shape_str());
  const int h = chw.dim(1), w = chw.dim(2);
  ImagePatch patch(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        patch.at(y, x, c) = chw[(static_cast<size_t>(c) * h + y) * w + x];
  return patch;
}

// Stacks equally-sized patches into one (N,3,H,W) batch.
inline Tensor<float> make_batch(const std::vector<ImagePatch>& patches) {
  if (patches.empty()) throw ShapeError("make_batch needs >= 1 patch");
  const int h = patches[0].height(), w = patches[0].width();
  Tensor<float> out({static_cast<int>(patches.size()), 3, h, w});
  const size_t plane = static_cast<size_t>(3) * h * w;
  for (size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].height() != h || patches[i].width() != w)
      throw ShapeError("make_batch patch size mismatch at index " +
                       std::to_string(i));
    Tensor<float> chw = to_chw(patches[i]);
    std::copy(chw.storage().begin(), chw.storage().end(),
              out.storage().begin() + static_cast<long>(i * plane));
  }
  return out;
}

}  // namespace rbcnet
