#include "crowdlab/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace crowdlab::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(
      std::clamp(std::lround(v * 255.0), 0l, 255l));
}

void write_png(const std::string& path, const std::vector<std::uint8_t>& rows,
               int h, int w, int channels) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError(cat("cannot open ", path, " for writing"));
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(cat("libpng error while writing ", path));
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(h));
  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  for (int y = 0; y < h; ++y)
    ptrs[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(rows.data() + stride * static_cast<std::size_t>(y));
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  std::vector<std::uint8_t> bytes;
  int h = 0, w = 0, channels = 0;
};

Decoded read_png(const std::string& path, int want_channels) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError(cat("cannot open ", path, " for reading"));
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(cat("libpng error while reading ", path));
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (want_channels == 3)
    png_set_gray_to_rgb(png);
  else
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  Decoded d;
  d.h = static_cast<int>(png_get_image_height(png, info));
  d.w = static_cast<int>(png_get_image_width(png, info));
  d.channels = want_channels;
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(d.w) * want_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(cat("unexpected row stride in ", path));
  }
  d.bytes.resize(stride * static_cast<std::size_t>(d.h));
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(d.h));
  for (int y = 0; y < d.h; ++y)
    ptrs[static_cast<std::size_t>(y)] =
        d.bytes.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

void write_rgb8(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError(cat("write_rgb8 expects (3,H,W), got ", shape_str(image)));
  const int h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            to_u8(image.at(c, y, x));
  write_png(path, rows, h, w, 3);
}

Tensor read_rgb8(const std::string& path) {
  const Decoded d = read_png(path, 3);
  Tensor t({3, d.h, d.w});
  for (int y = 0; y < d.h; ++y)
    for (int x = 0; x < d.w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) =
            d.bytes[(static_cast<std::size_t>(y) * d.w + x) * 3 + c] / 255.0;
  return t;
}

void write_gray8(const std::string& path, const Tensor& image) {
  if (image.rank() != 2)
    throw ShapeError(cat("write_gray8 expects (H,W), got ", shape_str(image)));
  const int h = image.dim(0), w = image.dim(1);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      rows[static_cast<std::size_t>(y) * w + x] = to_u8(image.at(y, x));
  write_png(path, rows, h, w, 1);
}

Tensor read_gray8(const std::string& path) {
  const Decoded d = read_png(path, 1);
  Tensor t({d.h, d.w});
  for (int y = 0; y < d.h; ++y)
    for (int x = 0; x < d.w; ++x)
      t.at(y, x) = d.bytes[static_cast<std::size_t>(y) * d.w + x] / 255.0;
  return t;
}

}  // namespace crowdlab::io
