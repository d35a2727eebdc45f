#pragma once

#include <png.h>

#include <cstdio>
#include <string>

#include "dmgn/tensor.hpp"

// 8-bit PNG in/out for [C,H,W] images with C in {1,3}. Values are quantized
// to 1/255 steps on write, so write-then-read is exact for already-quantized
// images.

namespace dmgn {

inline unsigned char quantize_u8(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

inline float dequantize_u8(unsigned char b) { return static_cast<float>(b) / 255.0f; }

// Snaps every value to the nearest representable 8-bit level.
inline Tensor<float> quantize_image(const Tensor<float>& img) {
  Tensor<float> out(img.shape());
  for (int i = 0; i < img.numel(); ++i) out[i] = dequantize_u8(quantize_u8(img[i]));
  return out;
}

inline void write_png(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw ShapeError("write_png: image must be [1,H,W] or [3,H,W], got " + shape_str(img.shape()));
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);

  std::vector<png_byte> bytes(static_cast<size_t>(H) * W * C);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c)
        bytes[(static_cast<size_t>(h) * W + w) * C + c] = quantize_u8(img[(c * H + h) * W + w]);

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int h = 0; h < H; ++h) png_write_row(png, bytes.data() + static_cast<size_t>(h) * W * C);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Tensor<float> read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw IoError("corrupt or unreadable png: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int W = static_cast<int>(png_get_image_width(png, info));
  const int H = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("unsupported png format (want 8-bit RGB or gray): " + path);
  }
  const int C = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
  std::vector<png_byte> bytes(static_cast<size_t>(H) * W * C);
  for (int h = 0; h < H; ++h) png_read_row(png, bytes.data() + static_cast<size_t>(h) * W * C, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor<float> img(Shape{C, H, W});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c)
        img[(c * H + h) * W + w] = dequantize_u8(bytes[(static_cast<size_t>(h) * W + w) * C + c]);
  return img;
}

}  // namespace dmgn
