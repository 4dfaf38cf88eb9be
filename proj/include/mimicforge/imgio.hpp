#pragma once

// PNG and raw-tensor I/O. Link against libpng.

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"

namespace mimicforge::img {

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Reads any PNG; 1-channel stays gray, everything else becomes RGB (alpha dropped).
inline ImageBuf read_png(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw InvalidInput("read_png: no such file " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  // Unreadable header: not a PNG.
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw InvalidInput("read_png: " + path.string() + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw RuntimeFailure("read_png: " + path.string() + ": " + msg);
  }
  ImageBuf out(static_cast<int>(image.height), static_cast<int>(image.width), channels);
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i] / 255.0f;
  return out;
}

inline void write_png(const std::filesystem::path& path, const ImageBuf& img) {
  require_nonempty(img, "write_png");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 1 ? PNG_FORMAT_GRAY
                 : img.channels() == 3 ? PNG_FORMAT_RGB
                                       : PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_u8(img.data()[i]);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw RuntimeFailure("write_png: " + path.string() + ": " + image.message);
}

// Binary mask as a 1-bit grayscale PNG. Any sample >= 0.5 is written as set.
inline void write_mask_png(const std::filesystem::path& path, const ImageBuf& mask) {
  if (mask.channels() != 1) throw InvalidInput("write_mask_png: mask must be single-channel");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw RuntimeFailure("write_mask_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("write_mask_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("write_mask_png: libpng error writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width()), static_cast<png_uint_32>(mask.height()), 1,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row((mask.width() + 7) / 8);
  for (int y = 0; y < mask.height(); ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(y, x) >= 0.5f) row[x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads a mask PNG and thresholds to {0,1} single-channel.
inline ImageBuf read_mask_png(const std::filesystem::path& path) {
  ImageBuf im = to_gray(read_png(path));
  for (auto& v : im.data()) v = v >= 0.5f ? 1.0f : 0.0f;
  return im;
}

// Raw tensor dump: "IMGT", u32 h, u32 w, u32 c, then h*w*c little-endian f32.
namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw RuntimeFailure("unexpected end of stream");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}
inline float get_f32(std::istream& is) {
  std::uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}
}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const ImageBuf& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("write_tensor: cannot open " + path.string());
  os.write("IMGT", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(img.height()));
  detail::put_u32(os, static_cast<std::uint32_t>(img.width()));
  detail::put_u32(os, static_cast<std::uint32_t>(img.channels()));
  for (float v : img.data()) detail::put_f32(os, v);
}

inline ImageBuf read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("read_tensor: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "IMGT", 4) != 0)
    throw InvalidInput("read_tensor: bad magic in " + path.string());
  const auto h = detail::get_u32(is), w = detail::get_u32(is), c = detail::get_u32(is);
  std::vector<float> data(static_cast<std::size_t>(h) * w * c);
  for (auto& v : data) v = detail::get_f32(is);
  return ImageBuf(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(data));
}

}  // namespace mimicforge::img
