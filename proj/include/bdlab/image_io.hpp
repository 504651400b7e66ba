#pragma once

// Image persistence: lossless PNG (libpng simplified API) and the raw IMG1
// tensor format:
//
//   offset  size  field
//   0       4     magic "IMG1"
//   4       2     height, u16 little-endian
//   6       2     width, u16 little-endian
//   8       1     channels (1 or 3)
//   9       1     pad, always 0
//   10      H*W*C pixel bytes, row-major, channels interleaved

#include <png.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "bdlab/error.hpp"
#include "bdlab/imaging.hpp"

namespace bdlab {

inline constexpr std::array<char, 4> kImgMagic{'I', 'M', 'G', '1'};
inline constexpr std::size_t kImgHeaderSize = 10;

inline std::vector<std::uint8_t> encode_img1(const Image& img) {
  if (img.height() > 0xFFFF || img.width() > 0xFFFF) throw Error(ErrorCode::invalid_size, "IMG1 dimensions exceed u16");
  std::vector<std::uint8_t> out;
  out.reserve(kImgHeaderSize + img.size());
  out.insert(out.end(), kImgMagic.begin(), kImgMagic.end());
  const auto h = static_cast<std::uint16_t>(img.height());
  const auto w = static_cast<std::uint16_t>(img.width());
  out.push_back(static_cast<std::uint8_t>(h & 0xFF));
  out.push_back(static_cast<std::uint8_t>(h >> 8));
  out.push_back(static_cast<std::uint8_t>(w & 0xFF));
  out.push_back(static_cast<std::uint8_t>(w >> 8));
  out.push_back(static_cast<std::uint8_t>(img.channels()));
  out.push_back(0);
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

inline Image decode_img1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kImgHeaderSize || std::memcmp(bytes.data(), kImgMagic.data(), 4) != 0)
    throw Error(ErrorCode::io, "not an IMG1 buffer");
  const int h = bytes[4] | (bytes[5] << 8);
  const int w = bytes[6] | (bytes[7] << 8);
  const int c = bytes[8];
  const Shape shape{h, w, c};
  validate_shape(shape);
  if (bytes.size() != kImgHeaderSize + shape.size())
    throw Error(ErrorCode::io, "IMG1 payload is " + std::to_string(bytes.size() - kImgHeaderSize) + " bytes, expected " +
                                   std::to_string(shape.size()));
  return Image(shape, std::vector<std::uint8_t>(bytes.begin() + kImgHeaderSize, bytes.end()));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_img1(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_img1(img)); }
inline Image read_img1(const std::filesystem::path& path) { return decode_img1(read_file_bytes(path)); }

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.pixels().data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::io, "PNG write failed for " + path.string() + ": " + msg);
  }
}

/// Reads any PNG; colour sources load as RGB, grey sources as 1 channel.
/// Alpha is composited onto black.
inline Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw Error(ErrorCode::io, "PNG read failed for " + path.string() + ": " + png.message);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const Shape shape{static_cast<int>(png.height), static_cast<int>(png.width), color ? 3 : 1};
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(png));
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&png, &black, px.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::io, "PNG decode failed for " + path.string() + ": " + msg);
  }
  return Image(shape, std::move(px));
}

/// Mask PNG convention: 255 = transparent (true), 0 = opaque. Any value
/// >= 128 reads as transparent.
inline void write_mask_png(const std::filesystem::path& path, const Mask& m) {
  Image img(Shape{m.height, m.width, 1});
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels()[i] = m.bits[i] ? 255 : 0;
  write_png(path, img);
}

inline Mask read_mask_png(const std::filesystem::path& path) {
  const Image img = read_png(path);
  Mask m(img.height(), img.width());
  for (int i = 0; i < img.height(); ++i)
    for (int j = 0; j < img.width(); ++j) m.set(i, j, img.at(i, j, 0) >= 128);
  return m;
}

/// Dispatch on extension: ".img" / ".img1" use IMG1, everything else PNG.
inline Image read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".img" || ext == ".img1") return read_img1(path);
  return read_png(path);
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  const auto ext = path.extension().string();
  if (ext == ".img" || ext == ".img1") return write_img1(path, img);
  write_png(path, img);
}

}  // namespace bdlab
