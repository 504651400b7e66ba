#pragma once

// Pixel-grid primitives: 8-bit images, float intermediates, clipping,
// deterministic noise, nearest-neighbour resizing and patch placement.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bdlab/error.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

inline void validate_shape(const Shape& s) {
  if (s.height < 1 || s.width < 1) throw Error(ErrorCode::invalid_size, "image dimensions must be positive, got " + s.str());
  if (s.channels != 1 && s.channels != 3) throw Error(ErrorCode::invalid_size, "channels must be 1 or 3, got " + s.str());
}

/// H x W x C grid of 8-bit values, row-major with interleaved channels.
/// The uint8 storage makes the [0,255] range invariant structural.
class Image {
 public:
  Image() = default;
  explicit Image(Shape shape, std::uint8_t fill = 0) : shape_(shape) {
    validate_shape(shape_);
    pixels_.assign(shape_.size(), fill);
  }
  Image(Shape shape, std::vector<std::uint8_t> pixels) : shape_(shape), pixels_(std::move(pixels)) {
    validate_shape(shape_);
    if (pixels_.size() != shape_.size())
      throw Error(ErrorCode::shape, "pixel buffer holds " + std::to_string(pixels_.size()) + " values, shape " +
                                        shape_.str() + " needs " + std::to_string(shape_.size()));
  }

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  std::size_t index(int row, int col, int ch = 0) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(shape_.width) + static_cast<std::size_t>(col)) *
               static_cast<std::size_t>(shape_.channels) +
           static_cast<std::size_t>(ch);
  }
  std::uint8_t at(int row, int col, int ch = 0) const { return pixels_[index(row, col, ch)]; }
  std::uint8_t& at(int row, int col, int ch = 0) { return pixels_[index(row, col, ch)]; }

  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  std::vector<std::uint8_t>& pixels() { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  Shape shape_{};
  std::vector<std::uint8_t> pixels_;
};

/// Unbounded real-valued image, the intermediate before clip().
struct FloatImage {
  Shape shape{};
  std::vector<double> pixels;

  FloatImage() = default;
  explicit FloatImage(Shape s, double fill = 0.0) : shape(s), pixels(s.size(), fill) {}
};

struct NoiseField {
  Shape shape{};
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> values;
};

/// H x W boolean grid (one entry per pixel position, shared by all channels).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w, bool fill = false)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill ? 1 : 0) {}

  bool at(int row, int col) const { return bits[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)] != 0; }
  void set(int row, int col, bool v) {
    bits[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)] = v ? 1 : 0;
  }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }
  bool all() const { return count() == bits.size(); }
  bool none() const { return count() == 0; }
  bool operator==(const Mask&) const = default;
};

inline FloatImage to_float(const Image& img) {
  FloatImage out(img.shape());
  std::transform(img.pixels().begin(), img.pixels().end(), out.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return out;
}

/// Round half away from zero, then clamp into [0,255]. Non-finite values
/// clamp by sign (NaN maps to 0).
inline std::uint8_t clip_value(double v) {
  if (std::isnan(v)) return 0;
  const double r = std::round(v);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

inline Image clip(const FloatImage& img) {
  validate_shape(img.shape);
  if (img.pixels.size() != img.shape.size()) throw Error(ErrorCode::shape, "float image buffer does not match its shape");
  std::vector<std::uint8_t> px(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), px.begin(), clip_value);
  return Image(img.shape, std::move(px));
}

inline NoiseField uniform_noise(Shape shape, double lo, double hi, Rng rng) {
  if (!(lo <= hi)) throw Error(ErrorCode::invalid_range, "noise bounds lo > hi");
  NoiseField f{shape, lo, hi, std::vector<double>(shape.size())};
  for (double& v : f.values) v = rng.uniform(lo, hi);
  return f;
}

inline FloatImage add(const FloatImage& a, const NoiseField& n) {
  if (!(a.shape == n.shape)) throw Error(ErrorCode::shape, "noise shape " + n.shape.str() + " vs image " + a.shape.str());
  FloatImage out = a;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] += n.values[i];
  return out;
}

/// Output (i,j) copies source (floor(i*H/H'), floor(j*W/W')).
inline Image resize_nearest(const Image& img, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw Error(ErrorCode::invalid_size, "resize target must be at least 1x1");
  const int c = img.channels();
  Image out(Shape{target_h, target_w, c});
  for (int i = 0; i < target_h; ++i) {
    const int si = static_cast<int>(static_cast<long long>(i) * img.height() / target_h);
    for (int j = 0; j < target_w; ++j) {
      const int sj = static_cast<int>(static_cast<long long>(j) * img.width() / target_w);
      for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = img.at(si, sj, ch);
    }
  }
  return out;
}

inline Mask resize_nearest(const Mask& m, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw Error(ErrorCode::invalid_size, "resize target must be at least 1x1");
  Mask out(target_h, target_w);
  for (int i = 0; i < target_h; ++i) {
    const int si = static_cast<int>(static_cast<long long>(i) * m.height / target_h);
    for (int j = 0; j < target_w; ++j) {
      const int sj = static_cast<int>(static_cast<long long>(j) * m.width / target_w);
      out.set(i, j, m.at(si, sj));
    }
  }
  return out;
}

struct Anchor {
  int row = 0;
  int col = 0;
  bool operator==(const Anchor&) const = default;
};

struct Placement {
  Image overlay;  // canvas-sized; patch pixels on the footprint, zero elsewhere
  Mask coverage;  // true exactly on the footprint
};

inline Placement place_at(Shape canvas, const Image& patch, Anchor anchor) {
  validate_shape(canvas);
  if (patch.channels() != canvas.channels)
    throw Error(ErrorCode::shape, "patch has " + std::to_string(patch.channels()) + " channels, canvas " +
                                      std::to_string(canvas.channels));
  if (anchor.row < 0 || anchor.col < 0 || anchor.row + patch.height() > canvas.height ||
      anchor.col + patch.width() > canvas.width)
    throw Error(ErrorCode::placement, "patch " + patch.shape().str() + " at (" + std::to_string(anchor.row) + "," +
                                          std::to_string(anchor.col) + ") does not fit canvas " + canvas.str());
  Placement p{Image(canvas), Mask(canvas.height, canvas.width)};
  for (int i = 0; i < patch.height(); ++i) {
    for (int j = 0; j < patch.width(); ++j) {
      p.coverage.set(anchor.row + i, anchor.col + j, true);
      for (int ch = 0; ch < canvas.channels; ++ch) p.overlay.at(anchor.row + i, anchor.col + j, ch) = patch.at(i, j, ch);
    }
  }
  return p;
}

/// Number of pixel values (over all channels) that differ.
inline std::size_t count_differing_values(const Image& a, const Image& b) {
  if (!(a.shape() == b.shape())) throw Error(ErrorCode::shape, "shape mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.pixels()[i] != b.pixels()[i];
  return n;
}

}  // namespace bdlab
