#pragma once

// Backdoor keys, the noise-based instance generator for input-instance
// keys, and the three pattern-injection functions (blend, accessory,
// blended accessory) used to craft poisoning samples and backdoor
// instances.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bdlab/error.hpp"
#include "bdlab/imaging.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

using Label = int;

enum class Strategy { input_instance, blended, accessory, blended_accessory };

constexpr std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::input_instance: return "input-instance";
    case Strategy::blended: return "blended";
    case Strategy::accessory: return "accessory";
    case Strategy::blended_accessory: return "blended-accessory";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "input-instance" || s == "iik") return Strategy::input_instance;
  if (s == "blended" || s == "blend") return Strategy::blended;
  if (s == "accessory") return Strategy::accessory;
  if (s == "blended-accessory" || s == "ba") return Strategy::blended_accessory;
  throw Error(ErrorCode::config, "unknown strategy '" + std::string(s) + "'");
}

constexpr bool is_pattern_strategy(Strategy s) { return s != Strategy::input_instance; }
constexpr bool uses_alpha(Strategy s) { return s == Strategy::blended || s == Strategy::blended_accessory; }

struct InputInstanceKey {
  Image key_image;
  double noise_bound = 5.0;
  // Ground-truth label of the key image when known; -1 otherwise.
  Label source_label = -1;

  bool operator==(const InputInstanceKey&) const = default;
};

enum class PatternScale { small, medium, large };

constexpr std::string_view to_string(PatternScale s) {
  switch (s) {
    case PatternScale::small: return "small";
    case PatternScale::medium: return "medium";
    case PatternScale::large: return "large";
  }
  return "unknown";
}

inline PatternScale parse_scale(std::string_view s) {
  if (s == "small") return PatternScale::small;
  if (s == "medium") return PatternScale::medium;
  if (s == "large") return PatternScale::large;
  throw Error(ErrorCode::config, "unknown pattern scale '" + std::string(s) + "'");
}

struct PatchSize {
  int height = 0;
  int width = 0;
  bool operator==(const PatchSize&) const = default;
};

/// A key pattern with its transparent region R(k). `pattern` and
/// `transparent_mask` are stored at their authored resolution; the active
/// scale preset picks the size they are resampled to before placement.
struct PatternKey {
  Image pattern;
  Mask transparent_mask;
  PatternScale scale = PatternScale::medium;
  std::array<PatchSize, 3> scale_sizes{};
  Anchor anchor{};
  std::string name;

  PatchSize active_size() const { return scale_sizes[static_cast<std::size_t>(scale)]; }

  void validate() const {
    if (pattern.height() != transparent_mask.height || pattern.width() != transparent_mask.width)
      throw Error(ErrorCode::shape, "pattern and mask sizes differ for key '" + name + "'");
    for (const auto& s : scale_sizes)
      if (s.height < 1 || s.width < 1) throw Error(ErrorCode::invalid_size, "scale preset must be at least 1x1");
  }

  bool is_full_frame(Shape frame) const {
    const PatchSize s = active_size();
    return s.height == frame.height && s.width == frame.width && anchor == Anchor{} && transparent_mask.none();
  }

  bool operator==(const PatternKey&) const = default;
};

/// Pattern at its active scale, positioned in a frame.
struct PlacedPattern {
  Image overlay;
  Mask opaque;  // footprint minus R(k)
};

inline PlacedPattern place_pattern(const PatternKey& key, Shape frame) {
  key.validate();
  const PatchSize size = key.active_size();
  Image patch = key.pattern;
  Mask transparent = key.transparent_mask;
  if (patch.height() != size.height || patch.width() != size.width) {
    patch = resize_nearest(patch, size.height, size.width);
    transparent = resize_nearest(transparent, size.height, size.width);
  }
  Placement p = place_at(frame, patch, key.anchor);
  for (int i = 0; i < size.height; ++i)
    for (int j = 0; j < size.width; ++j)
      if (transparent.at(i, j)) p.coverage.set(key.anchor.row + i, key.anchor.col + j, false);
  return PlacedPattern{std::move(p.overlay), std::move(p.coverage)};
}

/// Full-frame key with no transparent pixels, as used by blended injection.
inline PatternKey full_frame_key(Image pattern, std::string name = "pattern") {
  PatternKey k;
  const PatchSize full{pattern.height(), pattern.width()};
  k.transparent_mask = Mask(pattern.height(), pattern.width(), false);
  k.pattern = std::move(pattern);
  k.scale_sizes = {full, full, full};
  k.name = std::move(name);
  return k;
}

using BackdoorKey = std::variant<InputInstanceKey, PatternKey>;

struct BackdoorSpec {
  Strategy strategy = Strategy::input_instance;
  BackdoorKey key;
  Label target_label = 0;
  double alpha_train = 1.0;
  double alpha_test = 1.0;
  int n = 1;

  double effective_alpha_train() const { return uses_alpha(strategy) ? alpha_train : 1.0; }
  double effective_alpha_test() const { return uses_alpha(strategy) ? alpha_test : 1.0; }

  void validate() const {
    if (n < 1) throw Error(ErrorCode::config, "poisoning sample count n must be >= 1, got " + std::to_string(n));
    if (target_label < 0) throw Error(ErrorCode::config, "target label must be non-negative");
    if (is_pattern_strategy(strategy) != std::holds_alternative<PatternKey>(key))
      throw Error(ErrorCode::config, std::string("strategy ") + std::string(to_string(strategy)) + " needs a " +
                                         (is_pattern_strategy(strategy) ? "pattern" : "input-instance") + " key");
    for (double a : {alpha_train, alpha_test})
      if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::invalid_parameter, "alpha must lie in [0,1]");
    if (const auto* ik = std::get_if<InputInstanceKey>(&key); ik && !(ik->noise_bound >= 0.0))
      throw Error(ErrorCode::invalid_parameter, "noise bound must be >= 0");
    if (const auto* pk = std::get_if<PatternKey>(&key)) pk->validate();
  }
};

enum class Provenance : std::uint8_t { pristine, poison };

struct SampleOrigin {
  // Index into the benign pool the instance was built from; -1 for draws
  // around an input-instance key.
  long long source_index = -1;
  Strategy strategy = Strategy::input_instance;
  double alpha = 1.0;
  std::uint64_t draw = 0;
};

struct PoisoningSample {
  Image instance;
  Label label = 0;
  Provenance provenance = Provenance::poison;
  SampleOrigin origin;
};

// ---------------------------------------------------------------------------
// Injection functions

/// The single rounding point shared by every blend so the reduction
/// identities between strategies hold bit-for-bit.
inline std::uint8_t blend_value(std::uint8_t k, std::uint8_t x, double alpha) {
  return clip_value(alpha * static_cast<double>(k) + (1.0 - alpha) * static_cast<double>(x));
}

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::invalid_parameter, "alpha must lie in [0,1], got " + std::to_string(alpha));
}

inline Image sample_backdoor_instance_rand(const InputInstanceKey& key, Rng rng) {
  const NoiseField noise = uniform_noise(key.key_image.shape(), -key.noise_bound, key.noise_bound, rng);
  return clip(add(to_float(key.key_image), noise));
}

inline Image blend_inject(const PatternKey& key, const Image& x, double alpha) {
  check_alpha(alpha);
  const PatchSize s = key.active_size();
  if (s.height != x.height() || s.width != x.width() || key.pattern.channels() != x.channels())
    throw Error(ErrorCode::shape, "blend injection needs a full-frame pattern matching " + x.shape().str());
  const PlacedPattern placed = place_pattern(key, x.shape());
  Image out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.pixels()[i] = blend_value(placed.overlay.pixels()[i], x.pixels()[i], alpha);
  return out;
}

inline Image blended_accessory_inject(const PatternKey& key, const Image& x, double alpha) {
  check_alpha(alpha);
  const PlacedPattern placed = place_pattern(key, x.shape());
  Image out = x;
  const int c = x.channels();
  for (int i = 0; i < x.height(); ++i)
    for (int j = 0; j < x.width(); ++j)
      if (placed.opaque.at(i, j))
        for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = blend_value(placed.overlay.at(i, j, ch), x.at(i, j, ch), alpha);
  return out;
}

inline Image accessory_inject(const PatternKey& key, const Image& x) {
  const PlacedPattern placed = place_pattern(key, x.shape());
  Image out = x;
  const int c = x.channels();
  for (int i = 0; i < x.height(); ++i)
    for (int j = 0; j < x.width(); ++j)
      if (placed.opaque.at(i, j))
        for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = placed.overlay.at(i, j, ch);
  return out;
}

inline Image inject(Strategy strategy, const PatternKey& key, const Image& x, double alpha) {
  switch (strategy) {
    case Strategy::blended: return blend_inject(key, x, alpha);
    case Strategy::accessory: return accessory_inject(key, x);
    case Strategy::blended_accessory: return blended_accessory_inject(key, x, alpha);
    case Strategy::input_instance: break;
  }
  throw Error(ErrorCode::config, "input-instance strategy has no pattern injection");
}

// ---------------------------------------------------------------------------
// Poison and backdoor-instance generation

inline std::vector<PoisoningSample> generate_poisons(const BackdoorSpec& spec, std::span<const Image> benign_pool, Rng rng) {
  spec.validate();
  std::vector<PoisoningSample> out;
  out.reserve(static_cast<std::size_t>(spec.n));
  if (const auto* ik = std::get_if<InputInstanceKey>(&spec.key)) {
    for (int i = 0; i < spec.n; ++i) {
      const auto draw = static_cast<std::uint64_t>(i);
      out.push_back({sample_backdoor_instance_rand(*ik, rng.derive("poison-draw", draw)), spec.target_label,
                     Provenance::poison, SampleOrigin{-1, spec.strategy, 1.0, draw}});
    }
    return out;
  }
  const auto& pk = std::get<PatternKey>(spec.key);
  if (benign_pool.size() < static_cast<std::size_t>(spec.n))
    throw Error(ErrorCode::insufficient_pool, "need " + std::to_string(spec.n) + " benign images, pool has " +
                                                  std::to_string(benign_pool.size()));
  // Prefix-stable: the picks for n are the first n picks for any larger n.
  Rng pick = rng.derive("poison-pool");
  const auto idx = pick.sample_without_replacement(benign_pool.size(), static_cast<std::size_t>(spec.n));
  const double alpha = spec.effective_alpha_train();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.push_back({inject(spec.strategy, pk, benign_pool[idx[i]], alpha), spec.target_label, Provenance::poison,
                   SampleOrigin{static_cast<long long>(idx[i]), spec.strategy, alpha, i}});
  }
  return out;
}

/// Instances presented at deployment. For input-instance keys, `count`
/// fresh draws from a sub-stream disjoint from the poisoning draws; any draw
/// that reproduces an image in `exclude` is redrawn. Pattern strategies
/// inject the key into every image of `eval_pool` with alpha_test.
inline std::vector<Image> generate_backdoor_instances(const BackdoorSpec& spec, std::span<const Image> eval_pool, Rng rng,
                                                      int count, std::span<const Image> exclude = {}) {
  spec.validate();
  std::vector<Image> out;
  if (const auto* ik = std::get_if<InputInstanceKey>(&spec.key)) {
    if (count < 1) throw Error(ErrorCode::invalid_parameter, "backdoor instance count must be >= 1");
    std::uint64_t draw = 0;
    while (out.size() < static_cast<std::size_t>(count)) {
      Image img = sample_backdoor_instance_rand(*ik, rng.derive("backdoor-draw", draw++));
      bool seen = false;
      for (const auto& e : exclude) seen = seen || e == img;
      if (!seen || ik->noise_bound == 0.0) out.push_back(std::move(img));
    }
    return out;
  }
  const auto& pk = std::get<PatternKey>(spec.key);
  if (eval_pool.empty()) throw Error(ErrorCode::insufficient_pool, "evaluation pool is empty");
  out.reserve(eval_pool.size());
  for (const auto& x : eval_pool) out.push_back(inject(spec.strategy, pk, x, spec.effective_alpha_test()));
  return out;
}

struct LabeledImage {
  Image image;
  Label label = 0;
};

struct WrongKeyInstances {
  std::vector<Image> images;
  std::vector<Label> ground_truth;
};

/// Same construction as generate_backdoor_instances but with a key the
/// attacker did not use; every instance keeps a ground truth != target.
inline WrongKeyInstances wrong_key_instances(const BackdoorSpec& true_spec, const BackdoorKey& wrong_key,
                                             std::span<const LabeledImage> eval_pool, Rng rng, int count) {
  true_spec.validate();
  if (wrong_key.index() != true_spec.key.index())
    throw Error(ErrorCode::invalid_wrong_key, "wrong key must be of the same kind as the true key");
  if (wrong_key == true_spec.key) throw Error(ErrorCode::invalid_wrong_key, "wrong key is identical to the true key");
  BackdoorSpec spec = true_spec;
  spec.key = wrong_key;
  WrongKeyInstances out;
  if (const auto* ik = std::get_if<InputInstanceKey>(&wrong_key)) {
    if (ik->source_label < 0) throw Error(ErrorCode::invalid_wrong_key, "wrong instance key needs a known ground-truth label");
    if (ik->source_label == true_spec.target_label)
      throw Error(ErrorCode::invalid_wrong_key, "wrong instance key belongs to the target label");
    out.images = generate_backdoor_instances(spec, {}, rng, count);
    out.ground_truth.assign(out.images.size(), ik->source_label);
    return out;
  }
  std::vector<Image> pool;
  for (const auto& li : eval_pool) {
    if (li.label == true_spec.target_label) continue;
    pool.push_back(li.image);
    out.ground_truth.push_back(li.label);
  }
  if (pool.empty()) throw Error(ErrorCode::insufficient_pool, "no evaluation image outside the target label");
  out.images = generate_backdoor_instances(spec, pool, rng, count);
  return out;
}

// ---------------------------------------------------------------------------
// Built-in key patterns

/// Every value uniform on {0..255}.
inline Image random_pattern(Shape shape, Rng rng) {
  Image img(shape);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

/// A flat cartoon-style drawing: light background, round head with ears,
/// dark eyes and a red bow. Deterministic for a given shape.
inline Image cartoon_pattern(Shape shape) {
  validate_shape(shape);
  Image img(shape, 235);
  const double h = shape.height, w = shape.width;
  auto paint = [&](auto inside, std::array<std::uint8_t, 3> rgb) {
    for (int i = 0; i < shape.height; ++i)
      for (int j = 0; j < shape.width; ++j)
        if (inside((i + 0.5) / h, (j + 0.5) / w))
          for (int ch = 0; ch < shape.channels; ++ch)
            img.at(i, j, ch) = shape.channels == 3 ? rgb[static_cast<std::size_t>(ch)]
                                                   : static_cast<std::uint8_t>((rgb[0] + rgb[1] + rgb[2]) / 3);
  };
  auto ellipse = [](double cy, double cx, double ry, double rx) {
    return [=](double y, double x) { return (y - cy) * (y - cy) / (ry * ry) + (x - cx) * (x - cx) / (rx * rx) <= 1.0; };
  };
  paint(ellipse(0.25, 0.22, 0.14, 0.12), {250, 250, 250});
  paint(ellipse(0.25, 0.78, 0.14, 0.12), {250, 250, 250});
  paint(ellipse(0.58, 0.5, 0.36, 0.42), {255, 255, 255});
  paint(ellipse(0.58, 0.33, 0.06, 0.04), {20, 20, 20});
  paint(ellipse(0.58, 0.67, 0.06, 0.04), {20, 20, 20});
  paint(ellipse(0.7, 0.5, 0.03, 0.05), {240, 200, 20});
  paint(ellipse(0.2, 0.72, 0.09, 0.09), {220, 20, 60});
  paint(ellipse(0.2, 0.88, 0.07, 0.07), {220, 20, 60});
  return img;
}

enum class GlassesStyle { reading, sunglasses, round_frame };

/// Glasses authored at 8x24: two lenses joined by a bridge. Reading and
/// round-frame glasses have transparent lens holes inside an opaque frame;
/// sunglasses have opaque tinted lenses.
inline PatternKey glasses_key(GlassesStyle style, Shape frame, PatternScale scale = PatternScale::medium,
                              std::array<std::uint8_t, 3> frame_rgb = {10, 10, 10},
                              std::array<std::uint8_t, 3> lens_rgb = {90, 30, 120}) {
  validate_shape(frame);
  constexpr int kH = 8, kW = 24;
  Image pattern(Shape{kH, kW, frame.channels}, 0);
  Mask transparent(kH, kW, true);
  auto put = [&](int i, int j, const std::array<std::uint8_t, 3>& rgb) {
    transparent.set(i, j, false);
    for (int ch = 0; ch < frame.channels; ++ch)
      pattern.at(i, j, ch) = frame.channels == 3 ? rgb[static_cast<std::size_t>(ch)]
                                                 : static_cast<std::uint8_t>((rgb[0] + rgb[1] + rgb[2]) / 3);
  };
  const int thick = style == GlassesStyle::round_frame ? 1 : 2;
  for (int lens = 0; lens < 2; ++lens) {
    const int c0 = lens == 0 ? 0 : 14, c1 = c0 + 10;  // [c0, c1)
    for (int i = 0; i < kH; ++i)
      for (int j = c0; j < c1; ++j) {
        if (style == GlassesStyle::round_frame) {
          // Clip the corners for a rounded outline.
          const bool corner = (i == 0 || i == kH - 1) && (j == c0 || j == c1 - 1);
          if (corner) continue;
        }
        const bool border = i < thick || i >= kH - thick || j < c0 + thick || j >= c1 - thick;
        if (border) put(i, j, frame_rgb);
        else if (style == GlassesStyle::sunglasses) put(i, j, lens_rgb);
      }
  }
  for (int i = 2; i < 4; ++i)
    for (int j = 10; j < 14; ++j) put(i, j, frame_rgb);

  PatternKey k;
  k.pattern = std::move(pattern);
  k.transparent_mask = std::move(transparent);
  // Widths leave a margin inside the frame; heights keep the authored 1:3 ratio.
  auto preset = [&](double frac) {
    int w = std::max(3, static_cast<int>(std::lround(frame.width * frac)));
    int h = std::max(1, static_cast<int>(std::lround(w / 3.0)));
    return PatchSize{std::min(h, frame.height), std::min(w, frame.width)};
  };
  k.scale_sizes = {preset(0.5), preset(0.75), preset(0.9375)};
  k.scale = scale;
  k.name = style == GlassesStyle::reading ? "reading-glasses" : style == GlassesStyle::sunglasses ? "sunglasses" : "round-glasses";
  const PatchSize s = k.active_size();
  // Eye region: pattern centred on row 0.4*H, horizontally centred.
  const int row = static_cast<int>(std::lround(frame.height * 0.4 - s.height / 2.0));
  k.anchor = Anchor{std::clamp(row, 0, frame.height - s.height), (frame.width - s.width) / 2};
  return k;
}

/// Re-target a key to another scale preset, keeping the eye-region centre.
inline PatternKey with_scale(PatternKey key, PatternScale scale, Shape frame) {
  const PatchSize old = key.active_size();
  const double cy = key.anchor.row + old.height / 2.0, cx = key.anchor.col + old.width / 2.0;
  key.scale = scale;
  const PatchSize s = key.active_size();
  key.anchor = Anchor{std::clamp(static_cast<int>(std::lround(cy - s.height / 2.0)), 0, frame.height - s.height),
                      std::clamp(static_cast<int>(std::lround(cx - s.width / 2.0)), 0, frame.width - s.width)};
  return key;
}

}  // namespace bdlab
