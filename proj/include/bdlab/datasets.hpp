#pragma once

// Labeled datasets, the three-way split, balanced per-epoch resampling,
// poisoned-set assembly, the synthetic identity generator and the
// leave-one-out subject protocol.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "bdlab/error.hpp"
#include "bdlab/imaging.hpp"
#include "bdlab/keys.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

struct Sample {
  Image image;
  Label label = 0;
  Provenance provenance = Provenance::pristine;
};

/// Content identity: FNV-1a over shape, pixel bytes and label.
inline std::uint64_t sample_identity(const Image& img, Label label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (int v : {img.height(), img.width(), img.channels(), static_cast<int>(label)})
    for (int s = 0; s < 32; s += 8) mix(static_cast<std::uint8_t>((static_cast<unsigned>(v) >> s) & 0xFF));
  for (std::uint8_t b : img.pixels()) mix(b);
  return h;
}

struct LabeledDataset {
  std::vector<Sample> samples;
  int label_count = 0;
  // Dense label id -> label id in the source the set was derived from.
  std::vector<Label> original_labels;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    for (const auto& s : samples)
      if (s.label < 0 || s.label >= label_count)
        throw Error(ErrorCode::label, "label " + std::to_string(s.label) + " outside [0," + std::to_string(label_count) + ")");
  }

  std::vector<std::size_t> label_counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(label_count), 0);
    for (const auto& s : samples) ++c[static_cast<std::size_t>(s.label)];
    return c;
  }

  std::vector<Image> images() const {
    std::vector<Image> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image);
    return out;
  }

  std::vector<LabeledImage> labeled_images() const {
    std::vector<LabeledImage> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.image, s.label});
    return out;
  }

  std::vector<std::uint64_t> identities() const {
    std::vector<std::uint64_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(sample_identity(s.image, s.label));
    return out;
  }

  /// Order-sensitive hash of the whole set.
  std::uint64_t content_hash() const {
    std::uint64_t h = hash_combine(0x5eed, static_cast<std::uint64_t>(label_count));
    for (const auto& s : samples) h = hash_combine(h, sample_identity(s.image, s.label));
    return h;
  }
};

inline LabeledDataset make_dataset(std::vector<LabeledImage> items, int label_count) {
  LabeledDataset ds;
  ds.label_count = label_count;
  ds.samples.reserve(items.size());
  for (auto& it : items) ds.samples.push_back({std::move(it.image), it.label, Provenance::pristine});
  ds.original_labels.resize(static_cast<std::size_t>(label_count));
  for (int i = 0; i < label_count; ++i) ds.original_labels[static_cast<std::size_t>(i)] = i;
  ds.validate();
  return ds;
}

struct SplitBundle {
  LabeledDataset train;
  LabeledDataset attacker_pool;
  LabeledDataset test;
};

struct PoisonedDataset {
  LabeledDataset base;
  std::vector<PoisoningSample> poisons;

  std::size_t N() const { return base.size(); }
  std::size_t n() const { return poisons.size(); }
  std::size_t size() const { return N() + n(); }

  /// Set when n/N exceeds 1% (the poison budget should stay tiny).
  std::optional<std::string> warning() const {
    if (N() > 0 && static_cast<double>(n()) > 0.01 * static_cast<double>(N()))
      return "poison fraction n/N = " + std::to_string(n()) + "/" + std::to_string(N()) + " exceeds 1%";
    return std::nullopt;
  }

  const Image& image(std::size_t i) const { return i < N() ? base.samples[i].image : poisons[i - N()].instance; }
  Label label(std::size_t i) const { return i < N() ? base.samples[i].label : poisons[i - N()].label; }
  Provenance provenance(std::size_t i) const { return i < N() ? base.samples[i].provenance : Provenance::poison; }

  /// D union poisons as one set; poisons keep their provenance flag.
  LabeledDataset combined() const {
    LabeledDataset out = base;
    out.samples.reserve(size());
    for (const auto& p : poisons) out.samples.push_back({p.instance, p.label, Provenance::poison});
    return out;
  }
};

// ---------------------------------------------------------------------------

struct FilterResult {
  LabeledDataset dataset;
  // Old label id -> new dense id, -1 when removed.
  std::vector<Label> mapping;
};

inline FilterResult filter_infrequent(const LabeledDataset& ds, int min_count) {
  if (min_count < 1) throw Error(ErrorCode::invalid_parameter, "min_count must be >= 1");
  const auto counts = ds.label_counts();
  FilterResult r;
  r.mapping.assign(counts.size(), -1);
  Label next = 0;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (counts[l] >= static_cast<std::size_t>(min_count)) {
      r.mapping[l] = next++;
      r.dataset.original_labels.push_back(ds.original_labels.size() > l ? ds.original_labels[l] : static_cast<Label>(l));
    }
  }
  r.dataset.label_count = next;
  for (const auto& s : ds.samples) {
    const Label m = r.mapping[static_cast<std::size_t>(s.label)];
    if (m >= 0) r.dataset.samples.push_back({s.image, m, s.provenance});
  }
  if (r.dataset.empty()) throw Error(ErrorCode::empty_dataset, "no label has at least " + std::to_string(min_count) + " samples");
  return r;
}

inline SplitBundle split_three_way(const LabeledDataset& ds, int test_per_label, int pool_per_label, Rng rng) {
  if (test_per_label < 0 || pool_per_label < 0) throw Error(ErrorCode::invalid_parameter, "split sizes must be >= 0");
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(ds.label_count));
  for (std::size_t i = 0; i < ds.size(); ++i) by_label[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);
  const auto need = static_cast<std::size_t>(test_per_label + pool_per_label + 1);
  for (std::size_t l = 0; l < by_label.size(); ++l)
    if (by_label[l].size() < need)
      throw Error(ErrorCode::split, "label " + std::to_string(l) + " has " + std::to_string(by_label[l].size()) +
                                        " samples, needs " + std::to_string(need));

  SplitBundle b;
  for (LabeledDataset* part : {&b.train, &b.attacker_pool, &b.test}) {
    part->label_count = ds.label_count;
    part->original_labels = ds.original_labels;
  }
  // Per-label assignment first, then emit in original order so each part
  // keeps a stable, seed-independent layout.
  std::vector<int> where(ds.size(), 0);
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    auto idx = by_label[l];
    Rng r = rng.derive("split", l);
    r.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k < static_cast<std::size_t>(test_per_label)) where[idx[k]] = 2;
      else if (k < static_cast<std::size_t>(test_per_label + pool_per_label)) where[idx[k]] = 1;
    }
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LabeledDataset* part = where[i] == 0 ? &b.train : where[i] == 1 ? &b.attacker_pool : &b.test;
    part->samples.push_back(ds.samples[i]);
  }
  return b;
}

/// Indices of one balanced epoch: exactly per_label draws for every label
/// that has samples (with replacement only when the label is short), then
/// shuffled. Labels without samples are skipped.
inline std::vector<std::size_t> balanced_epoch_indices(std::span<const Label> labels, int label_count, int per_label, Rng rng) {
  if (per_label < 1) throw Error(ErrorCode::invalid_parameter, "per_label must be >= 1");
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(label_count));
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(label_count) * static_cast<std::size_t>(per_label));
  const auto want = static_cast<std::size_t>(per_label);
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    const auto& members = by_label[l];
    if (members.empty()) continue;
    Rng r = rng.derive("balanced", l);
    if (members.size() >= want) {
      for (std::size_t k : r.sample_without_replacement(members.size(), want)) out.push_back(members[k]);
    } else {
      for (std::size_t k = 0; k < want; ++k) out.push_back(members[static_cast<std::size_t>(r.below(members.size()))]);
    }
  }
  Rng shuffler = rng.derive("balanced-shuffle");
  shuffler.shuffle(out);
  return out;
}

inline std::vector<Label> labels_of(const LabeledDataset& ds) {
  std::vector<Label> l;
  l.reserve(ds.size());
  for (const auto& s : ds.samples) l.push_back(s.label);
  return l;
}

inline std::vector<LabeledImage> balanced_epoch_sample(const LabeledDataset& ds, int per_label, Rng rng) {
  const auto labels = labels_of(ds);
  std::vector<LabeledImage> out;
  for (std::size_t i : balanced_epoch_indices(labels, ds.label_count, per_label, rng))
    out.push_back({ds.samples[i].image, ds.samples[i].label});
  return out;
}

inline std::vector<LabeledImage> balanced_epoch_sample(const PoisonedDataset& ds, int per_label, Rng rng) {
  return balanced_epoch_sample(ds.combined(), per_label, rng);
}

inline PoisonedDataset assemble_poisoned(const LabeledDataset& train, std::vector<PoisoningSample> poisons) {
  if (poisons.empty()) throw Error(ErrorCode::config, "assemble_poisoned needs at least one poisoning sample");
  for (const auto& p : poisons)
    if (p.label < 0 || p.label >= train.label_count)
      throw Error(ErrorCode::label, "poison label " + std::to_string(p.label) + " is not a valid label id");
  return PoisonedDataset{train, std::move(poisons)};
}

// ---------------------------------------------------------------------------
// Synthetic identities

struct SynthParams {
  // Per-sample jitter.
  double brightness = 20.0;  // uniform offset in [-b, b]
  int max_shift = 2;         // translation in [-s, s] pixels on each axis
  double noise_sigma = 8.0;  // Gaussian pixel noise
  // Smooth per-sample variation (pose/lighting stand-in): blobs with
  // amplitude up to +-variation_amplitude per channel.
  int variation_blobs = 3;
  double variation_amplitude = 40.0;
  // Identity template: shared base face plus per-label blobs.
  int identity_blobs = 6;
};

/// Shared "face" every identity is built on: a soft oval on a darker
/// background with darker eye and mouth regions.
inline std::vector<double> synth_base_face(Shape frame, Rng rng) {
  std::vector<double> base(frame.size());
  const double skin[3] = {rng.uniform(150, 190), rng.uniform(110, 150), rng.uniform(90, 130)};
  for (int i = 0; i < frame.height; ++i)
    for (int j = 0; j < frame.width; ++j) {
      const double y = (i + 0.5) / frame.height, x = (j + 0.5) / frame.width;
      const double face = std::exp(-std::pow(((y - 0.52) / 0.42), 4) - std::pow(((x - 0.5) / 0.36), 4));
      double shade = 0.0;
      for (double ex : {0.33, 0.67}) shade += 35.0 * std::exp(-((y - 0.4) * (y - 0.4) + (x - ex) * (x - ex)) / 0.006);
      shade += 30.0 * std::exp(-((y - 0.75) * (y - 0.75) / 0.002 + (x - 0.5) * (x - 0.5) / 0.02));
      for (int c = 0; c < frame.channels; ++c) {
        const double bg = 60.0 + 10.0 * c;
        const double tone = frame.channels == 3 ? skin[c] : (skin[0] + skin[1] + skin[2]) / 3.0;
        base[(static_cast<std::size_t>(i) * static_cast<std::size_t>(frame.width) + static_cast<std::size_t>(j)) *
                 static_cast<std::size_t>(frame.channels) + static_cast<std::size_t>(c)] = bg + face * (tone - bg) - face * shade;
      }
    }
  return base;
}

/// Adds Gaussian blobs with random centre, width and signed per-channel
/// amplitude in [amp_lo, amp_hi].
inline void add_blobs(std::vector<double>& t, Shape frame, int blobs, double amp_lo, double amp_hi, Rng& rng) {
  for (int b = 0; b < blobs; ++b) {
    const double cy = rng.uniform(0.1, 0.9) * frame.height, cx = rng.uniform(0.1, 0.9) * frame.width;
    const double sigma = rng.uniform(0.08, 0.2) * std::min(frame.height, frame.width);
    double amp[3];
    for (double& a : amp) {
      const double mag = rng.uniform(amp_lo, amp_hi);
      a = rng.below(2) ? mag : -mag;
    }
    for (int i = 0; i < frame.height; ++i)
      for (int j = 0; j < frame.width; ++j) {
        const double g = std::exp(-((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (2 * sigma * sigma));
        for (int c = 0; c < frame.channels; ++c)
          t[(static_cast<std::size_t>(i) * static_cast<std::size_t>(frame.width) + static_cast<std::size_t>(j)) *
                static_cast<std::size_t>(frame.channels) + static_cast<std::size_t>(c)] += amp[c] * g;
      }
  }
}

inline std::vector<double> synth_template(const std::vector<double>& base, Shape frame, int blobs, Rng rng) {
  std::vector<double> t = base;
  add_blobs(t, frame, blobs, 50.0, 110.0, rng);
  for (double& v : t) v = std::clamp(v, 0.0, 255.0);
  return t;
}

inline Image synth_sample(const std::vector<double>& tmpl, Shape frame, const SynthParams& p, Rng rng) {
  std::vector<double> varied = tmpl;
  add_blobs(varied, frame, p.variation_blobs, p.variation_amplitude * 0.4, p.variation_amplitude, rng);
  const double bright = rng.uniform(-p.brightness, p.brightness);
  const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * p.max_shift + 1))) - p.max_shift;
  const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * p.max_shift + 1))) - p.max_shift;
  FloatImage f(frame);
  for (int i = 0; i < frame.height; ++i)
    for (int j = 0; j < frame.width; ++j) {
      const int si = std::clamp(i - dy, 0, frame.height - 1), sj = std::clamp(j - dx, 0, frame.width - 1);
      for (int c = 0; c < frame.channels; ++c) {
        const std::size_t src = (static_cast<std::size_t>(si) * static_cast<std::size_t>(frame.width) + static_cast<std::size_t>(sj)) *
                                    static_cast<std::size_t>(frame.channels) + static_cast<std::size_t>(c);
        const std::size_t dst = (static_cast<std::size_t>(i) * static_cast<std::size_t>(frame.width) + static_cast<std::size_t>(j)) *
                                    static_cast<std::size_t>(frame.channels) + static_cast<std::size_t>(c);
        f.pixels[dst] = varied[src] + bright + p.noise_sigma * rng.normal();
      }
    }
  return clip(f);
}

/// Template images (no jitter) for each label, as generated under `rng`.
inline std::vector<Image> synth_templates(int num_labels, Shape frame, Rng rng, const SynthParams& p = {}) {
  const auto base = synth_base_face(frame, rng.derive("base-face"));
  std::vector<Image> out;
  for (int l = 0; l < num_labels; ++l) {
    FloatImage f(frame);
    f.pixels = synth_template(base, frame, p.identity_blobs, rng.derive("template", static_cast<std::uint64_t>(l)));
    out.push_back(clip(f));
  }
  return out;
}

inline LabeledDataset synth_generate(int num_labels, int per_label, Shape frame, Rng rng, const SynthParams& p = {}) {
  if (num_labels < 2) throw Error(ErrorCode::invalid_parameter, "synthetic set needs at least 2 labels");
  if (per_label < 1) throw Error(ErrorCode::invalid_parameter, "per_label must be >= 1");
  validate_shape(frame);
  const auto base = synth_base_face(frame, rng.derive("base-face"));
  std::vector<LabeledImage> items;
  items.reserve(static_cast<std::size_t>(num_labels) * static_cast<std::size_t>(per_label));
  for (int l = 0; l < num_labels; ++l) {
    const auto tmpl = synth_template(base, frame, p.identity_blobs, rng.derive("template", static_cast<std::uint64_t>(l)));
    Rng jitter = rng.derive("jitter", static_cast<std::uint64_t>(l));
    for (int k = 0; k < per_label; ++k)
      items.push_back({synth_sample(tmpl, frame, p, jitter.derive("sample", static_cast<std::uint64_t>(k))), l});
  }
  return make_dataset(std::move(items), num_labels);
}

// ---------------------------------------------------------------------------

struct LeaveOneOut {
  std::vector<Image> poison_source;
  std::vector<Image> eval_source;
};

inline LeaveOneOut leave_one_out_pools(const std::vector<std::vector<Image>>& subject_pools, std::size_t held_out) {
  if (subject_pools.size() < 2) throw Error(ErrorCode::protocol, "leave-one-out needs at least 2 subjects");
  if (held_out >= subject_pools.size())
    throw Error(ErrorCode::protocol, "held-out subject " + std::to_string(held_out) + " out of range");
  LeaveOneOut out;
  for (std::size_t s = 0; s < subject_pools.size(); ++s) {
    auto& dst = s == held_out ? out.eval_source : out.poison_source;
    dst.insert(dst.end(), subject_pools[s].begin(), subject_pools[s].end());
  }
  return out;
}

inline bool disjoint(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::unordered_set<std::uint64_t> s(a.begin(), a.end());
  return std::none_of(b.begin(), b.end(), [&s](std::uint64_t v) { return s.count(v) > 0; });
}

}  // namespace bdlab
