#pragma once

// On-disk artifacts: model checkpoints, backdoor keys and specs, dataset
// directories with JSON manifests, and IDX files.
//
// Checkpoint layout (little-endian):
//   "BFM1" | u32 json length | spec JSON | u64 param count | f64 params
//
// Dataset directory: <root>/<label>/<name>.png, plus an optional
// manifest.json carrying label mapping, provenance and content hashes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bdlab/datasets.hpp"
#include "bdlab/image_io.hpp"
#include "bdlab/keys.hpp"
#include "bdlab/serialize.hpp"
#include "bdlab/training.hpp"

namespace bdlab {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[4] = {'B', 'F', 'M', '1'};

inline std::vector<std::uint8_t> encode_checkpoint(const Model& m) {
  json head = to_json_value(m.spec);
  head["frozen_prefix"] = m.frozen_prefix;
  const std::string text = head.dump();
  std::vector<std::uint8_t> out(4 + 4 + text.size() + 8 + m.params.size() * 8);
  std::uint8_t* p = out.data();
  std::memcpy(p, kCheckpointMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  std::memcpy(p + 4, &len, 4);
  std::memcpy(p + 8, text.data(), text.size());
  const auto count = static_cast<std::uint64_t>(m.params.size());
  std::memcpy(p + 8 + text.size(), &count, 8);
  std::memcpy(p + 16 + text.size(), m.params.data(), m.params.size() * 8);
  return out;
}

inline Model decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw Error(ErrorCode::io, "not a BFM1 checkpoint");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 4, 4);
  if (bytes.size() < 16 + static_cast<std::size_t>(len)) throw Error(ErrorCode::io, "truncated checkpoint header");
  json head;
  try {
    head = json::parse(std::string(reinterpret_cast<const char*>(bytes.data() + 8), len));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::io, std::string("checkpoint spec block: ") + e.what());
  }
  Model m;
  m.spec = model_spec_from(head);
  m.frozen_prefix = head.value("frozen_prefix", false);
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data() + 8 + len, 8);
  if (count != parameter_count(m.spec)) throw Error(ErrorCode::io, "checkpoint parameter count does not match its spec");
  if (bytes.size() != 16 + len + count * 8) throw Error(ErrorCode::io, "checkpoint payload has the wrong length");
  m.params.resize(count);
  std::memcpy(m.params.data(), bytes.data() + 16 + len, count * 8);
  return m;
}

inline void save_model(const fs::path& path, const Model& m) { write_file_bytes(path, encode_checkpoint(m)); }
inline Model load_model(const fs::path& path) { return decode_checkpoint(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Keys: a directory holding key.json plus pattern.png + mask.png (pattern
// keys) or key.png (instance keys).

inline void save_key(const fs::path& dir, const BackdoorKey& key) {
  fs::create_directories(dir);
  json j;
  if (const auto* ik = std::get_if<InputInstanceKey>(&key)) {
    write_png(dir / "key.png", ik->key_image);
    j = {{"kind", "instance"}, {"noise_bound", ik->noise_bound}, {"source_label", ik->source_label}};
  } else {
    const auto& pk = std::get<PatternKey>(key);
    write_png(dir / "pattern.png", pk.pattern);
    write_mask_png(dir / "mask.png", pk.transparent_mask);
    json sizes = json::array();
    for (const auto& s : pk.scale_sizes) sizes.push_back({s.height, s.width});
    j = {{"kind", "pattern"},
         {"name", pk.name},
         {"scale", to_string(pk.scale)},
         {"scale_sizes", sizes},
         {"anchor", {pk.anchor.row, pk.anchor.col}}};
  }
  write_json(dir / "key.json", j);
}

inline BackdoorKey load_key(const fs::path& dir) {
  const json j = read_json(dir / "key.json");
  const std::string kind = j.value("kind", "");
  if (kind == "instance") {
    InputInstanceKey k;
    k.key_image = read_png(dir / "key.png");
    read_opt(j, "noise_bound", k.noise_bound);
    read_opt(j, "source_label", k.source_label);
    return k;
  }
  if (kind != "pattern") throw Error(ErrorCode::config, dir.string() + ": key kind must be 'instance' or 'pattern'");
  PatternKey k;
  k.pattern = read_png(dir / "pattern.png");
  k.transparent_mask = read_mask_png(dir / "mask.png");
  k.name = j.value("name", "pattern");
  k.scale = parse_scale(j.value("scale", "medium"));
  try {
    const auto& sizes = j.at("scale_sizes");
    if (sizes.size() != 3) throw Error(ErrorCode::config, "scale_sizes needs three presets");
    for (std::size_t i = 0; i < 3; ++i) k.scale_sizes[i] = {sizes[i][0].get<int>(), sizes[i][1].get<int>()};
    k.anchor = {j.at("anchor")[0].get<int>(), j.at("anchor")[1].get<int>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, dir.string() + "/key.json: " + e.what());
  }
  k.validate();
  return k;
}

/// Spec JSON names the key directory; relative paths resolve against the
/// JSON file's own directory.
inline json backdoor_spec_json(const BackdoorSpec& s, const std::string& key_dir) {
  return json{{"strategy", to_string(s.strategy)}, {"target_label", s.target_label}, {"alpha_train", s.alpha_train},
              {"alpha_test", s.alpha_test},         {"n", s.n},                       {"key", key_dir}};
}

inline BackdoorSpec backdoor_spec_from(const json& j, const fs::path& base_dir) {
  BackdoorSpec s;
  try {
    s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    fs::path key_dir = j.at("key").get<std::string>();
    if (key_dir.is_relative()) key_dir = base_dir / key_dir;
    s.key = load_key(key_dir);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("backdoor spec: ") + e.what());
  }
  read_opt(j, "target_label", s.target_label);
  read_opt(j, "alpha_train", s.alpha_train);
  read_opt(j, "alpha_test", s.alpha_test);
  read_opt(j, "n", s.n);
  s.validate();
  return s;
}

inline void save_backdoor_spec(const fs::path& path, const BackdoorSpec& s) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const std::string stem = path.stem().string() + "_key";
  save_key(dir / stem, s.key);
  write_json(path, backdoor_spec_json(s, stem));
}

inline BackdoorSpec load_backdoor_spec(const fs::path& path) {
  return backdoor_spec_from(read_json(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

// ---------------------------------------------------------------------------
// Dataset directories

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Writes <dir>/<label>/<index>.png and manifest.json.
inline void save_dataset(const fs::path& dir, const LabeledDataset& ds) {
  fs::create_directories(dir);
  json files = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    const fs::path rel = fs::path(std::to_string(s.label)) / name;
    write_png(dir / rel, s.image);
    files.push_back({{"file", rel.generic_string()}, {"label", s.label}, {"provenance", s.provenance == Provenance::poison ? "poison" : "pristine"}});
  }
  json m{{"label_count", ds.label_count},
         {"original_labels", ds.original_labels},
         {"counts", ds.label_counts()},
         {"content_hash", hex64(ds.content_hash())},
         {"samples", files}};
  write_json(dir / "manifest.json", m);
}

namespace detail {

inline bool numeric_name(const std::string& s) { return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }); }

inline LabeledDataset scan_tree(const fs::path& root) {
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path().filename().string());
  if (dirs.empty()) throw Error(ErrorCode::io, root.string() + " has no label directories");
  const bool numeric = std::all_of(dirs.begin(), dirs.end(), numeric_name);
  std::sort(dirs.begin(), dirs.end(), [numeric](const std::string& a, const std::string& b) {
    return numeric ? std::stoll(a) < std::stoll(b) : a < b;
  });
  LabeledDataset ds;
  ds.label_count = static_cast<int>(dirs.size());
  for (std::size_t l = 0; l < dirs.size(); ++l) {
    ds.original_labels.push_back(numeric ? static_cast<Label>(std::stoll(dirs[l])) : static_cast<Label>(l));
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root / dirs[l]))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ds.samples.push_back({read_png(f), static_cast<Label>(l), Provenance::pristine});
  }
  return ds;
}

}  // namespace detail

/// Loads via manifest.json when present, else scans <root>/<label>/*.png
/// (label directories sorted numerically when all names are numbers).
inline LabeledDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::io, dir.string() + " is not a directory");
  if (!fs::exists(dir / "manifest.json")) return detail::scan_tree(dir);
  const json m = read_json(dir / "manifest.json");
  LabeledDataset ds;
  try {
    ds.label_count = m.at("label_count").get<int>();
    ds.original_labels = m.at("original_labels").get<std::vector<Label>>();
    for (const auto& s : m.at("samples")) {
      const Provenance p = s.value("provenance", "pristine") == "poison" ? Provenance::poison : Provenance::pristine;
      ds.samples.push_back({read_png(dir / s.at("file").get<std::string>()), s.at("label").get<Label>(), p});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, (dir / "manifest.json").string() + ": " + e.what());
  }
  ds.validate();
  if (m.contains("content_hash") && m["content_hash"].get<std::string>() != hex64(ds.content_hash()))
    throw Error(ErrorCode::io, dir.string() + ": content hash does not match manifest");
  return ds;
}

/// <dir>/{train,pool,test} plus a top-level split manifest.
inline void save_split(const fs::path& dir, const SplitBundle& b) {
  save_dataset(dir / "train", b.train);
  save_dataset(dir / "pool", b.attacker_pool);
  save_dataset(dir / "test", b.test);
  write_json(dir / "manifest.json", json{{"splits",
                                          {{"train", {{"size", b.train.size()}, {"content_hash", hex64(b.train.content_hash())}}},
                                           {"pool", {{"size", b.attacker_pool.size()}, {"content_hash", hex64(b.attacker_pool.content_hash())}}},
                                           {"test", {{"size", b.test.size()}, {"content_hash", hex64(b.test.content_hash())}}}}}});
}

inline SplitBundle load_split(const fs::path& dir) {
  return SplitBundle{load_dataset(dir / "train"), load_dataset(dir / "pool"), load_dataset(dir / "test")};
}

// ---------------------------------------------------------------------------
// IDX (big-endian header: 0x00 0x00 type ndims, then ndims u32 sizes)

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline IdxArray decode_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) throw Error(ErrorCode::io, "bad IDX magic");
  if (bytes[2] != 0x08) throw Error(ErrorCode::io, "only unsigned-byte IDX payloads are supported");
  const std::size_t nd = bytes[3];
  if (nd == 0 || bytes.size() < 4 + 4 * nd) throw Error(ErrorCode::io, "truncated IDX header");
  IdxArray a;
  std::size_t total = 1;
  for (std::size_t d = 0; d < nd; ++d) {
    const std::uint8_t* p = bytes.data() + 4 + 4 * d;
    const std::uint32_t v = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
    a.dims.push_back(v);
    total *= v;
  }
  if (bytes.size() != 4 + 4 * nd + total) throw Error(ErrorCode::io, "IDX payload length does not match its dimensions");
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * nd), bytes.end());
  return a;
}

/// Images from a 3-d (N,H,W) or 4-d (N,H,W,C) IDX file.
inline std::vector<Image> read_idx_images(const fs::path& path) {
  const IdxArray a = decode_idx(read_file_bytes(path));
  if (a.dims.size() != 3 && a.dims.size() != 4) throw Error(ErrorCode::io, "IDX image file must be 3-d or 4-d");
  const Shape s{static_cast<int>(a.dims[1]), static_cast<int>(a.dims[2]), a.dims.size() == 4 ? static_cast<int>(a.dims[3]) : 1};
  validate_shape(s);
  std::vector<Image> out;
  out.reserve(a.dims[0]);
  for (std::size_t i = 0; i < a.dims[0]; ++i) {
    const auto first = a.data.begin() + static_cast<std::ptrdiff_t>(i * s.size());
    out.emplace_back(s, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(s.size())));
  }
  return out;
}

inline std::vector<Label> read_idx_labels(const fs::path& path) {
  const IdxArray a = decode_idx(read_file_bytes(path));
  if (a.dims.size() != 1) throw Error(ErrorCode::io, "IDX label file must be 1-d");
  return std::vector<Label>(a.data.begin(), a.data.end());
}

/// Labels are densely re-indexed in ascending order of the raw values.
inline LabeledDataset load_idx_dataset(const fs::path& images, const fs::path& labels) {
  auto imgs = read_idx_images(images);
  const auto raw = read_idx_labels(labels);
  if (imgs.size() != raw.size()) throw Error(ErrorCode::io, "IDX image and label counts differ");
  std::map<Label, Label> dense;
  for (Label l : raw) dense.emplace(l, 0);
  LabeledDataset ds;
  for (auto& [orig, id] : dense) {
    id = static_cast<Label>(ds.original_labels.size());
    ds.original_labels.push_back(orig);
  }
  ds.label_count = static_cast<int>(dense.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) ds.samples.push_back({std::move(imgs[i]), dense[raw[i]], Provenance::pristine});
  return ds;
}

}  // namespace bdlab
