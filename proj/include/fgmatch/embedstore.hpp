// SPDX-License-Identifier: Apache-2.0
//
// Embedding tables (FGEB binary format), JSON manifests, and the two dataset
// shapes built on top of them: coarse image-caption pairs and fine-grained
// per-object vocabularies.
//
// FGEB layout, all integers little-endian:
//   "FGEB" | u32 version (=1) | u32 dim | u64 count
//   count x { u16 id_len | id bytes (UTF-8) | dim x f32 }
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fgmatch/binary_io.hpp"
#include "fgmatch/errors.hpp"
#include "fgmatch/numcore.hpp"
#include "json.hpp"

namespace fgmatch {

inline constexpr char kTableMagic[4] = {'F', 'G', 'E', 'B'};
inline constexpr std::uint32_t kTableVersion = 1;

/// Id-keyed store of fixed-dimension vectors for one modality. Iteration is
/// in ascending id order, so serialization does not depend on insertion order.
class EmbeddingTable {
 public:
  using Map = std::map<std::string, Vector, std::less<>>;

  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw UsageError("embedding dimension must be positive");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  void insert(std::string id, Vector v) {
    if (id.empty()) throw UsageError("embedding id must be non-empty");
    if (v.dim() != dim_) {
      throw UsageError("embedding '" + id + "' has dim " + std::to_string(v.dim()) + ", table dim is " +
                       std::to_string(dim_));
    }
    auto [it, inserted] = entries_.emplace(std::move(id), std::move(v));
    if (!inserted) throw UsageError("duplicate embedding id '" + it->first + "'");
  }

  const Vector* find(std::string_view id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view id) const { return find(id) != nullptr; }

  const Vector& at(std::string_view id) const {
    if (const Vector* v = find(id)) return *v;
    throw LoadError(LoadErrorKind::DanglingId, "id '" + std::string(id) + "' not found in table");
  }

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t dim_ = 0;
  Map entries_;
};

inline std::string serialize_table(const EmbeddingTable& table) {
  std::string out;
  out.reserve(20 + table.size() * (16 + 4 * table.dim()));
  out.append(kTableMagic, 4);
  binary::put_u32(out, kTableVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(table.dim()));
  binary::put_u64(out, table.size());
  for (const auto& [id, vec] : table) {
    if (id.size() > UINT16_MAX) throw UsageError("embedding id longer than 65535 bytes");
    binary::put_u16(out, static_cast<std::uint16_t>(id.size()));
    out.append(id);
    for (float x : vec) binary::put_f32(out, x);
  }
  return out;
}

inline EmbeddingTable parse_table(std::string_view bytes, const std::string& context = "table") {
  binary::Reader in(bytes, context);
  const auto magic = in.take(4, "magic");
  if (magic != std::string_view(kTableMagic, 4)) throw LoadError(LoadErrorKind::BadMagic, context);
  const std::uint32_t version = in.u32("version");
  if (version != kTableVersion) {
    throw LoadError(LoadErrorKind::VersionMismatch,
                    context + ": version " + std::to_string(version) + ", expected " + std::to_string(kTableVersion));
  }
  const std::uint32_t dim = in.u32("dim");
  if (dim == 0) throw LoadError(LoadErrorKind::Malformed, context + ": dim is zero");
  const std::uint64_t count = in.u64("count");
  EmbeddingTable table(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint16_t len = in.u16("id length");
    if (len == 0) throw LoadError(LoadErrorKind::Malformed, context + ": empty id in record " + std::to_string(r));
    std::string id(in.take(len, "id"));
    std::vector<float> values(dim);
    for (auto& x : values) {
      x = in.f32("vector payload");
    }
    for (float x : values) {
      if (!std::isfinite(x)) throw LoadError(LoadErrorKind::Malformed, context + ": non-finite value for id '" + id + "'");
    }
    if (table.contains(id)) throw LoadError(LoadErrorKind::DuplicateId, context + ": '" + id + "'");
    table.insert(std::move(id), Vector(std::move(values)));
  }
  if (!in.at_end()) {
    throw LoadError(LoadErrorKind::Malformed,
                    context + ": " + std::to_string(in.remaining()) + " trailing bytes after last record");
  }
  return table;
}

inline void write_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  binary::write_file(path, serialize_table(table));
}

inline EmbeddingTable read_table(const std::filesystem::path& path) {
  return parse_table(binary::read_file(path), path.string());
}

inline std::string table_digest(const EmbeddingTable& table) {
  return binary::hex64(binary::fnv1a(serialize_table(table)));
}

/// Copy with every vector scaled to unit norm; zero vectors are rejected.
inline EmbeddingTable normalized_copy(const EmbeddingTable& table) {
  EmbeddingTable out(table.dim());
  for (const auto& [id, v] : table) {
    try {
      out.insert(id, l2_normalized(v));
    } catch (const DomainError&) {
      throw DomainError("embedding '" + id + "' has zero norm");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split '" + std::string(s) + "' (expected train|val|test)");
}

struct CoarseItem {
  std::string image_id;
  std::vector<std::string> caption_ids;

  friend bool operator==(const CoarseItem&, const CoarseItem&) = default;
};

struct CoarsePairs {
  Split split = Split::Train;
  std::vector<CoarseItem> items;

  std::size_t num_captions() const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.caption_ids.size();
    return n;
  }
};

struct VocabItem {
  std::string image_id;
  std::string positive_id;
  std::vector<std::string> negative_ids;

  friend bool operator==(const VocabItem&, const VocabItem&) = default;
};

struct VocabDataset {
  std::string benchmark = "custom";
  Split split = Split::Test;
  std::size_t n_negatives = 0;
  std::vector<VocabItem> items;

  std::size_t vocab_size() const noexcept { return n_negatives + 1; }
};

inline const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names = {"trivial", "easy",    "medium",       "hard",  "color",
                                                 "material", "pattern", "transparency", "custom"};
  return names;
}

/// Required negatives per item for the named benchmarks; nullopt for "custom".
inline std::optional<std::size_t> expected_negatives(std::string_view benchmark) {
  if (benchmark == "pattern") return 7;
  if (benchmark == "transparency") return 2;
  if (benchmark == "custom") return std::nullopt;
  for (const auto& name : benchmark_names()) {
    if (name == benchmark) return 10;
  }
  throw UsageError("unknown benchmark '" + std::string(benchmark) + "'");
}

struct DatasetTables {
  EmbeddingTable images;
  EmbeddingTable texts;
};

inline void validate(const CoarsePairs& pairs, const DatasetTables& tables) {
  std::set<std::string, std::less<>> seen;
  for (const auto& item : pairs.items) {
    if (item.image_id.empty()) throw LoadError(LoadErrorKind::Malformed, "coarse item with empty image id");
    if (!seen.insert(item.image_id).second) {
      throw LoadError(LoadErrorKind::DuplicateId, "image '" + item.image_id + "' appears in more than one coarse item");
    }
    if (!tables.images.contains(item.image_id)) {
      throw LoadError(LoadErrorKind::DanglingId, "image id '" + item.image_id + "' not found in image table");
    }
    if (item.caption_ids.empty()) {
      throw LoadError(LoadErrorKind::Malformed, "image '" + item.image_id + "' has no captions");
    }
    for (const auto& c : item.caption_ids) {
      if (!tables.texts.contains(c)) {
        throw LoadError(LoadErrorKind::DanglingId, "caption id '" + c + "' not found in text table");
      }
    }
  }
}

inline void validate(const VocabDataset& vocab, const DatasetTables& tables) {
  const auto expected = expected_negatives(vocab.benchmark);
  if (vocab.n_negatives == 0) throw LoadError(LoadErrorKind::Malformed, vocab.benchmark + ": n_negatives must be >= 1");
  if (expected && *expected != vocab.n_negatives) {
    throw LoadError(LoadErrorKind::Malformed, vocab.benchmark + ": benchmark requires " + std::to_string(*expected) +
                                                  " negatives, manifest declares " + std::to_string(vocab.n_negatives));
  }
  for (std::size_t i = 0; i < vocab.items.size(); ++i) {
    const auto& item = vocab.items[i];
    const std::string where = vocab.benchmark + " item " + std::to_string(i);
    if (item.negative_ids.size() != vocab.n_negatives) {
      throw LoadError(LoadErrorKind::Malformed, where + ": has " + std::to_string(item.negative_ids.size()) +
                                                    " negatives, dataset uses " + std::to_string(vocab.n_negatives));
    }
    if (!tables.images.contains(item.image_id)) {
      throw LoadError(LoadErrorKind::DanglingId, "image id '" + item.image_id + "' not found in image table");
    }
    if (!tables.texts.contains(item.positive_id)) {
      throw LoadError(LoadErrorKind::DanglingId, "caption id '" + item.positive_id + "' not found in text table");
    }
    for (const auto& n : item.negative_ids) {
      if (n == item.positive_id) {
        throw LoadError(LoadErrorKind::Malformed, where + ": positive '" + n + "' also listed as a negative");
      }
      if (!tables.texts.contains(n)) {
        throw LoadError(LoadErrorKind::DanglingId, "caption id '" + n + "' not found in text table");
      }
    }
  }
}

/// Lookup over the tables, either as stored or with every vector L2-normalized.
class PreparedTables {
 public:
  PreparedTables(const DatasetTables& tables, bool normalize) {
    if (normalize) {
      owned_.emplace(DatasetTables{normalized_copy(tables.images), normalized_copy(tables.texts)});
      view_ = &*owned_;
    } else {
      view_ = &tables;
    }
  }
  PreparedTables(const PreparedTables&) = delete;
  PreparedTables& operator=(const PreparedTables&) = delete;

  const DatasetTables& tables() const noexcept { return *view_; }
  const Vector& image(std::string_view id) const { return view_->images.at(id); }
  const Vector& text(std::string_view id) const { return view_->texts.at(id); }

 private:
  std::optional<DatasetTables> owned_;
  const DatasetTables* view_ = nullptr;
};

// ---------------------------------------------------------------------------
// Manifest

/// A pairing list is either inlined in the manifest or stored in a separate
/// JSON file referenced by a path relative to the manifest.
struct CoarseSource {
  Split split = Split::Train;
  nlohmann::json pairs;
};

struct VocabSource {
  std::string benchmark;
  Split split = Split::Test;
  std::size_t n_negatives = 0;
  nlohmann::json vocab_items;
};

struct Manifest {
  std::filesystem::path base_dir;  // directory relative paths resolve against
  std::size_t dim = 0;
  std::string image_table;
  std::string text_table;
  std::vector<CoarseSource> coarse;
  std::vector<VocabSource> vocab;
  nlohmann::json meta = nlohmann::json::object();

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

namespace detail {

template <class T>
T json_field(const nlohmann::json& j, const char* key, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) {
    throw LoadError(LoadErrorKind::Malformed, context + ": missing key '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::Malformed, context + ": key '" + key + "': " + e.what());
  }
}

inline nlohmann::json parse_json(std::string_view text, const std::string& context) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::Malformed, context + ": " + e.what());
  }
}

inline nlohmann::json resolve_list(const Manifest& m, const nlohmann::json& j, const std::string& context) {
  if (j.is_array()) return j;
  if (j.is_string()) {
    const auto path = m.resolve(j.get<std::string>());
    auto list = parse_json(binary::read_file(path), path.string());
    if (!list.is_array()) throw LoadError(LoadErrorKind::Malformed, path.string() + ": expected a JSON array");
    return list;
  }
  throw LoadError(LoadErrorKind::Malformed, context + ": expected an array or a file path");
}

}  // namespace detail

inline Manifest parse_manifest(const nlohmann::json& j, std::filesystem::path base_dir,
                               const std::string& context = "manifest") {
  Manifest m;
  m.base_dir = std::move(base_dir);
  m.dim = detail::json_field<std::size_t>(j, "dim", context);
  if (m.dim == 0) throw LoadError(LoadErrorKind::Malformed, context + ": dim must be positive");
  m.image_table = detail::json_field<std::string>(j, "image_table", context);
  m.text_table = detail::json_field<std::string>(j, "text_table", context);
  if (j.contains("coarse")) {
    for (const auto& c : j.at("coarse")) {
      CoarseSource src;
      src.split = parse_split(detail::json_field<std::string>(c, "split", context + ".coarse"));
      src.pairs = detail::json_field<nlohmann::json>(c, "pairs", context + ".coarse");
      m.coarse.push_back(std::move(src));
    }
  }
  if (j.contains("vocab")) {
    for (const auto& v : j.at("vocab")) {
      VocabSource src;
      src.benchmark = detail::json_field<std::string>(v, "benchmark", context + ".vocab");
      try {
        (void)expected_negatives(src.benchmark);
      } catch (const UsageError& e) {
        throw LoadError(LoadErrorKind::Malformed, context + ": " + e.what());
      }
      src.split = parse_split(detail::json_field<std::string>(v, "split", context + ".vocab"));
      src.n_negatives = detail::json_field<std::size_t>(v, "n_negatives", context + ".vocab");
      src.vocab_items = detail::json_field<nlohmann::json>(v, "vocab_items", context + ".vocab");
      m.vocab.push_back(std::move(src));
    }
  }
  if (j.contains("meta")) m.meta = j.at("meta");
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  const auto j = detail::parse_json(binary::read_file(path), path.string());
  return parse_manifest(j, path.parent_path(), path.string());
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["dim"] = m.dim;
  j["image_table"] = m.image_table;
  j["text_table"] = m.text_table;
  j["coarse"] = nlohmann::json::array();
  for (const auto& c : m.coarse) j["coarse"].push_back({{"split", to_string(c.split)}, {"pairs", c.pairs}});
  j["vocab"] = nlohmann::json::array();
  for (const auto& v : m.vocab) {
    j["vocab"].push_back({{"benchmark", v.benchmark},
                          {"split", to_string(v.split)},
                          {"n_negatives", v.n_negatives},
                          {"vocab_items", v.vocab_items}});
  }
  if (!m.meta.empty()) j["meta"] = m.meta;
  return j;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  binary::write_file(path, to_json(m).dump(2) + "\n");
}

inline nlohmann::json to_json(const std::vector<CoarseItem>& items) {
  auto arr = nlohmann::json::array();
  for (const auto& it : items) arr.push_back({{"image", it.image_id}, {"captions", it.caption_ids}});
  return arr;
}

inline nlohmann::json to_json(const std::vector<VocabItem>& items) {
  auto arr = nlohmann::json::array();
  for (const auto& it : items) {
    arr.push_back({{"image", it.image_id}, {"positive", it.positive_id}, {"negatives", it.negative_ids}});
  }
  return arr;
}

/// Loads both embedding tables and checks they agree with the manifest dim.
inline DatasetTables load_tables(const Manifest& m) {
  DatasetTables t{read_table(m.resolve(m.image_table)), read_table(m.resolve(m.text_table))};
  if (t.images.dim() != m.dim || t.texts.dim() != m.dim) {
    throw LoadError(LoadErrorKind::Malformed, "table dims (" + std::to_string(t.images.dim()) + ", " +
                                                  std::to_string(t.texts.dim()) + ") disagree with manifest dim " +
                                                  std::to_string(m.dim));
  }
  return t;
}

inline bool has_coarse(const Manifest& m, Split split) {
  for (const auto& c : m.coarse)
    if (c.split == split) return true;
  return false;
}

/// All coarse items of one split (several sources with the same split are
/// concatenated), validated against the tables.
inline CoarsePairs load_coarse(const Manifest& m, const DatasetTables& tables, Split split) {
  CoarsePairs out;
  out.split = split;
  bool found = false;
  for (const auto& src : m.coarse) {
    if (src.split != split) continue;
    found = true;
    const auto list = detail::resolve_list(m, src.pairs, "coarse pairs");
    for (const auto& j : list) {
      CoarseItem item;
      item.image_id = detail::json_field<std::string>(j, "image", "coarse pair");
      item.caption_ids = detail::json_field<std::vector<std::string>>(j, "captions", "coarse pair");
      out.items.push_back(std::move(item));
    }
  }
  if (!found) throw LoadError(LoadErrorKind::Malformed, std::string("manifest has no coarse split '") + to_string(split) + "'");
  validate(out, tables);
  return out;
}

inline VocabDataset load_vocab(const Manifest& m, const DatasetTables& tables, const VocabSource& src) {
  VocabDataset out;
  out.benchmark = src.benchmark;
  out.split = src.split;
  out.n_negatives = src.n_negatives;
  const auto list = detail::resolve_list(m, src.vocab_items, src.benchmark + " vocab_items");
  for (const auto& j : list) {
    VocabItem item;
    item.image_id = detail::json_field<std::string>(j, "image", "vocab item");
    item.positive_id = detail::json_field<std::string>(j, "positive", "vocab item");
    item.negative_ids = detail::json_field<std::vector<std::string>>(j, "negatives", "vocab item");
    out.items.push_back(std::move(item));
  }
  validate(out, tables);
  return out;
}

/// Every vocabulary dataset of a split, in manifest order.
inline std::vector<VocabDataset> load_vocab(const Manifest& m, const DatasetTables& tables, Split split) {
  std::vector<VocabDataset> out;
  for (const auto& src : m.vocab) {
    if (src.split == split) out.push_back(load_vocab(m, tables, src));
  }
  return out;
}

/// The single vocabulary dataset with the given benchmark and split.
inline VocabDataset load_vocab(const Manifest& m, const DatasetTables& tables, std::string_view benchmark,
                               Split split) {
  for (const auto& src : m.vocab) {
    if (src.split == split && src.benchmark == benchmark) return load_vocab(m, tables, src);
  }
  throw LoadError(LoadErrorKind::Malformed, "manifest has no '" + std::string(benchmark) + "' vocabulary for split '" +
                                                to_string(split) + "'");
}

}  // namespace fgmatch
