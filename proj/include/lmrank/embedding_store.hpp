#pragma once

// Embedding sets, label tables, and their on-disk formats.
//
// Binary embedding container (little-endian, canonical, bit-exact):
//   "EMB1" | u32 n | u32 d | n x (u16 byte length, UTF-8 id bytes) | n*d float32 row-major
// CSV embedding file: `id,v1,...,vd` per line, no header.
// Label CSV: `image_id,landmark_id` per line, no header.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lmrank/detail/binary_io.hpp"
#include "lmrank/error.hpp"

namespace lmrank {

using LandmarkId = std::int64_t;

enum class Role { unspecified, test, train, nonlandmark };

enum class EmbeddingFormat { binary, csv };

/// Ordered image ids with a row-major n x d float32 matrix. Immutable once
/// constructed; every constructor path validates the invariants.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  EmbeddingSet(std::vector<std::string> ids, std::size_t dim, std::vector<float> values,
               Role role = Role::unspecified)
      : ids_(std::move(ids)), dim_(dim), values_(std::move(values)), role_(role) {
    validate();
  }

  /// An empty set of the given width.
  static EmbeddingSet make_empty(std::size_t dim, Role role = Role::unspecified) {
    return EmbeddingSet({}, dim, {}, role);
  }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  Role role() const noexcept { return role_; }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }

  EmbeddingSet with_role(Role role) const {
    EmbeddingSet copy = *this;
    copy.role_ = role;
    return copy;
  }

  /// Rows in the given order; indices may not repeat (ids must stay unique).
  EmbeddingSet select_rows(std::span<const std::size_t> rows) const {
    std::vector<std::string> ids;
    std::vector<float> values;
    ids.reserve(rows.size());
    values.reserve(rows.size() * dim_);
    for (std::size_t r : rows) {
      if (r >= size()) throw ValidationError("select_rows: row index out of range");
      ids.push_back(ids_[r]);
      auto src = row(r);
      values.insert(values.end(), src.begin(), src.end());
    }
    return EmbeddingSet(std::move(ids), dim_, std::move(values), role_);
  }

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_;
  }

 private:
  void validate() const {
    if (dim_ < 1) throw ValidationError("embedding dim must be >= 1");
    if (values_.size() != ids_.size() * dim_) {
      throw ValidationError("embedding matrix has " + std::to_string(values_.size()) +
                            " values, expected " + std::to_string(ids_.size()) + " x " +
                            std::to_string(dim_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw ValidationError("non-finite value at row " + std::to_string(i / dim_) + ", column " +
                              std::to_string(i % dim_));
      }
    }
    std::unordered_map<std::string_view, std::size_t> seen;
    seen.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      auto [it, inserted] = seen.emplace(ids_[i], i);
      if (!inserted) {
        throw ValidationError("duplicate id '" + ids_[i] + "' at row " + std::to_string(i) +
                              " (first seen at row " + std::to_string(it->second) + ")");
      }
    }
  }

  std::vector<std::string> ids_;
  std::size_t dim_ = 1;
  std::vector<float> values_;
  Role role_ = Role::unspecified;
};

/// Bitwise comparison of ids and float payloads (distinguishes -0.0 from 0.0).
inline bool bitwise_equal(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim() || a.ids() != b.ids()) return false;
  auto av = a.values();
  auto bv = b.values();
  return av.size() == bv.size() && std::memcmp(av.data(), bv.data(), av.size_bytes()) == 0;
}

/// image id -> landmark id, kept in insertion order.
class LabelTable {
 public:
  LabelTable() = default;

  void insert(std::string image_id, LandmarkId landmark) {
    if (landmark < 0) {
      throw ValidationError("negative landmark id " + std::to_string(landmark) + " for '" +
                            image_id + "'");
    }
    if (index_.contains(image_id)) throw ValidationError("duplicate label for id '" + image_id + "'");
    index_.emplace(image_id, entries_.size());
    entries_.emplace_back(std::move(image_id), landmark);
  }

  std::optional<LandmarkId> find(std::string_view image_id) const {
    auto it = index_.find(std::string(image_id));
    if (it == index_.end()) return std::nullopt;
    return entries_[it->second].second;
  }

  bool contains(std::string_view image_id) const { return find(image_id).has_value(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<std::pair<std::string, LandmarkId>>& entries() const noexcept { return entries_; }

  std::unordered_set<LandmarkId> classes() const {
    std::unordered_set<LandmarkId> out;
    for (const auto& e : entries_) out.insert(e.second);
    return out;
  }

  friend bool operator==(const LabelTable& a, const LabelTable& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, LandmarkId>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// The three datasets the ranking pipeline works on: queries to recognize,
/// labeled candidates, and the out-of-domain (non-landmark) pool.
struct RoleSets {
  EmbeddingSet test;
  EmbeddingSet train;
  EmbeddingSet nonlandmark;
};

/// File names inside a model directory.
namespace layout {
inline constexpr const char* kTest = "test.emb";
inline constexpr const char* kTrain = "train.emb";
inline constexpr const char* kNonlandmark = "nonlandmark.emb";
inline constexpr const char* kTrainLabels = "train_labels.csv";
inline constexpr const char* kTestGroundTruth = "test_gt.csv";
}  // namespace layout

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return fields;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline EmbeddingFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EmbeddingFormat::csv : EmbeddingFormat::binary;
}

inline EmbeddingSet read_embeddings_binary(std::istream& in, const std::string& name) {
  detail::expect_magic(in, "EMB1", name);
  const auto n = detail::read_le<std::uint32_t>(in, "row count");
  const auto d = detail::read_le<std::uint32_t>(in, "dimension");
  if (d == 0) throw ValidationError(name + ": bad header, dimension is 0");

  std::vector<std::string> ids;
  ids.reserve(std::min<std::uint32_t>(n, 1u << 20));
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = detail::read_le<std::uint16_t>(in, "id length");
    std::string id(len, '\0');
    in.read(id.data(), len);
    if (in.gcount() != len) {
      throw ValidationError(name + ": truncated id at row " + std::to_string(i));
    }
    ids.push_back(std::move(id));
  }

  // Reject sizes the remaining payload cannot hold before allocating.
  const auto here = in.tellg();
  in.seekg(0, std::ios::end);
  const auto end = in.tellg();
  in.seekg(here);
  const std::uint64_t expected = std::uint64_t{n} * d * sizeof(float);
  if (here >= 0 && end >= here && static_cast<std::uint64_t>(end - here) != expected) {
    throw ValidationError(name + ": payload holds " + std::to_string(end - here) +
                          " bytes, header promises " + std::to_string(expected));
  }
  std::vector<float> values(std::size_t{n} * d);
  detail::read_floats_le(in, values, "embedding payload");
  return EmbeddingSet(std::move(ids), d, std::move(values));
}

inline EmbeddingSet read_embeddings_csv(std::istream& in, const std::string& name) {
  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);
    const std::size_t row_dim = fields.size() - 1;
    if (row_dim == 0) {
      throw ValidationError(name + ":" + std::to_string(line_no) + ": row has no values");
    }
    if (dim == 0) {
      dim = row_dim;
    } else if (row_dim != dim) {
      throw ValidationError(name + ":" + std::to_string(line_no) + ": dimension mismatch, row has " +
                            std::to_string(row_dim) + " values, expected " + std::to_string(dim));
    }
    if (fields[0].empty()) throw ValidationError(name + ":" + std::to_string(line_no) + ": empty id");
    ids.emplace_back(fields[0]);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      float v = 0.0f;
      auto sv = fields[f];
      if (!sv.empty() && sv.front() == '+') sv.remove_prefix(1);
      auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
      if (ec != std::errc{} || ptr != sv.data() + sv.size()) {
        throw ValidationError(name + ":" + std::to_string(line_no) + ": field " + std::to_string(f) +
                              " is not a number: '" + std::string(fields[f]) + "'");
      }
      if (!std::isfinite(v)) {
        throw ValidationError(name + ":" + std::to_string(line_no) + ": non-finite value at row " +
                              std::to_string(ids.size() - 1) + ", field " + std::to_string(f));
      }
      values.push_back(v);
    }
  }
  if (dim == 0) throw ValidationError(name + ": CSV embedding file has no rows, dimension unknown");
  try {
    return EmbeddingSet(std::move(ids), dim, std::move(values));
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
  auto in = detail::open_input(path, format == EmbeddingFormat::binary);
  try {
    return format == EmbeddingFormat::binary ? read_embeddings_binary(in, path.string())
                                             : read_embeddings_csv(in, path.string());
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw ValidationError(path.string() + ": " + msg);
  }
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  return load_embeddings(path, format_from_path(path));
}

inline void write_embeddings_binary(std::ostream& out, const EmbeddingSet& set) {
  if (set.size() > std::numeric_limits<std::uint32_t>::max() ||
      set.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("embedding set too large for the EMB1 container");
  }
  out.write("EMB1", 4);
  detail::write_le(out, static_cast<std::uint32_t>(set.size()));
  detail::write_le(out, static_cast<std::uint32_t>(set.dim()));
  for (const auto& id : set.ids()) {
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("id longer than 65535 bytes: '" + id.substr(0, 32) + "...'");
    }
    detail::write_le(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  detail::write_floats_le(out, set.values());
}

/// Binary container; load_embeddings reproduces the set bit-exactly.
inline void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  auto out = detail::open_output(path, true);
  write_embeddings_binary(out, set);
  detail::finish_output(out, path);
}

/// Decimal CSV export. Values are printed with 9 significant digits, which
/// round-trips float32, but CSV is not the canonical format.
inline void save_embeddings_csv(const EmbeddingSet& set, const std::filesystem::path& path) {
  auto out = detail::open_output(path, false);
  char buf[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.id(i);
    for (float v : set.row(i)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
  detail::finish_output(out, path);
}

inline LabelTable read_labels(std::istream& in, const std::string& name) {
  LabelTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);
    const auto where = name + ":" + std::to_string(line_no);
    if (fields.size() != 2) {
      throw ValidationError(where + ": expected 'image_id,landmark_id', got " +
                            std::to_string(fields.size()) + " fields");
    }
    if (fields[0].empty()) throw ValidationError(where + ": empty image id");
    LandmarkId landmark = 0;
    auto sv = fields[1];
    auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), landmark);
    if (ec != std::errc{} || ptr != sv.data() + sv.size() || sv.empty()) {
      throw ValidationError(where + ": landmark id is not an integer: '" + std::string(sv) + "'");
    }
    try {
      table.insert(std::string(fields[0]), landmark);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return table;
}

inline LabelTable load_labels(const std::filesystem::path& path) {
  auto in = detail::open_input(path, false);
  return read_labels(in, path.string());
}

inline void save_labels(const LabelTable& table, const std::filesystem::path& path) {
  auto out = detail::open_output(path, false);
  for (const auto& [id, landmark] : table.entries()) out << id << ',' << landmark << '\n';
  detail::finish_output(out, path);
}

/// Keeps the train rows whose landmark appears among the test ground truth
/// classes, in their original order. Returns the filtered set and its labels.
inline std::pair<EmbeddingSet, LabelTable> filter_train_to_test_classes(const EmbeddingSet& train,
                                                                        const LabelTable& train_labels,
                                                                        const LabelTable& test_gt) {
  const auto keep_classes = test_gt.classes();
  std::vector<std::size_t> rows;
  LabelTable kept;
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto label = train_labels.find(train.id(i));
    if (!label) {
      throw ValidationError("train id '" + train.id(i) + "' (row " + std::to_string(i) +
                            ") has no label");
    }
    if (keep_classes.contains(*label)) {
      rows.push_back(i);
      kept.insert(train.id(i), *label);
    }
  }
  return {train.select_rows(rows), std::move(kept)};
}

}  // namespace lmrank
