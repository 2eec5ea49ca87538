#ifndef SEMSHIFT_TYPES_HPP
#define SEMSHIFT_TYPES_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semshift/error.hpp"

namespace semshift {

/// Row index into an embedding matrix. 32-bit keeps selection vectors
/// compact for multi-million-row corpora; matrices beyond 2^32 rows are
/// rejected at load time.
using Row = std::uint32_t;

/// Read-only memory mapping of a whole file. Move-only.
class MappedFile {
 public:
  MappedFile() = default;
  ~MappedFile();
  MappedFile(MappedFile&& other) noexcept;
  MappedFile& operator=(MappedFile&& other) noexcept;
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  static MappedFile open_readonly(const std::filesystem::path& path);

  const std::byte* data() const { return static_cast<const std::byte*>(addr_); }
  std::size_t size() const { return size_; }
  bool valid() const { return addr_ != nullptr; }

 private:
  void* addr_ = nullptr;
  std::size_t size_ = 0;
};

/// Dense row-major matrix of document embeddings. Disk storage is 32-bit
/// (EMB1); loaded matrices stay 32-bit and are memory-mapped, while derived
/// matrices (debiased, residualized, scaled) carry 64-bit values so that
/// projector invariants survive. All downstream accumulation is 64-bit
/// either way.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t n_rows, std::size_t n_dims,
                  std::vector<float> values,
                  std::filesystem::path source = {});
  EmbeddingMatrix(std::size_t n_rows, std::size_t n_dims,
                  std::vector<double> values,
                  std::filesystem::path source = {});

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_dims() const { return n_dims_; }
  const std::filesystem::path& source_path() const { return source_; }

  bool stores_f32() const { return f64_.empty(); }
  /// Raw 32-bit payload; nullptr when this matrix stores 64-bit values.
  const float* f32_data() const {
    return mapped_payload_ ? mapped_payload_ : (f32_.empty() ? nullptr : f32_.data());
  }
  const double* f64_data() const { return f64_.empty() ? nullptr : f64_.data(); }

  /// Widening copy of row i; out must have n_dims elements.
  void copy_row(std::size_t i, std::span<double> out) const;
  double value(std::size_t i, std::size_t j) const;

  /// Document ids from the optional ".ids" sidecar (empty when absent).
  const std::vector<std::string>& ids() const { return ids_; }
  void set_ids(std::vector<std::string> ids);

 private:
  friend EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

  std::size_t n_rows_ = 0;
  std::size_t n_dims_ = 0;
  std::vector<float> f32_;
  std::vector<double> f64_;
  MappedFile mapping_;
  const float* mapped_payload_ = nullptr;
  std::filesystem::path source_;
  std::vector<std::string> ids_;
};

/// Per-document attributes aligned with an embedding matrix row.
struct DocumentRecord {
  std::string id;
  std::map<std::string, double> toxicity;  // provider name -> score in [0,1]
  std::optional<std::int64_t> topic;
  double weight = 0.0;  // engagement count, e.g. retweets
  std::optional<std::string> rephrased_of;
};

/// Ordered document records plus id and rephrased-counterpart indexes.
/// Construction validates the record invariants (unique ids, score ranges,
/// nonnegative weights, no dangling counterpart references).
class MetadataTable {
 public:
  MetadataTable() = default;
  explicit MetadataTable(std::vector<DocumentRecord> records);

  std::size_t size() const { return records_.size(); }
  const DocumentRecord& record(std::size_t i) const { return records_[i]; }
  const std::vector<DocumentRecord>& records() const { return records_; }

  std::optional<std::size_t> row_of(std::string_view id) const;
  /// Row of the rephrased counterpart of `row`, when one exists.
  std::optional<std::size_t> counterpart_of(std::size_t row) const;

 private:
  std::vector<DocumentRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::size_t, std::size_t> counterpart_;
};

/// Immutable view of a corpus: which rows are in the sample and, for
/// rephrase policies, which rows stand in for others. Loaded corpora are
/// never mutated; policies produce new views.
struct CorpusView {
  const EmbeddingMatrix* matrix = nullptr;
  const MetadataTable* metadata = nullptr;
  std::vector<Row> selection;
  std::unordered_map<Row, Row> replacements;

  std::size_t size() const { return selection.size(); }

  /// Matrix row that actually contributes for selected row `row`.
  Row effective_row(Row row) const {
    auto it = replacements.find(row);
    return it == replacements.end() ? row : it->second;
  }

  const DocumentRecord& record(Row row) const { return metadata->record(row); }

  CorpusView with_selection(std::vector<Row> new_selection) const {
    CorpusView v = *this;
    v.selection = std::move(new_selection);
    return v;
  }

  /// Bounds, uniqueness and replacement-target checks; throws DataError.
  void validate() const;
};

}  // namespace semshift

#endif  // SEMSHIFT_TYPES_HPP
