#ifndef SEMSHIFT_INGEST_HPP
#define SEMSHIFT_INGEST_HPP

#include <filesystem>

#include "semshift/types.hpp"

namespace semshift {

// EMB1 binary layout, little-endian:
//   bytes 0-3   magic "EMB1"
//   u32         version (1)
//   u64         n_rows
//   u32         n_dims
//   u32         dtype code (1 = 32-bit float)
//   payload     n_rows * n_dims floats, row-major
// An optional sidecar "<path>.ids" holds newline-delimited document ids in
// row order and is picked up automatically for alignment checking.

/// Reads and validates an EMB1 file. The payload is memory-mapped, so two
/// passes over multi-gigabyte corpora never hold the matrix on the heap.
/// Every value is checked finite before the matrix is returned.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

/// Writes an EMB1 file (plus ".ids" sidecar when the matrix carries ids).
/// 64-bit matrices are narrowed to the 32-bit disk precision.
void write_embeddings(const EmbeddingMatrix& matrix,
                      const std::filesystem::path& path);

/// Reads a metadata JSONL file; exactly expected_n records, order preserved.
MetadataTable read_metadata(const std::filesystem::path& path,
                            std::size_t expected_n);

void write_metadata(const MetadataTable& metadata,
                    const std::filesystem::path& path);

/// Full-selection view over matrix rows; checks row/record count agreement
/// and, when the matrix carries sidecar ids, id-level alignment.
CorpusView align(const EmbeddingMatrix& matrix, const MetadataTable& metadata);

/// Like align() but selecting only rows that are not rephrased counterparts
/// of some other row. This is the natural baseline sample for corpora that
/// ship rephrased variants as extra rows.
CorpusView originals_only(const EmbeddingMatrix& matrix,
                          const MetadataTable& metadata);

}  // namespace semshift

#endif  // SEMSHIFT_INGEST_HPP
