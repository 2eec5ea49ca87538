#include "semshift/ingest.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "EMB1 I/O assumes a little-endian host");

namespace semshift {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4 + 4;

void check_payload_finite(const float* data, std::size_t n_rows,
                          std::size_t n_dims,
                          const std::filesystem::path& path) {
  const std::size_t total = n_rows * n_dims;
  for (std::size_t i = 0; i < total; ++i) {
    if (!std::isfinite(data[i])) {
      throw DataError("non-finite embedding value at row " +
                      std::to_string(i / n_dims) + ", column " +
                      std::to_string(i % n_dims) + " in " + path.string());
    }
  }
}

std::vector<std::string> read_id_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ids.push_back(line);
  }
  return ids;
}

}  // namespace

// ---------------------------------------------------------------------------
// MappedFile

MappedFile::~MappedFile() {
  if (addr_ != nullptr) ::munmap(addr_, size_);
}

MappedFile::MappedFile(MappedFile&& other) noexcept
    : addr_(std::exchange(other.addr_, nullptr)),
      size_(std::exchange(other.size_, 0)) {}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
  if (this != &other) {
    if (addr_ != nullptr) ::munmap(addr_, size_);
    addr_ = std::exchange(other.addr_, nullptr);
    size_ = std::exchange(other.size_, 0);
  }
  return *this;
}

MappedFile MappedFile::open_readonly(const std::filesystem::path& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) {
    throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
  }
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    int err = errno;
    ::close(fd);
    throw Error("cannot stat " + path.string() + ": " + std::strerror(err));
  }
  MappedFile mf;
  mf.size_ = static_cast<std::size_t>(st.st_size);
  if (mf.size_ > 0) {
    void* addr = ::mmap(nullptr, mf.size_, PROT_READ, MAP_PRIVATE, fd, 0);
    if (addr == MAP_FAILED) {
      int err = errno;
      ::close(fd);
      throw Error("cannot mmap " + path.string() + ": " + std::strerror(err));
    }
    mf.addr_ = addr;
  }
  ::close(fd);
  return mf;
}

// ---------------------------------------------------------------------------
// EmbeddingMatrix

EmbeddingMatrix::EmbeddingMatrix(std::size_t n_rows, std::size_t n_dims,
                                 std::vector<float> values,
                                 std::filesystem::path source)
    : n_rows_(n_rows),
      n_dims_(n_dims),
      f32_(std::move(values)),
      source_(std::move(source)) {
  if (n_rows_ == 0 || n_dims_ == 0) {
    throw DataError("embedding matrix must have at least one row and column");
  }
  if (f32_.size() != n_rows_ * n_dims_) {
    throw DataError("embedding buffer size does not match declared shape");
  }
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t n_rows, std::size_t n_dims,
                                 std::vector<double> values,
                                 std::filesystem::path source)
    : n_rows_(n_rows),
      n_dims_(n_dims),
      f64_(std::move(values)),
      source_(std::move(source)) {
  if (n_rows_ == 0 || n_dims_ == 0) {
    throw DataError("embedding matrix must have at least one row and column");
  }
  if (f64_.size() != n_rows_ * n_dims_) {
    throw DataError("embedding buffer size does not match declared shape");
  }
}

void EmbeddingMatrix::copy_row(std::size_t i, std::span<double> out) const {
  const std::size_t base = i * n_dims_;
  if (!f64_.empty()) {
    std::memcpy(out.data(), f64_.data() + base, n_dims_ * sizeof(double));
    return;
  }
  const float* src = f32_data() + base;
  for (std::size_t j = 0; j < n_dims_; ++j) out[j] = src[j];
}

double EmbeddingMatrix::value(std::size_t i, std::size_t j) const {
  const std::size_t idx = i * n_dims_ + j;
  return f64_.empty() ? static_cast<double>(f32_data()[idx]) : f64_[idx];
}

void EmbeddingMatrix::set_ids(std::vector<std::string> ids) {
  if (!ids.empty() && ids.size() != n_rows_) {
    throw DataError("id list size " + std::to_string(ids.size()) +
                    " does not match row count " + std::to_string(n_rows_));
  }
  ids_ = std::move(ids);
}

// ---------------------------------------------------------------------------
// EMB1 read/write

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error("embedding file does not exist: " + path.string());
  }
  MappedFile mapping = MappedFile::open_readonly(path);
  if (mapping.size() < kHeaderBytes) {
    throw FormatError("file too small for an EMB1 header: " + path.string());
  }
  const std::byte* p = mapping.data();
  if (std::memcmp(p, kMagic, 4) != 0) {
    throw FormatError("bad magic in " + path.string() +
                      " (expected \"EMB1\")");
  }
  std::uint32_t version, n_dims32, dtype;
  std::uint64_t n_rows64;
  std::memcpy(&version, p + 4, 4);
  std::memcpy(&n_rows64, p + 8, 8);
  std::memcpy(&n_dims32, p + 16, 4);
  std::memcpy(&dtype, p + 20, 4);
  if (version != kVersion) {
    throw FormatError("unsupported EMB1 version " + std::to_string(version) +
                      " in " + path.string());
  }
  if (dtype != kDtypeF32) {
    throw FormatError("unsupported EMB1 dtype code " + std::to_string(dtype) +
                      " in " + path.string());
  }
  if (n_rows64 == 0 || n_dims32 == 0) {
    throw DataError("EMB1 declares an empty matrix: " + path.string());
  }
  if (n_rows64 > std::numeric_limits<Row>::max()) {
    throw DataError("EMB1 row count exceeds supported maximum: " +
                    path.string());
  }
  const std::size_t n_rows = static_cast<std::size_t>(n_rows64);
  const std::size_t n_dims = static_cast<std::size_t>(n_dims32);
  if (n_rows > std::numeric_limits<std::size_t>::max() / 4 / n_dims) {
    throw FormatError("EMB1 payload size overflows: " + path.string());
  }
  const std::size_t expected = kHeaderBytes + n_rows * n_dims * 4;
  if (mapping.size() != expected) {
    throw TruncationError(
        "EMB1 size mismatch in " + path.string() + ": declared " +
        std::to_string(expected) + " bytes (" + std::to_string(n_rows) + "x" +
        std::to_string(n_dims) + "), file has " +
        std::to_string(mapping.size()));
  }

  EmbeddingMatrix m;
  m.n_rows_ = n_rows;
  m.n_dims_ = n_dims;
  m.source_ = path;
  m.mapping_ = std::move(mapping);
  m.mapped_payload_ =
      reinterpret_cast<const float*>(m.mapping_.data() + kHeaderBytes);
  check_payload_finite(m.mapped_payload_, n_rows, n_dims, path);

  std::filesystem::path sidecar = path;
  sidecar += ".ids";
  if (std::filesystem::exists(sidecar)) {
    auto ids = read_id_sidecar(sidecar);
    if (ids.size() != n_rows) {
      throw DataError("id sidecar " + sidecar.string() + " has " +
                      std::to_string(ids.size()) + " ids for " +
                      std::to_string(n_rows) + " rows");
    }
    m.ids_ = std::move(ids);
  }
  return m;
}

void write_embeddings(const EmbeddingMatrix& matrix,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  const std::uint64_t n_rows = matrix.n_rows();
  const std::uint32_t n_dims = static_cast<std::uint32_t>(matrix.n_dims());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&n_rows), 8);
  out.write(reinterpret_cast<const char*>(&n_dims), 4);
  out.write(reinterpret_cast<const char*>(&kDtypeF32), 4);

  if (matrix.stores_f32()) {
    out.write(reinterpret_cast<const char*>(matrix.f32_data()),
              static_cast<std::streamsize>(matrix.n_rows() * matrix.n_dims() *
                                           sizeof(float)));
  } else {
    // Narrow to disk precision row by row.
    std::vector<float> rowbuf(matrix.n_dims());
    const double* src = matrix.f64_data();
    for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
      for (std::size_t j = 0; j < matrix.n_dims(); ++j) {
        rowbuf[j] = static_cast<float>(src[i * matrix.n_dims() + j]);
      }
      out.write(reinterpret_cast<const char*>(rowbuf.data()),
                static_cast<std::streamsize>(rowbuf.size() * sizeof(float)));
    }
  }
  out.flush();
  if (!out) {
    throw Error("I/O failure while writing " + path.string());
  }
  if (!matrix.ids().empty()) {
    std::filesystem::path sidecar = path;
    sidecar += ".ids";
    std::ofstream ids_out(sidecar, std::ios::trunc);
    for (const auto& id : matrix.ids()) ids_out << id << '\n';
    if (!ids_out) {
      throw Error("I/O failure while writing " + sidecar.string());
    }
  }
}

// ---------------------------------------------------------------------------
// Metadata

MetadataTable::MetadataTable(std::vector<DocumentRecord> records)
    : records_(std::move(records)) {
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const DocumentRecord& rec = records_[i];
    if (rec.id.empty()) {
      throw DataError("record " + std::to_string(i) + " has an empty id");
    }
    if (!index_.emplace(rec.id, i).second) {
      throw DataError("duplicate document id \"" + rec.id + "\"");
    }
    for (const auto& [provider, score] : rec.toxicity) {
      if (!(score >= 0.0 && score <= 1.0)) {
        throw DataError("toxicity score " + std::to_string(score) + " for \"" +
                        rec.id + "\" (provider " + provider +
                        ") is outside [0,1]");
      }
    }
    if (!(rec.weight >= 0.0)) {
      throw DataError("negative weight for \"" + rec.id + "\"");
    }
    if (rec.topic && *rec.topic < 0) {
      throw DataError("negative topic label for \"" + rec.id + "\"");
    }
  }
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& ref = records_[i].rephrased_of;
    if (!ref) continue;
    auto it = index_.find(*ref);
    if (it == index_.end()) {
      throw DataError("rephrased_of \"" + *ref + "\" on record \"" +
                      records_[i].id + "\" names no existing id");
    }
    // First counterpart wins if a document was rephrased more than once.
    counterpart_.emplace(it->second, i);
  }
}

std::optional<std::size_t> MetadataTable::row_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<std::size_t> MetadataTable::counterpart_of(
    std::size_t row) const {
  auto it = counterpart_.find(row);
  return it == counterpart_.end() ? std::nullopt : std::optional(it->second);
}

MetadataTable read_metadata(const std::filesystem::path& path,
                            std::size_t expected_n) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open metadata file " + path.string());
  }
  std::vector<DocumentRecord> records;
  records.reserve(expected_n);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("metadata line " + std::to_string(line_no) +
                      " is not valid JSON: " + e.what());
    }
    DocumentRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      if (j.contains("tox") && !j["tox"].is_null()) {
        for (auto& [provider, score] : j["tox"].items()) {
          rec.toxicity[provider] = score.get<double>();
        }
      }
      if (j.contains("topic") && !j["topic"].is_null()) {
        rec.topic = j["topic"].get<std::int64_t>();
      }
      if (j.contains("weight") && !j["weight"].is_null()) {
        rec.weight = j["weight"].get<double>();
      }
      if (j.contains("rephrased_of") && !j["rephrased_of"].is_null()) {
        rec.rephrased_of = j["rephrased_of"].get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("metadata line " + std::to_string(line_no) +
                      " has an invalid field: " + e.what());
    }
    records.push_back(std::move(rec));
  }
  if (records.size() != expected_n) {
    throw DataError("metadata " + path.string() + " has " +
                    std::to_string(records.size()) + " records, expected " +
                    std::to_string(expected_n));
  }
  return MetadataTable(std::move(records));
}

void write_metadata(const MetadataTable& metadata,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  for (const auto& rec : metadata.records()) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["tox"] = nlohmann::json::object();
    for (const auto& [provider, score] : rec.toxicity) {
      j["tox"][provider] = score;
    }
    j["topic"] = rec.topic ? nlohmann::json(*rec.topic) : nlohmann::json();
    j["weight"] = rec.weight;
    j["rephrased_of"] =
        rec.rephrased_of ? nlohmann::json(*rec.rephrased_of) : nlohmann::json();
    out << j.dump() << '\n';
  }
  if (!out) {
    throw Error("I/O failure while writing " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Views

void CorpusView::validate() const {
  if (matrix == nullptr || metadata == nullptr) {
    throw DataError("corpus view is not bound to a matrix and metadata");
  }
  std::vector<bool> seen(matrix->n_rows(), false);
  for (Row r : selection) {
    if (r >= matrix->n_rows()) {
      throw DataError("selection index " + std::to_string(r) +
                      " is out of bounds");
    }
    if (seen[r]) {
      throw DataError("selection index " + std::to_string(r) + " repeats");
    }
    seen[r] = true;
  }
  for (const auto& [from, to] : replacements) {
    if (!seen[from]) {
      throw DataError("replaced row " + std::to_string(from) +
                      " is not in the selection");
    }
    if (to >= matrix->n_rows()) {
      throw DataError("replacement target " + std::to_string(to) +
                      " is out of bounds");
    }
  }
}

CorpusView align(const EmbeddingMatrix& matrix, const MetadataTable& metadata) {
  if (matrix.n_rows() != metadata.size()) {
    throw DataError("matrix has " + std::to_string(matrix.n_rows()) +
                    " rows but metadata has " + std::to_string(metadata.size()) +
                    " records");
  }
  if (!matrix.ids().empty()) {
    for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
      if (matrix.ids()[i] != metadata.record(i).id) {
        throw DataError("alignment mismatch at row " + std::to_string(i) +
                        ": sidecar id \"" + matrix.ids()[i] +
                        "\" vs metadata id \"" + metadata.record(i).id + "\"");
      }
    }
  }
  CorpusView view;
  view.matrix = &matrix;
  view.metadata = &metadata;
  view.selection.resize(matrix.n_rows());
  for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
    view.selection[i] = static_cast<Row>(i);
  }
  return view;
}

CorpusView originals_only(const EmbeddingMatrix& matrix,
                          const MetadataTable& metadata) {
  CorpusView view = align(matrix, metadata);
  std::vector<Row> originals;
  originals.reserve(view.selection.size());
  for (Row r : view.selection) {
    if (!metadata.record(r).rephrased_of) originals.push_back(r);
  }
  view.selection = std::move(originals);
  if (view.selection.empty()) {
    throw DataError("corpus has no original rows (every record is a rephrased counterpart)");
  }
  return view;
}

}  // namespace semshift
