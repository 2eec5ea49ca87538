#ifndef SEMSHIFT_MANIFEST_HPP
#define SEMSHIFT_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semshift {

inline constexpr const char* kToolVersion = "0.1.0";

/// Run provenance: every CLI invocation records its inputs and outputs with
/// content hashes so reruns can be checked for bit-identical results.
struct RunManifest {
  std::string command;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  std::optional<std::uint64_t> seed;
  std::int64_t duration_ms = 0;
  bool complete = true;  // false when a run was interrupted

  void add_input(const std::filesystem::path& path) { inputs.push_back(path); }
  void add_output(const std::filesystem::path& path) {
    outputs.push_back(path);
  }
};

/// Writes `<outdir>/manifest.json`, hashing every listed file.
void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& outdir);

}  // namespace semshift

#endif  // SEMSHIFT_MANIFEST_HPP
