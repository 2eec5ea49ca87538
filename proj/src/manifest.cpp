#include "semshift/manifest.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "semshift/error.hpp"
#include "semshift/sha256.hpp"

namespace semshift {

void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& outdir) {
  nlohmann::json j;
  j["command"] = manifest.command;
  j["version"] = kToolVersion;
  if (manifest.seed) {
    j["seed"] = *manifest.seed;
  } else {
    j["seed"] = nullptr;
  }
  j["duration_ms"] = manifest.duration_ms;
  j["complete"] = manifest.complete;
  auto describe = [](const std::vector<std::filesystem::path>& paths) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& path : paths) {
      arr.push_back({{"path", path.string()},
                     {"sha256", sha256_file_hex(path)}});
    }
    return arr;
  };
  j["inputs"] = describe(manifest.inputs);
  j["outputs"] = describe(manifest.outputs);

  const std::filesystem::path target = outdir / "manifest.json";
  std::ofstream out(target, std::ios::trunc);
  if (!out) throw Error("cannot write " + target.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("I/O failure while writing " + target.string());
}

}  // namespace semshift
