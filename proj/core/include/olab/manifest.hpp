#pragma once

#include <map>
#include <string>

namespace olab::manifest {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything needed to re-run the command that produced an artifact.
struct Manifest {
  std::string command;
  std::string tool_version = kToolVersion;
  uint64_t seed = 0;
  std::string resolved_config;            // serialized ExperimentConfig
  std::map<std::string, std::string> inputs;  // path -> content hash
  std::map<std::string, std::string> environment;  // echoed overrides
  double wall_clock_s = 0.0;              // excluded from reproducibility checks

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

uint64_t fnv1a_file(const std::string& path);  // throws DataError
std::string hash_string(uint64_t h);

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

}  // namespace olab::manifest
