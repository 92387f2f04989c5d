#include "olab/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "olab/errors.hpp"

namespace olab::manifest {

using nlohmann::json;

uint64_t fnv1a_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("fnv1a_file: cannot open " + path);
  uint64_t h = 14695981039346656037ull;
  unsigned char buf[1 << 16];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0)
    for (size_t i = 0; i < n; ++i) {
      h ^= buf[i];
      h *= 1099511628211ull;
    }
  std::fclose(f);
  return h;
}

std::string hash_string(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string Manifest::to_json() const {
  json j;
  j["command"] = command;
  j["tool_version"] = tool_version;
  j["seed"] = seed;
  j["resolved_config"] = resolved_config;
  j["inputs"] = inputs;
  j["environment"] = environment;
  j["wall_clock_s"] = wall_clock_s;
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("manifest: malformed JSON");
  Manifest m;
  m.command = j.value("command", "");
  m.tool_version = j.value("tool_version", "");
  m.seed = j.value("seed", uint64_t{0});
  m.resolved_config = j.value("resolved_config", "");
  if (j.contains("inputs"))
    m.inputs = j["inputs"].get<std::map<std::string, std::string>>();
  if (j.contains("environment"))
    m.environment = j["environment"].get<std::map<std::string, std::string>>();
  m.wall_clock_s = j.value("wall_clock_s", 0.0);
  return m;
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("write_manifest: cannot open " + path);
  out << m.to_json();
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_manifest: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return Manifest::from_json(buf.str());
}

}  // namespace olab::manifest
