#pragma once

#include "gpstep/config.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

namespace gpstep {

namespace detail {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xCBF29CE484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// Append-only record of stage outputs keyed by a chained config hash: each
// stage's hash folds its own config section into the upstream stage's hash,
// so touching an early section invalidates everything downstream and
// touching nothing makes every stage a no-op.
struct RunManifest {
  json data;

  static std::string path_in(const std::string& out_dir) {
    return (std::filesystem::path(out_dir) / "manifest.json").string();
  }

  static RunManifest load(const std::string& out_dir) {
    RunManifest m;
    m.data = json::object();
    m.data["tool_version"] = kToolVersion;
    m.data["stages"] = json::object();
    std::ifstream f(path_in(out_dir));
    if (f) {
      try {
        f >> m.data;
      } catch (const json::exception&) {
        throw ConfigError("corrupt manifest: " + path_in(out_dir));
      }
      if (!m.data.contains("stages")) m.data["stages"] = json::object();
    }
    return m;
  }

  void save(const std::string& out_dir) const {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(path_in(out_dir));
    if (!f) throw ConfigError("cannot write manifest: " + path_in(out_dir));
    f << data.dump(2) << "\n";
  }

  bool stage_current(const std::string& stage, const std::string& hash) const {
    const auto& stages = data.at("stages");
    if (!stages.contains(stage)) return false;
    const auto& s = stages.at(stage);
    if (!s.contains("hash") || s.at("hash").get<std::string>() != hash) return false;
    if (s.contains("outputs"))
      for (const auto& out : s.at("outputs"))
        if (!std::filesystem::exists(out.get<std::string>())) return false;
    return true;
  }

  void record_stage(const std::string& stage, const std::string& hash,
                    const std::vector<std::string>& outputs, json values) {
    json s;
    s["hash"] = hash;
    s["completed_at"] = now_iso();
    s["outputs"] = outputs;
    s["values"] = std::move(values);
    data["stages"][stage] = std::move(s);
    data["tool_version"] = kToolVersion;
  }

  const json* stage_values(const std::string& stage) const {
    const auto& stages = data.at("stages");
    if (!stages.contains(stage) || !stages.at(stage).contains("values")) return nullptr;
    return &stages.at(stage).at("values");
  }

  static std::string now_iso() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
  }
};

// Chained per-stage hashes over the canonical dump of the relevant config
// sections (plus seed and tool version at the root).
struct StageHashes {
  std::string generate_data;
  std::string train;
  std::string certify;
  std::string simulate;

  static StageHashes compute(const json& raw_config, std::uint64_t seed_override_or_config) {
    using detail::fnv1a;
    const auto section = [&](const char* key) {
      return raw_config.contains(key) ? raw_config.at(key).dump() : std::string("{}");
    };
    std::uint64_t h = fnv1a(std::string(kToolVersion));
    h = fnv1a(std::to_string(seed_override_or_config), h);
    h = fnv1a(section("plant"), h);
    h = fnv1a(section("data"), h);
    StageHashes out;
    out.generate_data = detail::hex64(h);
    h = fnv1a(section("gp"), h);
    out.train = detail::hex64(h);
    h = fnv1a(section("bounds"), h);
    h = fnv1a(section("controller"), h);
    out.certify = detail::hex64(h);
    h = fnv1a(section("simulation"), h);
    out.simulate = detail::hex64(h);
    return out;
  }
};

}  // namespace gpstep
