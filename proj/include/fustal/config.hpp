#pragma once

// One JSON document configures every stage. Missing fields keep their
// defaults; unknown or mistyped fields raise ConfigError naming the field.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fustal/dataio.hpp"
#include "fustal/generator.hpp"
#include "fustal/postprocess.hpp"
#include "fustal/student.hpp"

namespace fustal {

struct SelectConfig {
  double gamma = 0.2;
  double eta = 0.4;
  void validate() const;
};

struct Config {
  std::size_t num_classes = 5;
  generator::GenConfig generator;
  student::StudentConfig student;
  postprocess::DecodeConfig decode;
  SelectConfig select;
  dataio::SynthConfig synth;

  // Propagates one seed into every stage; each stage derives its own streams.
  void set_seed(std::uint64_t seed);
  void validate() const;

  nlohmann::json to_json() const;
  // FNV-1a 64 of the canonical dump of to_json(), as 16 hex digits. Seeds
  // are not part of the hash.
  std::string hash() const;
  dataio::ArtifactMeta meta(std::uint64_t seed, std::string kind) const;
};

Config config_from_json(const nlohmann::json& doc);
Config load_config(const std::filesystem::path& path);

}  // namespace fustal
