#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fustal/core.hpp"

namespace fustal::dataio {

// --- WSTF feature files ----------------------------------------------------
// "WSTF" | u32 version=1 | u32 T | u32 D | T*D float32, all little-endian.

void write_features(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_features(const std::filesystem::path& path);

// --- manifests ---------------------------------------------------------------

struct ManifestEntry {
  std::string video_id;
  std::string feature_path;  // relative paths resolve against the manifest's directory
  std::vector<int> label_class_ids;
  double seconds_per_snippet = 1.0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& path, std::size_t num_classes);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Loads every entry's features into VideoRecords.
std::vector<VideoRecord> load_videos(const std::filesystem::path& manifest_path,
                                     std::size_t num_classes);

// --- JSON Lines segments -------------------------------------------------------
// An optional first line {"meta": {...}} carries provenance; readers skip it.

struct ArtifactMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string kind;

  nlohmann::json to_json() const;
};

void write_proposals(const std::filesystem::path& path, const std::vector<Proposal>& proposals,
                     const std::optional<ArtifactMeta>& meta);
std::vector<Proposal> read_proposals(const std::filesystem::path& path);

void write_ground_truth(const std::filesystem::path& path,
                        const std::vector<GroundTruthSegment>& segments,
                        const std::optional<ArtifactMeta>& meta);
std::vector<GroundTruthSegment> read_ground_truth(const std::filesystem::path& path);

// --- synthetic oracle dataset --------------------------------------------------

struct SynthConfig {
  std::size_t num_videos = 50;
  std::size_t num_test_videos = 50;
  std::size_t num_classes = 5;
  std::size_t length = 200;       // T
  std::size_t modality_dim = 16;  // d; features are 2d wide
  std::pair<std::size_t, std::size_t> actions_per_video{1, 3};
  std::pair<std::size_t, std::size_t> action_length{8, 30};
  double noise_sigma = 0.2;
  double confusable_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSplit {
  std::vector<VideoRecord> videos;
  std::vector<GroundTruthSegment> ground_truth;
  // Planted distractor segments; never labeled as actions.
  std::vector<GroundTruthSegment> confusables;
};

struct SynthData {
  SynthSplit train;
  SynthSplit test;
};

// Deterministic for a fixed config (including seed). Both splits share the
// class, background and confusable prototypes.
SynthData generate_synth(const SynthConfig& config);

// Writes <dir>/<split>/features/*.wstf, <dir>/<split>/manifest.json and
// <dir>/<split>/gt.jsonl for both splits.
void write_synth(const std::filesystem::path& dir, const SynthData& data,
                 const std::optional<ArtifactMeta>& meta);

}  // namespace fustal::dataio
