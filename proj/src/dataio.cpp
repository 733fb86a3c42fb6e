#include "fustal/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "fustal/diffnum.hpp"
#include "fustal/errors.hpp"

namespace fustal::dataio {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'W', 'S', 'T', 'F'};
constexpr std::uint32_t kVersion = 1;

void write_u32_le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

bool read_u32_le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) return false;
  v = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
      (std::uint32_t(b[3]) << 24);
  return true;
}

nlohmann::json parse_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "file not found");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string(), e.byte, e.what());
  }
}

template <class Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "file not found");
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(is, line)) {
    const auto line_offset = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string(), line_offset + (e.byte > 0 ? e.byte - 1 : 0), e.what());
    }
    if (!obj.is_object()) throw FormatError(path.string(), line_offset, "expected a JSON object");
    if (obj.contains("meta")) continue;
    try {
      fn(obj);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string(), line_offset, e.what());
    } catch (const ContractError& e) {
      throw FormatError(path.string(), line_offset, e.what());
    }
  }
}

void write_lines(const fs::path& path, const std::vector<nlohmann::json>& rows,
                 const std::optional<ArtifactMeta>& meta) {
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  if (meta) os << nlohmann::json{{"meta", meta->to_json()}}.dump() << '\n';
  for (const auto& r : rows) os << r.dump() << '\n';
  if (!os) throw IoError(path.string(), "write failed");
}

}  // namespace

void write_features(const fs::path& path, const FeatureMatrix& m) {
  if (m.data.size() != m.rows * m.cols) throw ContractError("feature matrix buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  os.write(kMagic.data(), 4);
  write_u32_le(os, kVersion);
  write_u32_le(os, static_cast<std::uint32_t>(m.rows));
  write_u32_le(os, static_cast<std::uint32_t>(m.cols));
  diffnum::write_f32_le(os, m.data);
  if (!os) throw IoError(path.string(), "write failed");
}

FeatureMatrix read_features(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "feature file not found");
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (is.gcount() != 4 || magic != kMagic) throw FormatError(path.string(), 0, "bad magic, expected WSTF");
  std::uint32_t version = 0, rows = 0, cols = 0;
  if (!read_u32_le(is, version)) throw FormatError(path.string(), 4, "truncated header");
  if (version != kVersion)
    throw FormatError(path.string(), 4, "unsupported version " + std::to_string(version));
  if (!read_u32_le(is, rows)) throw FormatError(path.string(), 8, "truncated header");
  if (!read_u32_le(is, cols)) throw FormatError(path.string(), 12, "truncated header");
  if (rows == 0) throw FormatError(path.string(), 8, "T must be positive");
  if (cols == 0) throw FormatError(path.string(), 12, "D must be positive");

  FeatureMatrix m(rows, cols);
  diffnum::read_f32_le(is, m.data);
  if (!is) throw FormatError(path.string(), 16, "payload shorter than T*D values");
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(path.string(), 16 + std::uint64_t(rows) * cols * 4, "trailing bytes after payload");
  for (std::size_t i = 0; i < m.data.size(); ++i)
    if (!std::isfinite(m.data[i]))
      throw DataError(path.string() + ": non-finite value at row " + std::to_string(i / cols) +
                      ", column " + std::to_string(i % cols));
  return m;
}

Manifest read_manifest(const fs::path& path, std::size_t num_classes) {
  const auto doc = parse_json_file(path);
  if (!doc.is_array()) throw FormatError(path.string(), 0, "manifest must be a JSON array");
  Manifest manifest;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::string where = path.string() + "[" + std::to_string(i) + "]";
    ManifestEntry entry;
    try {
      entry.video_id = e.at("video_id").get<std::string>();
      entry.feature_path = e.at("feature_path").get<std::string>();
      entry.label_class_ids = e.at("label_class_ids").get<std::vector<int>>();
      entry.seconds_per_snippet = e.at("seconds_per_snippet").get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
    if (!seen.insert(entry.video_id).second) throw DataError(where + ": duplicate video_id " + entry.video_id);
    if (entry.label_class_ids.empty()) throw DataError(where + ": label_class_ids is empty");
    for (int c : entry.label_class_ids)
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
        throw DataError(where + ": class id " + std::to_string(c) + " outside [0," +
                        std::to_string(num_classes) + ")");
    if (!(entry.seconds_per_snippet > 0.0)) throw DataError(where + ": seconds_per_snippet must be positive");
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  auto doc = nlohmann::json::array();
  for (const auto& e : manifest.entries)
    doc.push_back({{"video_id", e.video_id},
                   {"feature_path", e.feature_path},
                   {"label_class_ids", e.label_class_ids},
                   {"seconds_per_snippet", e.seconds_per_snippet}});
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  os << doc.dump(2) << '\n';
}

std::vector<VideoRecord> load_videos(const fs::path& manifest_path, std::size_t num_classes) {
  const auto manifest = read_manifest(manifest_path, num_classes);
  const auto base = manifest_path.parent_path();
  std::vector<VideoRecord> videos;
  videos.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    fs::path fp(e.feature_path);
    if (fp.is_relative()) fp = base / fp;
    VideoRecord v;
    v.id = e.video_id;
    v.features = read_features(fp);
    v.label.assign(num_classes, 0);
    for (int c : e.label_class_ids) v.label[static_cast<std::size_t>(c)] = 1;
    v.seconds_per_snippet = e.seconds_per_snippet;
    v.validate();
    videos.push_back(std::move(v));
  }
  return videos;
}

nlohmann::json ArtifactMeta::to_json() const {
  return {{"config_hash", config_hash}, {"seed", seed}, {"kind", kind}};
}

void write_proposals(const fs::path& path, const std::vector<Proposal>& proposals,
                     const std::optional<ArtifactMeta>& meta) {
  std::vector<nlohmann::json> rows;
  rows.reserve(proposals.size());
  for (const auto& p : proposals) {
    nlohmann::json r{{"video_id", p.video_id},
                     {"start", p.interval.start()},
                     {"end", p.interval.end()},
                     {"class_id", p.class_id},
                     {"conf", p.conf}};
    if (p.iou_score) r["iou_score"] = *p.iou_score;
    rows.push_back(std::move(r));
  }
  write_lines(path, rows, meta);
}

std::vector<Proposal> read_proposals(const fs::path& path) {
  std::vector<Proposal> out;
  for_each_jsonl(path, [&](const nlohmann::json& o) {
    auto p = make_proposal(o.at("video_id").get<std::string>(),
                           Interval(o.at("start").get<double>(), o.at("end").get<double>()),
                           o.at("class_id").get<int>(), o.at("conf").get<double>());
    if (o.contains("iou_score") && !o.at("iou_score").is_null()) {
      const double s = o.at("iou_score").get<double>();
      if (!(s >= 0.0)) throw ContractError("negative iou_score");
      p.iou_score = s;
    }
    out.push_back(std::move(p));
  });
  return out;
}

void write_ground_truth(const fs::path& path, const std::vector<GroundTruthSegment>& segments,
                        const std::optional<ArtifactMeta>& meta) {
  std::vector<nlohmann::json> rows;
  rows.reserve(segments.size());
  for (const auto& g : segments)
    rows.push_back({{"video_id", g.video_id},
                    {"start", g.interval.start()},
                    {"end", g.interval.end()},
                    {"class_id", g.class_id}});
  write_lines(path, rows, meta);
}

std::vector<GroundTruthSegment> read_ground_truth(const fs::path& path) {
  std::vector<GroundTruthSegment> out;
  for_each_jsonl(path, [&](const nlohmann::json& o) {
    out.push_back(GroundTruthSegment{o.at("video_id").get<std::string>(),
                                     Interval(o.at("start").get<double>(), o.at("end").get<double>()),
                                     o.at("class_id").get<int>()});
  });
  return out;
}

// --- synthetic data ------------------------------------------------------------

void SynthConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("synth.") + field, "must be positive");
  };
  positive(num_videos, "num_videos");
  positive(num_classes, "num_classes");
  positive(length, "length");
  positive(modality_dim, "modality_dim");
  positive(actions_per_video.first, "actions_per_video");
  positive(action_length.first, "action_length");
  if (actions_per_video.first > actions_per_video.second)
    throw ConfigError("synth.actions_per_video", "min exceeds max");
  if (action_length.first > action_length.second)
    throw ConfigError("synth.action_length", "min exceeds max");
  if (action_length.second > length)
    throw ConfigError("synth.action_length", "maximum action length exceeds T");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth.noise_sigma", "must be non-negative");
  if (!(confusable_prob >= 0.0 && confusable_prob <= 1.0))
    throw ConfigError("synth.confusable_prob", "must lie in [0,1]");
}

namespace {

using Vec = std::vector<double>;

Vec random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  double s = 0.0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (auto& x : v) x /= s;
  return v;
}

Vec blend_unit(const Vec& a, const Vec& b, double wa, double wb) {
  Vec v(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v[i] = wa * a[i] + wb * b[i];
    s += v[i] * v[i];
  }
  s = std::sqrt(s);
  for (auto& x : v) x /= s;
  return v;
}

struct Prototypes {
  std::vector<Vec> classes;
  std::vector<Vec> confusables;
  Vec background;
};

struct Span {
  std::size_t start, end;  // [start, end)
};

bool overlaps_any(const std::vector<Span>& taken, std::size_t s, std::size_t e, std::size_t margin) {
  for (const auto& t : taken)
    if (s < t.end + margin && t.start < e + margin) return true;
  return false;
}

void build_video(const SynthConfig& cfg, const Prototypes& protos, const std::string& id,
                 std::mt19937_64& rng, SynthSplit& split) {
  const std::size_t T = cfg.length;
  const std::size_t D = 2 * cfg.modality_dim;
  std::uniform_int_distribution<std::size_t> n_actions(cfg.actions_per_video.first,
                                                       cfg.actions_per_video.second);
  std::uniform_int_distribution<std::size_t> action_len(cfg.action_length.first, cfg.action_length.second);
  std::uniform_int_distribution<int> class_dist(0, static_cast<int>(cfg.num_classes) - 1);
  std::bernoulli_distribution confusable(cfg.confusable_prob);
  std::uniform_int_distribution<std::size_t> confusable_gap(2, 5);
  std::bernoulli_distribution before(0.5);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  // Which prototype generates each snippet; -1 = background.
  std::vector<const Vec*> source(T, &protos.background);
  std::vector<Span> taken;
  MultiHot label(cfg.num_classes, 0);

  const std::size_t wanted = n_actions(rng);
  std::size_t planted = 0;
  for (std::size_t attempt = 0; planted < wanted && attempt < 200; ++attempt) {
    const std::size_t len = action_len(rng);
    std::uniform_int_distribution<std::size_t> start_dist(0, T - len);
    const std::size_t s = start_dist(rng);
    if (overlaps_any(taken, s, s + len, 2)) continue;
    const int c = class_dist(rng);
    taken.push_back({s, s + len});
    for (std::size_t t = s; t < s + len; ++t) source[t] = &protos.classes[static_cast<std::size_t>(c)];
    label[static_cast<std::size_t>(c)] = 1;
    split.ground_truth.push_back({id, Interval(double(s), double(s + len)), c});
    ++planted;

    if (!confusable(rng)) continue;
    const std::size_t gap = confusable_gap(rng);
    const std::size_t clen = std::max<std::size_t>(2, action_len(rng) / 2);
    const bool place_before = before(rng);
    std::size_t cs = 0;
    if (place_before) {
      if (s < gap + clen) continue;
      cs = s - gap - clen;
    } else {
      cs = s + len + gap;
      if (cs + clen > T) continue;
    }
    if (overlaps_any(taken, cs, cs + clen, 1)) continue;
    taken.push_back({cs, cs + clen});
    for (std::size_t t = cs; t < cs + clen; ++t) source[t] = &protos.confusables[static_cast<std::size_t>(c)];
    split.confusables.push_back({id, Interval(double(cs), double(cs + clen)), c});
  }
  if (planted == 0) {
    // Guarantee the label invariant even if placement kept failing.
    const std::size_t len = std::min(cfg.action_length.first, T);
    const int c = class_dist(rng);
    for (std::size_t t = 0; t < len; ++t) source[t] = &protos.classes[static_cast<std::size_t>(c)];
    label[static_cast<std::size_t>(c)] = 1;
    split.ground_truth.push_back({id, Interval(0.0, double(len)), c});
  }

  VideoRecord v;
  v.id = id;
  v.features = FeatureMatrix(T, D);
  v.label = std::move(label);
  v.seconds_per_snippet = 1.0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i)
      v.features.at(t, i) = static_cast<float>((*source[t])[i] + noise(rng));
  split.videos.push_back(std::move(v));
}

}  // namespace

SynthData generate_synth(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t D = 2 * config.modality_dim;
  Prototypes protos;
  for (std::size_t c = 0; c < config.num_classes; ++c) protos.classes.push_back(random_unit(D, rng));
  protos.background = random_unit(D, rng);
  for (std::size_t c = 0; c < config.num_classes; ++c)
    protos.confusables.push_back(blend_unit(protos.classes[c], random_unit(D, rng), 0.7, 0.3));

  SynthData data;
  char id[64];
  for (std::size_t n = 0; n < config.num_videos; ++n) {
    std::snprintf(id, sizeof id, "train_%04zu", n);
    build_video(config, protos, id, rng, data.train);
  }
  for (std::size_t n = 0; n < config.num_test_videos; ++n) {
    std::snprintf(id, sizeof id, "test_%04zu", n);
    build_video(config, protos, id, rng, data.test);
  }
  return data;
}

void write_synth(const fs::path& dir, const SynthData& data, const std::optional<ArtifactMeta>& meta) {
  auto write_split = [&](const std::string& name, const SynthSplit& split) {
    const auto split_dir = dir / name;
    fs::create_directories(split_dir / "features");
    Manifest manifest;
    for (const auto& v : split.videos) {
      const std::string rel = "features/" + v.id + ".wstf";
      write_features(split_dir / rel, v.features);
      manifest.entries.push_back({v.id, rel, v.label_classes(), v.seconds_per_snippet});
    }
    write_manifest(split_dir / "manifest.json", manifest);
    write_ground_truth(split_dir / "gt.jsonl", split.ground_truth, meta);
  };
  write_split("train", data.train);
  if (!data.test.videos.empty()) write_split("test", data.test);
}

}  // namespace fustal::dataio
