#include "fustal/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "fustal/errors.hpp"

namespace fustal {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (!doc.contains(name_)) return;
    node_ = &doc.at(name_);
    if (!node_->is_object()) throw ConfigError(name_, "must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    const json& v = node_->at(key);
    const std::string field = name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
      if (v.is_number_unsigned()) {
        out = static_cast<T>(v.get<std::uint64_t>());
      } else {
        const auto i = v.get<std::int64_t>();
        if (i < 0) throw ConfigError(field, "must be non-negative");
        out = static_cast<T>(i);
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw ConfigError(field, "expected an array of numbers");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError(field, "expected an array of numbers");
        out.push_back(e.get<double>());
      }
    } else if constexpr (std::is_same_v<T, std::pair<std::size_t, std::size_t>>) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
        throw ConfigError(field, "expected [min, max] non-negative integers");
      out = {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
    }
  }

  bool has(const std::string& key) const { return node_ && node_->contains(key); }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, _] : node_->items())
      if (!seen_.count(key)) throw ConfigError(name_ + "." + key, "unknown field");
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

void SelectConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("hyperparameters.gamma", "must be non-negative");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("hyperparameters.eta", "must lie in [0,1]");
}

void Config::set_seed(std::uint64_t seed) {
  generator.seed = seed;
  student.seed = seed;
  synth.seed = seed;
}

void Config::validate() const {
  if (num_classes == 0) throw ConfigError("data.num_classes", "must be positive");
  generator.validate();
  student.validate();
  decode.validate();
  select.validate();
  synth.validate();
}

json Config::to_json() const {
  json j;
  j["hyperparameters"] = {
      {"k", generator.k_fraction},       {"k_hard", generator.k_hard_fraction},
      {"M", generator.mask_large},       {"m", generator.mask_small},
      {"tau", generator.tau},            {"lambda1", generator.lambda1},
      {"lambda2", generator.lambda2},    {"gamma", select.gamma},
      {"eta", select.eta},               {"eta_prime", student.eta_prime},
      {"alpha", student.ema_decay},      {"theta_b", generator.binarize_threshold},
  };
  j["generator"] = {{"embed_dim", generator.embed_dim},
                    {"iterations", generator.iterations},
                    {"lr", generator.learning_rate},
                    {"batch", generator.batch}};
  j["student"] = {{"embed_dim", student.embed_dim},
                  {"iterations", student.iterations},
                  {"lr", student.learning_rate},
                  {"batch", student.batch},
                  {"focal_alpha", student.focal_alpha},
                  {"focal_gamma", student.focal_gamma},
                  {"prior_prob", student.prior_prob},
                  {"use_mil", student.use_mil},
                  {"distill", student.distill},
                  {"distill_fraction", student.distill_fraction},
                  {"score_thresh", student.score_thresh},
                  {"nms_iou", student.nms_iou}};
  j["postprocess"] = {{"thresholds", decode.thresholds},
                      {"min_len", decode.min_len},
                      {"merge_gap", decode.merge_gap},
                      {"pseudo_nms_iou", decode.pseudo_nms_iou},
                      {"infer_nms_iou", decode.infer_nms_iou},
                      {"class_keep", decode.class_keep}};
  j["synth"] = {{"num_videos", synth.num_videos},
                {"num_test_videos", synth.num_test_videos},
                {"num_classes", synth.num_classes},
                {"length", synth.length},
                {"modality_dim", synth.modality_dim},
                {"actions_per_video", {synth.actions_per_video.first, synth.actions_per_video.second}},
                {"action_length", {synth.action_length.first, synth.action_length.second}},
                {"noise_sigma", synth.noise_sigma},
                {"confusable_prob", synth.confusable_prob}};
  j["data"] = {{"num_classes", num_classes}};
  return j;
}

std::string Config::hash() const {
  const std::string canon = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

dataio::ArtifactMeta Config::meta(std::uint64_t seed, std::string kind) const {
  return dataio::ArtifactMeta{hash(), seed, std::move(kind)};
}

Config config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  static const std::set<std::string> sections{"hyperparameters", "generator", "student", "postprocess", "synth", "data"};
  for (const auto& [key, _] : doc.items())
    if (!sections.count(key)) throw ConfigError(key, "unknown section");

  Config c;
  Section hp(doc, "hyperparameters");
  hp.get("k", c.generator.k_fraction);
  hp.get("k_hard", c.generator.k_hard_fraction);
  hp.get("M", c.generator.mask_large);
  hp.get("m", c.generator.mask_small);
  hp.get("tau", c.generator.tau);
  hp.get("lambda1", c.generator.lambda1);
  hp.get("lambda2", c.generator.lambda2);
  hp.get("gamma", c.select.gamma);
  hp.get("eta", c.select.eta);
  hp.get("eta_prime", c.student.eta_prime);
  hp.get("alpha", c.student.ema_decay);
  hp.get("theta_b", c.generator.binarize_threshold);
  hp.finish();
  c.student.k_fraction = c.generator.k_fraction;

  Section gen(doc, "generator");
  gen.get("embed_dim", c.generator.embed_dim);
  gen.get("iterations", c.generator.iterations);
  gen.get("lr", c.generator.learning_rate);
  gen.get("batch", c.generator.batch);
  gen.finish();

  Section st(doc, "student");
  st.get("embed_dim", c.student.embed_dim);
  st.get("iterations", c.student.iterations);
  st.get("lr", c.student.learning_rate);
  st.get("batch", c.student.batch);
  st.get("focal_alpha", c.student.focal_alpha);
  st.get("focal_gamma", c.student.focal_gamma);
  st.get("prior_prob", c.student.prior_prob);
  st.get("use_mil", c.student.use_mil);
  st.get("distill", c.student.distill);
  st.get("distill_fraction", c.student.distill_fraction);
  st.get("score_thresh", c.student.score_thresh);
  st.get("nms_iou", c.student.nms_iou);
  st.finish();

  Section pp(doc, "postprocess");
  pp.get("thresholds", c.decode.thresholds);
  pp.get("min_len", c.decode.min_len);
  pp.get("merge_gap", c.decode.merge_gap);
  pp.get("pseudo_nms_iou", c.decode.pseudo_nms_iou);
  pp.get("infer_nms_iou", c.decode.infer_nms_iou);
  pp.get("class_keep", c.decode.class_keep);
  pp.finish();

  Section sy(doc, "synth");
  sy.get("num_videos", c.synth.num_videos);
  sy.get("num_test_videos", c.synth.num_test_videos);
  sy.get("num_classes", c.synth.num_classes);
  sy.get("length", c.synth.length);
  sy.get("modality_dim", c.synth.modality_dim);
  sy.get("actions_per_video", c.synth.actions_per_video);
  sy.get("action_length", c.synth.action_length);
  sy.get("noise_sigma", c.synth.noise_sigma);
  sy.get("confusable_prob", c.synth.confusable_prob);
  sy.finish();

  Section data(doc, "data");
  c.num_classes = c.synth.num_classes;
  data.get("num_classes", c.num_classes);
  data.finish();

  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string(), e.byte, e.what());
  }
  return config_from_json(doc);
}

}  // namespace fustal
