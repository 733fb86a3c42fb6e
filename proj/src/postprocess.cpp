#include "fustal/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "fustal/errors.hpp"
#include "fustal/generator.hpp"

namespace fustal::postprocess {

void DecodeConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("postprocess.thresholds", "must not be empty");
  for (double t : thresholds)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("postprocess.thresholds", "each threshold must lie in (0,1)");
  if (!(min_len >= 0.0)) throw ConfigError("postprocess.min_len", "must be non-negative");
  if (!(merge_gap >= 0.0)) throw ConfigError("postprocess.merge_gap", "must be non-negative");
  if (!(pseudo_nms_iou > 0.0 && pseudo_nms_iou <= 1.0))
    throw ConfigError("postprocess.pseudo_nms_iou", "must lie in (0,1]");
  if (!(infer_nms_iou > 0.0 && infer_nms_iou <= 1.0))
    throw ConfigError("postprocess.infer_nms_iou", "must lie in (0,1]");
  if (!(class_keep >= 0.0 && class_keep <= 1.0)) throw ConfigError("postprocess.class_keep", "must lie in [0,1]");
}

std::vector<int> select_classes(const diffnum::Tensor& logits, std::size_t k, double class_keep,
                                const MultiHot* label) {
  const auto scores = generator::video_scores(logits, k);
  std::vector<int> out;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const bool labeled = label && c < label->size() && (*label)[c];
    if (labeled || scores[c] >= class_keep) out.push_back(static_cast<int>(c));
  }
  return out;
}

std::vector<Proposal> cas_to_proposals(const std::string& video_id, const diffnum::Tensor& logits,
                                       std::span<const int> classes, std::span<const double> thresholds,
                                       double min_len, double merge_gap) {
  if (thresholds.empty()) throw ContractError("cas_to_proposals: no thresholds");
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  std::vector<Proposal> out;
  std::vector<double> score(T);
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= C) throw ContractError("cas_to_proposals: class out of range");
    for (std::size_t t = 0; t < T; ++t) score[t] = diffnum::sigmoid_scalar(double(logits.at(t, std::size_t(c))));
    for (double theta : thresholds) {
      if (!(theta > 0.0 && theta < 1.0)) throw ContractError("cas_to_proposals: threshold outside (0,1)");
      std::vector<Interval> runs;
      std::size_t t = 0;
      while (t < T) {
        if (score[t] < theta) {
          ++t;
          continue;
        }
        const std::size_t s = t;
        while (t < T && score[t] >= theta) ++t;
        runs.emplace_back(double(s), double(t));
      }
      for (const auto& run : merge_adjacent(std::move(runs), merge_gap)) {
        if (run.length() < min_len) continue;
        const auto s = static_cast<std::size_t>(run.start());
        const auto e = static_cast<std::size_t>(run.end());
        double acc = 0.0;
        for (std::size_t u = s; u < e; ++u) acc += score[u];
        out.push_back(make_proposal(video_id, run, c, acc / double(e - s)));
      }
    }
  }
  return out;
}

bool outranks(const Proposal& a, const Proposal& b) {
  if (a.conf != b.conf) return a.conf > b.conf;
  if (a.interval.start() != b.interval.start()) return a.interval.start() < b.interval.start();
  if (a.interval.length() != b.interval.length()) return a.interval.length() > b.interval.length();
  return std::tie(a.video_id, a.class_id) < std::tie(b.video_id, b.class_id);
}

std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ContractError("nms: threshold outside (0,1]");
  std::stable_sort(proposals.begin(), proposals.end(), outranks);
  std::map<std::pair<std::string, int>, std::vector<Interval>> kept_by_group;
  std::vector<Proposal> out;
  for (auto& p : proposals) {
    auto& kept = kept_by_group[{p.video_id, p.class_id}];
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Interval& k) { return iou(k, p.interval) > iou_threshold; });
    if (suppressed) continue;
    kept.push_back(p.interval);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fustal::postprocess
