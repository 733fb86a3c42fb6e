#include "fustal/selector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "fustal/errors.hpp"

namespace fustal::selector {

std::vector<double> iou_scores(std::span<const Proposal> proposals) {
  const std::size_t G = proposals.size();
  std::vector<double> scores(G, 0.0);
  for (std::size_t v = 0; v < G; ++v)
    for (std::size_t g = v + 1; g < G; ++g) {
      const double m = iou(proposals[v].interval, proposals[g].interval);
      scores[v] += m;
      scores[g] += m;
    }
  return scores;
}

void assign_iou_scores(std::vector<Proposal>& proposals) {
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < proposals.size(); ++i) by_video[proposals[i].video_id].push_back(i);
  for (const auto& [video, idx] : by_video) {
    std::vector<Proposal> group;
    group.reserve(idx.size());
    for (auto i : idx) group.push_back(proposals[i]);
    const auto scores = iou_scores(group);
    for (std::size_t j = 0; j < idx.size(); ++j) proposals[idx[j]].iou_score = scores[j];
  }
}

std::vector<Proposal> filter(std::vector<Proposal> proposals, double gamma, double eta) {
  if (!(gamma >= 0.0)) throw ContractError("filter: gamma must be non-negative");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError("filter: eta must lie in [0,1]");
  if (std::any_of(proposals.begin(), proposals.end(), [](const Proposal& p) { return !p.iou_score; }))
    assign_iou_scores(proposals);
  std::vector<Proposal> kept;
  for (auto& p : proposals)
    if (*p.iou_score >= gamma && p.conf >= eta) kept.push_back(std::move(p));
  return kept;
}

double max_gt_iou(const Proposal& p, std::span<const GroundTruthSegment> ground_truth) {
  double best = 0.0;
  for (const auto& g : ground_truth)
    if (g.video_id == p.video_id) best = std::max(best, iou(g.interval, p.interval));
  return best;
}

std::vector<HistogramRow> fp_distribution(std::vector<Proposal> proposals,
                                          std::span<const GroundTruthSegment> ground_truth,
                                          double bin_width) {
  if (!(bin_width > 0.0)) throw ContractError("fp_distribution: bin width must be positive");
  if (std::any_of(proposals.begin(), proposals.end(), [](const Proposal& p) { return !p.iou_score; }))
    assign_iou_scores(proposals);
  std::map<std::string, std::vector<GroundTruthSegment>> gt_by_video;
  for (const auto& g : ground_truth) gt_by_video[g.video_id].push_back(g);

  std::vector<HistogramRow> rows;
  for (const auto& p : proposals) {
    const double s = *p.iou_score;
    const auto raw = static_cast<long>(std::ceil(s / bin_width - 1e-9)) - 1;
    const auto bin = static_cast<std::size_t>(std::max<long>(0, raw));
    while (rows.size() <= bin) rows.push_back({std::round(double(rows.size() + 1) * bin_width * 1e9) / 1e9, 0, 0});
    const auto it = gt_by_video.find(p.video_id);
    const double best = it == gt_by_video.end() ? 0.0 : max_gt_iou(p, it->second);
    if (best < kFalsePositiveIou)
      ++rows[bin].fp_count;
    else
      ++rows[bin].tp_count;
  }
  return rows;
}

void write_histogram_csv(const std::filesystem::path& path, std::span<const HistogramRow> rows,
                         const std::optional<dataio::ArtifactMeta>& meta) {
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  if (meta) os << "# config_hash=" << meta->config_hash << " seed=" << meta->seed << '\n';
  os << "bin_upper,fp_count,tp_count\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g", r.bin_upper);
    os << buf << ',' << r.fp_count << ',' << r.tp_count << '\n';
  }
}

}  // namespace fustal::selector
