#pragma once

// Prior-based false-positive filter: proposals that overlap few others in
// their video are likely false positives.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/dataio.hpp"

namespace fustal::selector {

// Sum of class-agnostic IoU with every other proposal (same video assumed).
std::vector<double> iou_scores(std::span<const Proposal> proposals);

// Fills iou_score for every proposal, grouping by video_id. Order preserved.
void assign_iou_scores(std::vector<Proposal>& proposals);

// Keeps exactly the proposals with iou_score >= gamma and conf >= eta.
// Unset iou scores are computed first.
std::vector<Proposal> filter(std::vector<Proposal> proposals, double gamma, double eta);

// Max IoU against any ground-truth segment of the same video.
double max_gt_iou(const Proposal& p, std::span<const GroundTruthSegment> ground_truth);

inline constexpr double kFalsePositiveIou = 0.1;

struct HistogramRow {
  double bin_upper = 0.0;  // bin covers (bin_upper - width, bin_upper]; the first also holds 0
  std::size_t fp_count = 0;
  std::size_t tp_count = 0;
};

std::vector<HistogramRow> fp_distribution(std::vector<Proposal> proposals,
                                          std::span<const GroundTruthSegment> ground_truth,
                                          double bin_width = 0.1);

void write_histogram_csv(const std::filesystem::path& path, std::span<const HistogramRow> rows,
                         const std::optional<dataio::ArtifactMeta>& meta);

}  // namespace fustal::selector
