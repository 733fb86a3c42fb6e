#pragma once

// Temporal-IoU mAP with greedy one-to-one matching and all-point
// interpolated average precision.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/dataio.hpp"

namespace fustal::eval {

// Predictions and ground truth are assumed to share one class; matching is
// per video. Returns 0 when there is no ground truth.
double average_precision(std::span<const Proposal> predictions, std::span<const GroundTruthSegment> ground_truth,
                         double tiou);

std::vector<double> default_tious();

struct MapTable {
  std::vector<double> tious;
  std::vector<double> map;  // one entry per tiou, in [0,1]
  double avg_01_05 = 0.0;
  double avg_03_07 = 0.0;
  double avg_01_07 = 0.0;
};

// Mean AP over classes that have ground truth. Averages use the entries whose
// tiou falls in each range. Throws EvalError on empty ground truth.
MapTable map_suite(std::span<const Proposal> predictions, std::span<const GroundTruthSegment> ground_truth,
                   std::vector<double> tious = default_tious());

struct MetricsRow {
  std::string name;
  MapTable table;
};

// Percent values, one row per method: name, mAP@tiou..., three averages.
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows,
                       const std::optional<dataio::ArtifactMeta>& meta);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

std::string format_table(std::span<const MetricsRow> rows);

}  // namespace fustal::eval
