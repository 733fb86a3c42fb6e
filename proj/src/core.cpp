#include "fustal/core.hpp"

#include <algorithm>
#include <cmath>

#include "fustal/errors.hpp"

namespace fustal {

Interval::Interval(double start, double end) : start_(start), end_(end) {
  if (!std::isfinite(start) || !std::isfinite(end) || start < 0.0 || !(start < end)) {
    throw ContractError("invalid interval [" + std::to_string(start) + ", " +
                        std::to_string(end) + ")");
  }
}

double intersection_length(const Interval& a, const Interval& b) noexcept {
  return std::max(0.0, std::min(a.end(), b.end()) - std::max(a.start(), b.start()));
}

double iou(const Interval& a, const Interval& b) noexcept {
  const double inter = intersection_length(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.length() + b.length() - inter;
  return inter / uni;
}

std::vector<Interval> merge_adjacent(std::vector<Interval> intervals, double gap) {
  if (intervals.empty()) return intervals;
  std::sort(intervals.begin(), intervals.end(), [](const Interval& a, const Interval& b) {
    return a.start() < b.start() || (a.start() == b.start() && a.end() < b.end());
  });
  std::vector<Interval> merged;
  merged.reserve(intervals.size());
  double start = intervals.front().start();
  double end = intervals.front().end();
  for (std::size_t i = 1; i < intervals.size(); ++i) {
    const auto& next = intervals[i];
    if (next.start() - end <= gap) {
      end = std::max(end, next.end());
    } else {
      merged.emplace_back(start, end);
      start = next.start();
      end = next.end();
    }
  }
  merged.emplace_back(start, end);
  return merged;
}

std::vector<int> VideoRecord::label_classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < label.size(); ++c)
    if (label[c]) out.push_back(static_cast<int>(c));
  return out;
}

void VideoRecord::validate() const {
  if (features.rows == 0 || features.cols == 0)
    throw DataError("video " + id + ": empty feature matrix");
  if (features.data.size() != features.rows * features.cols)
    throw DataError("video " + id + ": feature buffer size mismatch");
  if (std::none_of(label.begin(), label.end(), [](auto v) { return v != 0; }))
    throw DataError("video " + id + ": label has no positive class");
  if (!(seconds_per_snippet > 0.0))
    throw DataError("video " + id + ": seconds_per_snippet must be positive");
  for (float v : features.data)
    if (!std::isfinite(v)) throw DataError("video " + id + ": non-finite feature value");
}

Proposal make_proposal(std::string video_id, Interval interval, int class_id, double conf) {
  if (!(conf >= 0.0 && conf <= 1.0))
    throw ContractError("proposal conf outside [0,1]: " + std::to_string(conf));
  return Proposal{std::move(video_id), interval, class_id, conf, std::nullopt};
}

std::size_t ceil_fraction(std::size_t total, double fraction) {
  const auto v = static_cast<std::size_t>(std::ceil(static_cast<double>(total) * fraction - 1e-9));
  return std::max<std::size_t>(1, v);
}

}  // namespace fustal
