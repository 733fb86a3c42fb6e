#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fustal {

// Half-open span [start, end) in snippet units. Fractional bounds are allowed
// because the regression head predicts them.
class Interval {
 public:
  Interval(double start, double end);

  double start() const noexcept { return start_; }
  double end() const noexcept { return end_; }
  double length() const noexcept { return end_ - start_; }
  double center() const noexcept { return 0.5 * (start_ + end_); }

  friend bool operator==(const Interval&, const Interval&) = default;

 private:
  double start_;
  double end_;
};

double iou(const Interval& a, const Interval& b) noexcept;
double intersection_length(const Interval& a, const Interval& b) noexcept;

// Fuses intervals whose gap (next.start - current.end) is <= `gap`.
// Output is sorted by start and pairwise gaps exceed `gap`.
std::vector<Interval> merge_adjacent(std::vector<Interval> intervals, double gap);

// Row-major T x D matrix of snippet features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

using MultiHot = std::vector<std::uint8_t>;

struct VideoRecord {
  std::string id;
  FeatureMatrix features;
  MultiHot label;
  double seconds_per_snippet = 1.0;

  std::size_t length() const noexcept { return features.rows; }
  std::size_t num_classes() const noexcept { return label.size(); }
  std::vector<int> label_classes() const;

  // Throws DataError on an empty label, empty matrix or non-finite feature.
  void validate() const;
};

struct Proposal {
  std::string video_id;
  Interval interval;
  int class_id = 0;
  double conf = 0.0;
  std::optional<double> iou_score;
};

struct GroundTruthSegment {
  std::string video_id;
  Interval interval;
  int class_id = 0;
};

Proposal make_proposal(std::string video_id, Interval interval, int class_id, double conf);

std::size_t ceil_fraction(std::size_t total, double fraction);

}  // namespace fustal
