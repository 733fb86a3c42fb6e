#pragma once

// Turns a T-CAS into scored proposals: multi-threshold binarization, run
// merging, confidence scoring and greedy per-class NMS.

#include <span>
#include <string>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/diffnum.hpp"

namespace fustal::postprocess {

struct DecodeConfig {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  double min_len = 2.0;
  double merge_gap = 1.0;
  double pseudo_nms_iou = 0.9;
  double infer_nms_iou = 0.5;
  double class_keep = 0.1;

  void validate() const;
};

// Classes whose softmaxed video-level score reaches class_keep, plus every
// class set in `label` when one is given.
std::vector<int> select_classes(const diffnum::Tensor& logits, std::size_t k, double class_keep,
                                const MultiHot* label = nullptr);

// For each class and threshold: binarize sigmoid(logits[:, c]) >= threshold,
// merge runs separated by <= merge_gap snippets, drop runs shorter than
// min_len. conf is the mean sigmoid score over the emitted interval. The
// union over thresholds is returned, overlaps included.
std::vector<Proposal> cas_to_proposals(const std::string& video_id, const diffnum::Tensor& logits,
                                       std::span<const int> classes, std::span<const double> thresholds,
                                       double min_len, double merge_gap);

// Greedy per-(video, class) suppression of iou > iou_threshold. Priority is
// conf, then earlier start, then longer interval. Output sorted by that
// priority across all groups.
std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold);

// Strict weak order used by nms (true when a outranks b).
bool outranks(const Proposal& a, const Proposal& b);

}  // namespace fustal::postprocess
