#pragma once

// Stage glue shared by the CLI and the acceptance runs: generation,
// selection, training and the ablation ladder.

#include <functional>
#include <string>
#include <vector>

#include "fustal/config.hpp"
#include "fustal/eval.hpp"
#include "fustal/selector.hpp"

namespace fustal::pipeline {

// Pseudo-label proposals for training videos: labeled classes plus predicted
// ones, NMS at the pseudo-label threshold.
std::vector<Proposal> generate_proposals(const generator::GeneratorNet& net, const std::vector<VideoRecord>& videos,
                                         const Config& config);

// Test-time generator predictions: predicted classes only, inference NMS.
std::vector<Proposal> generator_predict(const generator::GeneratorNet& net, const std::vector<VideoRecord>& videos,
                                        const Config& config);

// Scores every proposal and keeps iou_score >= gamma and conf >= eta.
std::vector<Proposal> select(std::vector<Proposal> proposals, double gamma, double eta);

struct SelectionDiagnostics {
  std::size_t num_fp = 0;
  std::size_t num_tp = 0;
  double mean_iou_score_fp = 0.0;
  double mean_iou_score_tp = 0.0;
  double precision_before = 0.0;
  double precision_after = 0.0;
  std::size_t kept = 0;
  std::size_t fp_mode_bin = 0;  // histogram index holding the most FPs
  std::vector<selector::HistogramRow> histogram;

  nlohmann::json to_json() const;
};

SelectionDiagnostics diagnose_selection(std::vector<Proposal> proposals,
                                        std::span<const GroundTruthSegment> ground_truth, const SelectConfig& select);

struct AblationStep {
  std::string name;
  bool cross_video = true;  // generator trained with lambda2 from config (else 0)
  bool student = true;
  bool threshold = false;   // eta applied
  bool mil = false;
  bool filter = false;      // gamma applied
  bool distill = false;
};

// base, +cross-video, base+student, +student, +thresholding, +MIL, +filter, +EMA.
std::vector<AblationStep> ablation_ladder();

struct AblationRun {
  std::vector<eval::MetricsRow> rows;  // one per ladder step, test split
  SelectionDiagnostics diagnostics;    // cross-video generator on the train split
};

using Progress = std::function<void(const std::string&)>;

AblationRun run_ablation(const dataio::SynthData& data, const Config& config, const Progress& progress = {});

// Mean of each named row over runs; rows are matched by position.
std::vector<eval::MetricsRow> average_rows(std::span<const std::vector<eval::MetricsRow>> runs);

}  // namespace fustal::pipeline
