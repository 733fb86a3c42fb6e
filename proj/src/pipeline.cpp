#include "fustal/pipeline.hpp"

#include <algorithm>

#include "fustal/errors.hpp"

namespace fustal::pipeline {

namespace {

std::vector<Proposal> decode_videos(const generator::GeneratorNet& net, const std::vector<VideoRecord>& videos,
                                    const Config& config, bool use_labels, double nms_iou) {
  const auto& d = config.decode;
  std::vector<std::vector<Proposal>> per_video(videos.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    const auto cas = generator::compute_cas(v, net);
    const auto classes =
        postprocess::select_classes(cas.logits, config.generator.k(v.length()), d.class_keep, use_labels ? &v.label : nullptr);
    per_video[i] = postprocess::nms(
        postprocess::cas_to_proposals(v.id, cas.logits, classes, d.thresholds, d.min_len, d.merge_gap), nms_iou);
  }
  std::vector<Proposal> out;
  for (auto& p : per_video) out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  return out;
}

double mean(double sum, std::size_t n) { return n ? sum / double(n) : 0.0; }

}  // namespace

std::vector<Proposal> generate_proposals(const generator::GeneratorNet& net, const std::vector<VideoRecord>& videos,
                                         const Config& config) {
  return decode_videos(net, videos, config, true, config.decode.pseudo_nms_iou);
}

std::vector<Proposal> generator_predict(const generator::GeneratorNet& net, const std::vector<VideoRecord>& videos,
                                        const Config& config) {
  return decode_videos(net, videos, config, false, config.decode.infer_nms_iou);
}

std::vector<Proposal> select(std::vector<Proposal> proposals, double gamma, double eta) {
  selector::assign_iou_scores(proposals);
  return selector::filter(std::move(proposals), gamma, eta);
}

nlohmann::json SelectionDiagnostics::to_json() const {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : histogram) hist.push_back({{"bin_upper", r.bin_upper}, {"fp", r.fp_count}, {"tp", r.tp_count}});
  return {{"num_fp", num_fp},
          {"num_tp", num_tp},
          {"mean_iou_score_fp", mean_iou_score_fp},
          {"mean_iou_score_tp", mean_iou_score_tp},
          {"precision_before", precision_before},
          {"precision_after", precision_after},
          {"kept", kept},
          {"fp_mode_bin", fp_mode_bin},
          {"histogram", hist}};
}

SelectionDiagnostics diagnose_selection(std::vector<Proposal> proposals,
                                        std::span<const GroundTruthSegment> ground_truth, const SelectConfig& select) {
  selector::assign_iou_scores(proposals);
  SelectionDiagnostics d;
  double fp_sum = 0.0, tp_sum = 0.0;
  for (const auto& p : proposals) {
    if (selector::max_gt_iou(p, ground_truth) < selector::kFalsePositiveIou) {
      ++d.num_fp;
      fp_sum += *p.iou_score;
    } else {
      ++d.num_tp;
      tp_sum += *p.iou_score;
    }
  }
  d.mean_iou_score_fp = mean(fp_sum, d.num_fp);
  d.mean_iou_score_tp = mean(tp_sum, d.num_tp);
  d.precision_before = mean(double(d.num_tp), proposals.size());
  const auto kept = selector::filter(proposals, select.gamma, select.eta);
  d.kept = kept.size();
  std::size_t kept_tp = 0;
  for (const auto& p : kept)
    if (selector::max_gt_iou(p, ground_truth) >= selector::kFalsePositiveIou) ++kept_tp;
  d.precision_after = mean(double(kept_tp), kept.size());
  d.histogram = selector::fp_distribution(std::move(proposals), ground_truth);
  for (std::size_t i = 0; i < d.histogram.size(); ++i)
    if (d.histogram[i].fp_count > d.histogram[d.fp_mode_bin].fp_count) d.fp_mode_bin = i;
  return d;
}

std::vector<AblationStep> ablation_ladder() {
  return {
      {"base", false, false, false, false, false, false},
      {"+cross-video", true, false, false, false, false, false},
      {"base+student", false, true, false, false, false, false},
      {"+student", true, true, false, false, false, false},
      {"+thresholding", true, true, true, false, false, false},
      {"+MIL", true, true, true, true, false, false},
      {"+filter", true, true, true, true, true, false},
      {"+EMA", true, true, true, true, true, true},
  };
}

AblationRun run_ablation(const dataio::SynthData& data, const Config& config, const Progress& progress) {
  const auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const auto& train = data.train.videos;
  const auto& test = data.test.videos;

  struct GenOutputs {
    std::vector<Proposal> pseudo;
    std::vector<Proposal> test_predictions;
  };
  const auto run_generator = [&](bool cross_video) {
    auto gc = config.generator;
    if (!cross_video) gc.lambda2 = 0.0;
    note(cross_video ? "training generator (cross-video)" : "training generator (lambda2=0)");
    const auto net = generator::train_generator(train, config.num_classes, gc);
    return GenOutputs{generate_proposals(net, train, config), generator_predict(net, test, config)};
  };
  const GenOutputs gens[2] = {run_generator(false), run_generator(true)};

  AblationRun run;
  run.diagnostics = diagnose_selection(gens[1].pseudo, data.train.ground_truth, config.select);
  for (const auto& step : ablation_ladder()) {
    const auto& gen = gens[step.cross_video ? 1 : 0];
    std::vector<Proposal> predictions;
    if (!step.student) {
      predictions = gen.test_predictions;
    } else {
      auto sc = config.student;
      sc.use_mil = step.mil;
      sc.distill = step.distill;
      const auto labels = select(gen.pseudo, step.filter ? config.select.gamma : 0.0,
                                 step.threshold ? config.select.eta : 0.0);
      note("training student for " + step.name);
      const auto trained =
          student::run_training_stage(train, student::group_by_video(labels), config.num_classes, sc);
      predictions = student::predict(trained.net, test, sc);
    }
    run.rows.push_back({step.name, eval::map_suite(predictions, data.test.ground_truth)});
  }
  return run;
}

std::vector<eval::MetricsRow> average_rows(std::span<const std::vector<eval::MetricsRow>> runs) {
  if (runs.empty()) throw ContractError("average_rows: no runs");
  std::vector<eval::MetricsRow> out = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].size() != out.size()) throw ContractError("average_rows: runs differ in length");
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto& a = out[i].table;
      const auto& b = runs[r][i].table;
      if (b.map.size() != a.map.size()) throw ContractError("average_rows: tIoU sets differ");
      for (std::size_t j = 0; j < a.map.size(); ++j) a.map[j] += b.map[j];
      a.avg_01_05 += b.avg_01_05;
      a.avg_03_07 += b.avg_03_07;
      a.avg_01_07 += b.avg_01_07;
    }
  }
  const double n = double(runs.size());
  for (auto& row : out) {
    for (auto& v : row.table.map) v /= n;
    row.table.avg_01_05 /= n;
    row.table.avg_03_07 /= n;
    row.table.avg_01_07 /= n;
  }
  return out;
}

}  // namespace fustal::pipeline
