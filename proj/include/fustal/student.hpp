#pragma once

// Regression-based student: an anchor-free 1-D head trained on pseudo labels
// with focal + DIoU + MIL losses, an EMA shadow, and one round of
// self-distillation from that shadow.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/diffnum.hpp"
#include "fustal/trunk.hpp"

namespace fustal::student {

using diffnum::Tensor;

struct StudentConfig {
  std::size_t embed_dim = 256;
  std::size_t iterations = 6000;
  double learning_rate = 1e-4;
  std::size_t batch = 16;
  double k_fraction = 0.2;  // MIL top-k = ceil(T * k_fraction)
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double prior_prob = 0.01;  // initial class-head bias = logit(prior_prob)
  bool use_mil = true;
  double ema_decay = 0.999;    // alpha
  bool distill = true;         // run the EMA-teacher sub-stage
  double distill_fraction = 1.0 / 3.0;
  double eta_prime = 0.4;
  double score_thresh = 0.1;  // decode threshold at inference
  double nms_iou = 0.5;
  std::uint64_t seed = 0;

  // Iterations on the original pseudo labels / on the teacher's labels.
  std::size_t first_stage_iterations() const;
  std::size_t distill_iterations() const { return iterations - first_stage_iterations(); }
  void validate() const;
};

class StudentNet {
 public:
  StudentNet(std::size_t in_dim, std::size_t embed_dim, std::size_t num_classes, double prior_prob,
             std::uint64_t seed);
  explicit StudentNet(diffnum::ModelParams params);

  diffnum::ModelParams& params() noexcept { return params_; }
  const diffnum::ModelParams& params() const noexcept { return params_; }
  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

 private:
  diffnum::ModelParams params_;
  std::size_t in_dim_ = 0, embed_dim_ = 0, num_classes_ = 0;
};

struct ForwardPass {
  TrunkPass trunk;
  Tensor class_logits;  // T x C
  Tensor reg_raw;       // T x 2
  Tensor offsets;       // softplus(reg_raw): (left, right) distances
};

ForwardPass forward(const StudentNet& net, const VideoRecord& video);
void backward(StudentNet& net, ForwardPass& pass);

struct Outputs {
  Tensor probs;    // T x C
  Tensor offsets;  // T x 2
};
Outputs infer(const StudentNet& net, const VideoRecord& video);

// --- targets & losses ----------------------------------------------------------

inline constexpr int kBackground = -1;

struct SnippetTargets {
  std::vector<int> class_id;  // kBackground or the assigned label's class
  std::vector<double> left;   // t - s
  std::vector<double> right;  // e - t
  std::size_t num_positive() const;
};

// Snippet t is positive for (s, e, c) iff s <= t < e; overlapping labels go
// to the shortest one.
SnippetTargets assign_targets(std::span<const Proposal> labels, std::size_t T);

// Sigmoid focal loss on class logits, normalized by max(1, positives).
double focal_loss(Tensor& logits, const SnippetTargets& targets, double alpha, double gamma,
                  double grad_weight = 0.0);

struct DiouTerm {
  double value = 0.0;
  double d_start = 0.0;  // d value / d pred.start
  double d_end = 0.0;
};

// 1 - IoU + ((c_pred - c_target) / enclosing_span)^2 on 1-D intervals. A
// zero-length prediction counts as IoU 0 centred at its point.
DiouTerm diou(double pred_start, double pred_end, double target_start, double target_end);
double diou_loss(const Interval& pred, const Interval& target);

// Mean DIoU over positive snippets of [t - l, t + r] against the target.
double diou_regression_loss(Tensor& offsets, const SnippetTargets& targets, double grad_weight = 0.0);

// Per class: top-k mean of sigmoid probabilities, BCE against the multi-hot
// label, mean over classes.
double student_mil_loss(Tensor& logits, const MultiHot& label, std::size_t k, double grad_weight = 0.0);

// --- EMA -------------------------------------------------------------------------

struct EmaState {
  diffnum::ModelParams shadow;
  double decay = 0.999;
};

EmaState make_ema(const diffnum::ModelParams& student, double decay);
// shadow <- decay * shadow + (1 - decay) * student. Never touches the student.
void ema_update(EmaState& ema, const diffnum::ModelParams& student);

// --- decoding --------------------------------------------------------------------

// Each (t, c) with prob >= score_thresh emits [t - l, t + r) clipped to [0, T)
// with conf = prob; per-class NMS at nms_iou.
std::vector<Proposal> decode(const std::string& video_id, const Outputs& outputs, double score_thresh,
                             double nms_iou);

// --- training ----------------------------------------------------------------------

using PseudoLabels = std::map<std::string, std::vector<Proposal>>;
PseudoLabels group_by_video(std::span<const Proposal> proposals);

struct LossBreakdown {
  double focal = 0.0;
  double diou = 0.0;
  double mil = 0.0;
  double total = 0.0;
};

struct LogRow {
  std::size_t iteration = 0;
  LossBreakdown loss;
};

struct TrainedStudent {
  StudentNet net;
  EmaState ema;
};

// L_Loc = focal + DIoU + MIL on one video; gradients land in pass tensors.
LossBreakdown video_loss(ForwardPass& pass, const SnippetTargets& targets, const MultiHot& label,
                         const StudentConfig& config, double grad_weight);

// Trains from scratch for `iterations` steps with an EMA update after every
// optimizer step.
TrainedStudent train_student(const std::vector<VideoRecord>& dataset, const PseudoLabels& pseudo_labels,
                             std::size_t num_classes, const StudentConfig& config, std::size_t iterations,
                             std::vector<LogRow>* log = nullptr);

// Teacher pseudo labels: decode with the EMA shadow, keep conf >= eta_prime.
std::vector<Proposal> teacher_labels(const EmaState& ema, const std::vector<VideoRecord>& dataset,
                                     const StudentConfig& config);

// Continues training `trained` on the teacher's labels for `iterations`
// steps; the EMA keeps updating.
void distill_round(TrainedStudent& trained, const std::vector<VideoRecord>& dataset,
                   const StudentConfig& config, std::size_t iterations,
                   std::vector<Proposal>* teacher_out = nullptr, std::vector<LogRow>* log = nullptr);

// Full Training-Stage: first_stage_iterations on the given labels, then the
// distillation sub-stage when config.distill is set (else the whole budget).
TrainedStudent run_training_stage(const std::vector<VideoRecord>& dataset, const PseudoLabels& pseudo_labels,
                                  std::size_t num_classes, const StudentConfig& config,
                                  std::vector<LogRow>* log = nullptr);

std::vector<Proposal> predict(const StudentNet& net, const std::vector<VideoRecord>& videos,
                              const StudentConfig& config);

}  // namespace fustal::student
