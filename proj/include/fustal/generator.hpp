#pragma once

// Classification-based proposal generator: T-CAS network trained with a
// top-k MIL loss plus in-video and cross-video InfoNCE over mined snippets.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/diffnum.hpp"
#include "fustal/trunk.hpp"

namespace fustal::generator {

using diffnum::Tensor;

struct GenConfig {
  double k_fraction = 0.2;        // k = ceil(T * k_fraction)
  double k_hard_fraction = 0.05;  // k_hard = ceil(T * k_hard_fraction)
  std::size_t mask_large = 6;     // M
  std::size_t mask_small = 3;     // m
  double tau = 0.07;
  double lambda1 = 0.01;
  double lambda2 = 0.002;
  std::size_t iterations = 6000;
  double learning_rate = 1e-4;
  std::size_t batch = 16;
  double binarize_threshold = 0.5;
  std::size_t embed_dim = 256;
  std::uint64_t seed = 0;

  std::size_t k(std::size_t T) const { return std::min(T, ceil_fraction(T, k_fraction)); }
  std::size_t k_hard(std::size_t T) const { return std::min(T, ceil_fraction(T, k_hard_fraction)); }
  void validate() const;
};

class GeneratorNet {
 public:
  GeneratorNet(std::size_t in_dim, std::size_t embed_dim, std::size_t num_classes, std::uint64_t seed);
  // Adopts checkpointed parameters; dimensions are read off the tensor shapes.
  explicit GeneratorNet(diffnum::ModelParams params);

  diffnum::ModelParams& params() noexcept { return params_; }
  const diffnum::ModelParams& params() const noexcept { return params_; }
  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t embed_dim() const noexcept { return embed_dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

 private:
  diffnum::ModelParams params_;
  std::size_t in_dim_ = 0, embed_dim_ = 0, num_classes_ = 0;
};

// Everything the backward pass needs for one video.
struct ForwardPass {
  TrunkPass trunk;
  Tensor logits;      // T x C raw T-CAS
  Tensor normalized;  // T x E, L2-normalized embeddings for contrast
};

struct Cas {
  Tensor logits;      // T x C
  Tensor embeddings;  // T x E
};

ForwardPass forward(const GeneratorNet& net, const VideoRecord& video);
// Backpropagates logits.grad and normalized.grad into the network parameters.
void backward(GeneratorNet& net, ForwardPass& pass);

Cas compute_cas(const VideoRecord& video, const GeneratorNet& net);

// Top-k-mean MIL cross-entropy against the label normalized to sum 1. Adds
// grad_weight * dL/dlogits into logits.grad.
double mil_loss(Tensor& logits, const MultiHot& label, std::size_t k, double grad_weight = 0.0);

// Per-class video-level scores (top-k mean over time), softmaxed over classes.
std::vector<double> video_scores(const Tensor& logits, std::size_t k);

// sigmoid(sum_c logits[t, c]).
std::vector<double> actionness(const Tensor& logits);

using Mask = std::vector<std::uint8_t>;

// Sliding max/min over [i - floor((w-1)/2), i + ceil((w-1)/2)]; positions
// outside [0, T) read as `pad`.
Mask dilate(const Mask& mask, std::size_t w, std::uint8_t pad = 0);
Mask erode(const Mask& mask, std::size_t w, std::uint8_t pad = 0);

struct MiningSets {
  std::vector<std::size_t> hard_action;      // S_HA
  std::vector<std::size_t> hard_background;  // S_HB
  std::vector<std::size_t> easy_action;      // S_EA
  std::vector<std::size_t> easy_background;  // S_EB
};

struct MiningRegions {
  Mask inner;  // erode(m) - erode(M): hard action candidates
  Mask outer;  // dilate(M) - dilate(m): hard background candidates
};

MiningRegions hard_regions(const Mask& binary, std::size_t mask_small, std::size_t mask_large);
MiningSets mine_snippets(std::span<const double> actionness, const GenConfig& config,
                         std::mt19937_64& rng);

// InfoNCE of one query against each positive (averaged over positives), with
// all negatives shared. Rows are assumed L2-normalized. Gradients, scaled by
// grad_weight, go into query_rows.grad and anchor_rows.grad. Empty positive
// or negative sets contribute 0.
double infonce(Tensor& query_rows, std::size_t query, Tensor& anchor_rows,
               std::span<const std::size_t> positives, std::span<const std::size_t> negatives,
               double tau, double grad_weight = 0.0);

double in_video_loss(Tensor& normalized, const MiningSets& sets, double tau, double grad_weight = 0.0);

// Hard queries from p against easy anchors of q. Throws ContractError when
// the two label sets do not intersect.
double cross_video_loss(Tensor& normalized_p, const MiningSets& sets_p, const MultiHot& label_p,
                        Tensor& normalized_q, const MiningSets& sets_q, const MultiHot& label_q,
                        double tau, double grad_weight = 0.0);

struct LossBreakdown {
  double mil = 0.0;
  double in_video = 0.0;
  double cross_video = 0.0;
  double total = 0.0;
};

struct BatchItem {
  ForwardPass* pass = nullptr;
  const MultiHot* label = nullptr;
  MiningSets sets;
};

// Mean over videos of L_MIL + lambda1 L_IV + lambda2 / Q sum_q L_CV(p,q).
// With accumulate_grad, writes gradients into each pass's logits/normalized.
LossBreakdown total_loss(std::vector<BatchItem>& batch, const GenConfig& config, bool accumulate_grad);

struct LogRow {
  std::size_t iteration = 0;
  LossBreakdown loss;
};

GeneratorNet train_generator(const std::vector<VideoRecord>& dataset, std::size_t num_classes,
                             const GenConfig& config, std::vector<LogRow>* log = nullptr);

}  // namespace fustal::generator
