#include "fustal/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fustal/errors.hpp"

namespace fustal::generator {

namespace {

const std::string kTrunk = "trunk.";

std::vector<std::size_t> ranked_indices(std::span<const double> values, bool descending) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? values[a] > values[b] : values[a] < values[b];
  });
  return idx;
}

std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count,
                                                    std::mt19937_64& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

bool labels_intersect(const MultiHot& a, const MultiHot& b) {
  for (std::size_t c = 0; c < std::min(a.size(), b.size()); ++c)
    if (a[c] && b[c]) return true;
  return false;
}

double dot_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
  const std::size_t E = a.dim(1);
  const float* pa = a.data().data() + ra * E;
  const float* pb = b.data().data() + rb * E;
  double acc = 0.0;
  for (std::size_t i = 0; i < E; ++i) acc += double(pa[i]) * double(pb[i]);
  return acc;
}

void axpy_row(Tensor& target, std::size_t row, double scale, const Tensor& src, std::size_t src_row) {
  const std::size_t E = target.dim(1);
  float* g = target.grad().data() + row * E;
  const float* s = src.data().data() + src_row * E;
  for (std::size_t i = 0; i < E; ++i) g[i] = static_cast<float>(double(g[i]) + scale * double(s[i]));
}

}  // namespace

void GenConfig::validate() const {
  if (!(mask_small < mask_large)) throw ConfigError("hyperparameters.m", "m must be smaller than M");
  if (mask_small == 0) throw ConfigError("hyperparameters.m", "must be positive");
  if (!(tau > 0.0)) throw ConfigError("hyperparameters.tau", "must be positive");
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw ConfigError("hyperparameters.k", "must lie in (0,1]");
  if (!(k_hard_fraction > 0.0 && k_hard_fraction <= 1.0))
    throw ConfigError("hyperparameters.k_hard", "must lie in (0,1]");
  if (!(lambda1 >= 0.0)) throw ConfigError("hyperparameters.lambda1", "must be non-negative");
  if (!(lambda2 >= 0.0)) throw ConfigError("hyperparameters.lambda2", "must be non-negative");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
    throw ConfigError("hyperparameters.theta_b", "must lie in (0,1)");
  if (batch == 0) throw ConfigError("generator.batch", "must be positive");
  if (embed_dim == 0) throw ConfigError("generator.embed_dim", "must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("generator.lr", "must be non-negative");
}

GeneratorNet::GeneratorNet(std::size_t in_dim, std::size_t embed_dim, std::size_t num_classes,
                           std::uint64_t seed)
    : in_dim_(in_dim), embed_dim_(embed_dim), num_classes_(num_classes) {
  std::mt19937_64 rng(seed);
  add_trunk_params(params_, kTrunk, in_dim, embed_dim, rng);
  diffnum::init_uniform(params_.add("classifier.weight", {num_classes, embed_dim}), embed_dim, rng);
  diffnum::init_uniform(params_.add("classifier.bias", {num_classes}), embed_dim, rng);
}

GeneratorNet::GeneratorNet(diffnum::ModelParams params) : params_(std::move(params)) {
  const auto& k1 = params_.at(kTrunk + "conv1.weight");
  const auto& w = params_.at("classifier.weight");
  if (k1.rank() != 3 || w.rank() != 2 || w.dim(1) != k1.dim(0))
    throw ContractError("generator checkpoint has inconsistent shapes " + k1.shape_string() + " vs " +
                        w.shape_string());
  embed_dim_ = k1.dim(0);
  in_dim_ = k1.dim(2);
  num_classes_ = w.dim(0);
}

ForwardPass forward(const GeneratorNet& net, const VideoRecord& video) {
  if (video.features.cols != net.in_dim())
    throw ContractError("compute_cas: feature width " + std::to_string(video.features.cols) +
                        " vs network input " + std::to_string(net.in_dim()));
  ForwardPass pass;
  pass.trunk = trunk_forward(net.params(), kTrunk, video.features);
  pass.logits = diffnum::affine(pass.trunk.embeddings, net.params().at("classifier.weight"),
                                net.params().at("classifier.bias"));
  pass.normalized = diffnum::l2_normalize_rows(pass.trunk.embeddings);
  return pass;
}

void backward(GeneratorNet& net, ForwardPass& pass) {
  auto& emb = pass.trunk.embeddings;
  diffnum::affine_backward(emb, net.params().at("classifier.weight"), net.params().at("classifier.bias"),
                           pass.logits);
  diffnum::l2_normalize_rows_backward(emb, pass.normalized);
  trunk_backward(net.params(), kTrunk, pass.trunk);
}

Cas compute_cas(const VideoRecord& video, const GeneratorNet& net) {
  auto pass = forward(net, video);
  return Cas{std::move(pass.logits), std::move(pass.trunk.embeddings)};
}

std::vector<double> video_scores(const Tensor& logits, std::size_t k) {
  const auto pooled = diffnum::topk_mean(logits, k, 0);
  std::vector<double> v(pooled.data().begin(), pooled.data().end());
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (auto& x : v) z += std::exp(x - mx);
  for (auto& x : v) x = std::exp(x - mx) / z;
  return v;
}

double mil_loss(Tensor& logits, const MultiHot& label, std::size_t k, double grad_weight) {
  if (logits.rank() != 2 || logits.dim(1) != label.size())
    throw ContractError("mil_loss: logits " + logits.shape_string() + " vs label of size " +
                        std::to_string(label.size()));
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  const double positives = std::accumulate(label.begin(), label.end(), 0.0);
  if (positives == 0.0) throw ContractError("mil_loss: label has no positive class");
  if (k == 0 || k > T) throw ContractError("mil_loss: k=" + std::to_string(k) + " outside [1,T]");

  std::vector<std::vector<std::size_t>> top(C);
  std::vector<double> pooled(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    top[c] = diffnum::detail::topk_indices(logits.data().data() + c, T, C, k);
    for (auto t : top[c]) pooled[c] += double(logits.at(t, c));
    pooled[c] /= double(k);
  }
  const double mx = *std::max_element(pooled.begin(), pooled.end());
  double z = 0.0;
  for (double v : pooled) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);

  double loss = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    if (label[c]) loss -= (1.0 / positives) * (pooled[c] - log_z);

  if (grad_weight != 0.0) {
    auto g = logits.grad();
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(pooled[c] - log_z);
      const double target = label[c] ? 1.0 / positives : 0.0;
      const double dv = grad_weight * (p - target) / double(k);
      for (auto t : top[c]) g[t * C + c] = static_cast<float>(double(g[t * C + c]) + dv);
    }
  }
  return loss;
}

std::vector<double> actionness(const Tensor& logits) {
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  std::vector<double> a(T);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += double(logits.at(t, c));
    a[t] = diffnum::sigmoid_scalar(s);
  }
  return a;
}

namespace {

// Counts ones in each window via prefix sums; padded positions count as `pad`.
std::vector<std::size_t> window_counts(const Mask& mask, std::size_t w, std::uint8_t pad) {
  const auto T = static_cast<std::ptrdiff_t>(mask.size());
  const auto lo = static_cast<std::ptrdiff_t>((w - 1) / 2);
  const auto hi = static_cast<std::ptrdiff_t>(w / 2);  // ceil((w-1)/2)
  std::vector<std::size_t> prefix(mask.size() + 1, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) prefix[i + 1] = prefix[i] + (mask[i] ? 1 : 0);
  std::vector<std::size_t> counts(mask.size());
  for (std::ptrdiff_t i = 0; i < T; ++i) {
    const auto a = i - lo, b = i + hi;
    const auto ca = std::max<std::ptrdiff_t>(a, 0), cb = std::min<std::ptrdiff_t>(b, T - 1);
    std::size_t n = prefix[static_cast<std::size_t>(cb) + 1] - prefix[static_cast<std::size_t>(ca)];
    if (pad) n += static_cast<std::size_t>((ca - a) + (b - cb));
    counts[static_cast<std::size_t>(i)] = n;
  }
  return counts;
}

}  // namespace

Mask dilate(const Mask& mask, std::size_t w, std::uint8_t pad) {
  if (w == 0) throw ContractError("dilate: window must be >= 1");
  const auto counts = window_counts(mask, w, pad);
  Mask out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = counts[i] > 0 ? 1 : 0;
  return out;
}

Mask erode(const Mask& mask, std::size_t w, std::uint8_t pad) {
  if (w == 0) throw ContractError("erode: window must be >= 1");
  const auto counts = window_counts(mask, w, pad);
  Mask out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = counts[i] == w ? 1 : 0;
  return out;
}

MiningRegions hard_regions(const Mask& binary, std::size_t mask_small, std::size_t mask_large) {
  const auto er_small = erode(binary, mask_small);
  const auto er_large = erode(binary, mask_large);
  const auto di_small = dilate(binary, mask_small);
  const auto di_large = dilate(binary, mask_large);
  MiningRegions r{Mask(binary.size(), 0), Mask(binary.size(), 0)};
  for (std::size_t i = 0; i < binary.size(); ++i) {
    r.inner[i] = (er_small[i] && !er_large[i]) ? 1 : 0;
    r.outer[i] = (di_large[i] && !di_small[i]) ? 1 : 0;
  }
  return r;
}

MiningSets mine_snippets(std::span<const double> act, const GenConfig& config, std::mt19937_64& rng) {
  const std::size_t T = act.size();
  const std::size_t k = config.k(T);
  const std::size_t k_hard = config.k_hard(T);
  Mask binary(T);
  for (std::size_t t = 0; t < T; ++t) binary[t] = act[t] > config.binarize_threshold ? 1 : 0;
  const auto regions = hard_regions(binary, config.mask_small, config.mask_large);

  std::vector<std::size_t> inner, outer;
  for (std::size_t t = 0; t < T; ++t) {
    if (regions.inner[t]) inner.push_back(t);
    if (regions.outer[t]) outer.push_back(t);
  }
  MiningSets sets;
  sets.hard_action = sample_without_replacement(std::move(inner), k_hard, rng);
  sets.hard_background = sample_without_replacement(std::move(outer), k_hard, rng);

  Mask excluded(T, 0);
  for (auto t : sets.hard_action) excluded[t] = 1;
  for (auto t : sets.hard_background) excluded[t] = 1;
  auto take = [&](bool descending) {
    std::vector<std::size_t> out;
    for (auto t : ranked_indices(act, descending)) {
      if (out.size() == k) break;
      if (!excluded[t]) out.push_back(t);
    }
    return out;
  };
  sets.easy_action = take(true);
  sets.easy_background = take(false);
  return sets;
}

double infonce(Tensor& query_rows, std::size_t query, Tensor& anchor_rows,
               std::span<const std::size_t> positives, std::span<const std::size_t> negatives,
               double tau, double grad_weight) {
  if (positives.empty() || negatives.empty()) return 0.0;
  if (query_rows.dim(1) != anchor_rows.dim(1))
    throw ContractError("infonce: embedding widths differ " + query_rows.shape_string() + " vs " +
                        anchor_rows.shape_string());
  std::vector<double> neg_logits(negatives.size());
  double mx = -INFINITY;
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    neg_logits[j] = dot_rows(query_rows, query, anchor_rows, negatives[j]) / tau;
    mx = std::max(mx, neg_logits[j]);
  }
  std::vector<double> pos_logits(positives.size());
  for (std::size_t j = 0; j < positives.size(); ++j) {
    pos_logits[j] = dot_rows(query_rows, query, anchor_rows, positives[j]) / tau;
    mx = std::max(mx, pos_logits[j]);
  }
  double neg_sum = 0.0;
  for (double s : neg_logits) neg_sum += std::exp(s - mx);

  const double inv_p = 1.0 / double(positives.size());
  double loss = 0.0;
  std::vector<double> neg_weight(negatives.size(), 0.0);
  for (std::size_t j = 0; j < positives.size(); ++j) {
    const double ep = std::exp(pos_logits[j] - mx);
    const double denom = ep + neg_sum;
    loss += (std::log(denom) + mx - pos_logits[j]) * inv_p;
    if (grad_weight != 0.0) {
      // dL/ds_pos = (softmax_pos - 1), dL/ds_neg = softmax_neg
      const double ds_pos = (ep / denom - 1.0) * inv_p * grad_weight;
      axpy_row(query_rows, query, ds_pos / tau, anchor_rows, positives[j]);
      axpy_row(anchor_rows, positives[j], ds_pos / tau, query_rows, query);
      for (std::size_t n = 0; n < negatives.size(); ++n)
        neg_weight[n] += std::exp(neg_logits[n] - mx) / denom * inv_p * grad_weight;
    }
  }
  if (grad_weight != 0.0) {
    for (std::size_t n = 0; n < negatives.size(); ++n) {
      axpy_row(query_rows, query, neg_weight[n] / tau, anchor_rows, negatives[n]);
      axpy_row(anchor_rows, negatives[n], neg_weight[n] / tau, query_rows, query);
    }
  }
  return loss;
}

namespace {

// E_{x in queries} infonce(x, positives, negatives)
double expected_infonce(Tensor& query_rows, const std::vector<std::size_t>& queries, Tensor& anchor_rows,
                        const std::vector<std::size_t>& positives,
                        const std::vector<std::size_t>& negatives, double tau, double grad_weight) {
  if (queries.empty() || positives.empty() || negatives.empty()) return 0.0;
  const double w = 1.0 / double(queries.size());
  double acc = 0.0;
  for (auto q : queries) acc += w * infonce(query_rows, q, anchor_rows, positives, negatives, tau, grad_weight * w);
  return acc;
}

}  // namespace

double in_video_loss(Tensor& normalized, const MiningSets& sets, double tau, double grad_weight) {
  return expected_infonce(normalized, sets.hard_action, normalized, sets.easy_action, sets.easy_background,
                          tau, grad_weight) +
         expected_infonce(normalized, sets.hard_background, normalized, sets.easy_background,
                          sets.easy_action, tau, grad_weight);
}

double cross_video_loss(Tensor& normalized_p, const MiningSets& sets_p, const MultiHot& label_p,
                        Tensor& normalized_q, const MiningSets& sets_q, const MultiHot& label_q,
                        double tau, double grad_weight) {
  if (!labels_intersect(label_p, label_q))
    throw ContractError("cross_video_loss: paired videos share no label");
  return expected_infonce(normalized_p, sets_p.hard_action, normalized_q, sets_q.easy_action,
                          sets_q.easy_background, tau, grad_weight) +
         expected_infonce(normalized_p, sets_p.hard_background, normalized_q, sets_q.easy_background,
                          sets_q.easy_action, tau, grad_weight);
}

LossBreakdown total_loss(std::vector<BatchItem>& batch, const GenConfig& config, bool accumulate_grad) {
  LossBreakdown out;
  if (batch.empty()) return out;
  const double inv_n = 1.0 / double(batch.size());
  const double g = accumulate_grad ? inv_n : 0.0;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    auto& item = batch[p];
    const std::size_t T = item.pass->logits.dim(0);
    const double mil = mil_loss(item.pass->logits, *item.label, config.k(T), g);
    const double iv = in_video_loss(item.pass->normalized, item.sets, config.tau, g * config.lambda1);
    std::vector<std::size_t> partners;
    for (std::size_t q = 0; q < batch.size(); ++q)
      if (q != p && labels_intersect(*item.label, *batch[q].label)) partners.push_back(q);
    double cv = 0.0;
    if (!partners.empty()) {
      const double wq = 1.0 / double(partners.size());
      for (auto q : partners)
        cv += wq * cross_video_loss(item.pass->normalized, item.sets, *item.label, batch[q].pass->normalized,
                                    batch[q].sets, *batch[q].label, config.tau, g * config.lambda2 * wq);
    }
    out.mil += inv_n * mil;
    out.in_video += inv_n * iv;
    out.cross_video += inv_n * cv;
  }
  out.total = out.mil + config.lambda1 * out.in_video + config.lambda2 * out.cross_video;
  return out;
}

GeneratorNet train_generator(const std::vector<VideoRecord>& dataset, std::size_t num_classes,
                             const GenConfig& config, std::vector<LogRow>* log) {
  config.validate();
  if (dataset.empty()) throw ContractError("train_generator: empty dataset");
  const std::size_t D = dataset.front().features.cols;
  for (const auto& v : dataset) {
    if (v.features.cols != D) throw ContractError("train_generator: inconsistent feature widths");
    if (v.label.size() != num_classes) throw ContractError("train_generator: label width mismatch in " + v.id);
    if (v.length() < config.mask_large)
      throw ContractError("train_generator: video " + v.id + " shorter than mask M");
  }

  GeneratorNet net(D, config.embed_dim, num_classes, config.seed);
  diffnum::AdamState adam(net.params(), static_cast<float>(config.learning_rate));
  BatchSampler sampler(dataset.size(), config.batch, config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 mining_rng(config.seed + 0x51ed2701ULL);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto indices = sampler.next();
    std::vector<ForwardPass> passes;
    passes.reserve(indices.size());
    for (auto i : indices) passes.push_back(forward(net, dataset[i]));
    std::vector<BatchItem> items(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
      items[b].pass = &passes[b];
      items[b].label = &dataset[indices[b]].label;
      const auto act = actionness(passes[b].logits);
      items[b].sets = mine_snippets(act, config, mining_rng);
    }
    const auto loss = total_loss(items, config, true);
    if (!std::isfinite(loss.total))
      throw TrainingError("generator loss became non-finite at iteration " + std::to_string(it));
    for (auto& pass : passes) backward(net, pass);
    diffnum::adam_step(net.params(), adam);
    if (log) log->push_back({it, loss});
  }
  return net;
}

}  // namespace fustal::generator
