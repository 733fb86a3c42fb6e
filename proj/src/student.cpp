#include "fustal/student.hpp"

#include <algorithm>
#include <cmath>

#include "fustal/errors.hpp"
#include "fustal/postprocess.hpp"

namespace fustal::student {

namespace {

const std::string kTrunk = "trunk.";

double log_sigmoid(double z) { return -diffnum::softplus_scalar(-z); }

}  // namespace

std::size_t StudentConfig::first_stage_iterations() const {
  if (!distill) return iterations;
  const auto tail = static_cast<std::size_t>(std::llround(double(iterations) * distill_fraction));
  return iterations - std::min(tail, iterations);
}

void StudentConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("student.embed_dim", "must be positive");
  if (batch == 0) throw ConfigError("student.batch", "must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("student.lr", "must be non-negative");
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw ConfigError("hyperparameters.k", "must lie in (0,1]");
  if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0)) throw ConfigError("student.focal_alpha", "must lie in [0,1]");
  if (!(focal_gamma >= 0.0)) throw ConfigError("student.focal_gamma", "must be non-negative");
  if (!(prior_prob > 0.0 && prior_prob < 1.0)) throw ConfigError("student.prior_prob", "must lie in (0,1)");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("hyperparameters.alpha", "must lie in [0,1]");
  if (!(distill_fraction >= 0.0 && distill_fraction <= 1.0))
    throw ConfigError("student.distill_fraction", "must lie in [0,1]");
  if (!(eta_prime >= 0.0 && eta_prime <= 1.0)) throw ConfigError("hyperparameters.eta_prime", "must lie in [0,1]");
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0)) throw ConfigError("student.score_thresh", "must lie in [0,1]");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("student.nms_iou", "must lie in (0,1]");
}

StudentNet::StudentNet(std::size_t in_dim, std::size_t embed_dim, std::size_t num_classes, double prior_prob,
                       std::uint64_t seed)
    : in_dim_(in_dim), embed_dim_(embed_dim), num_classes_(num_classes) {
  std::mt19937_64 rng(seed);
  add_trunk_params(params_, kTrunk, in_dim, embed_dim, rng);
  diffnum::init_uniform(params_.add("cls_head.weight", {num_classes, embed_dim}), embed_dim, rng);
  params_.add("cls_head.bias", {num_classes}).fill(static_cast<float>(std::log(prior_prob / (1.0 - prior_prob))));
  diffnum::init_uniform(params_.add("reg_head.weight", {2, embed_dim}), embed_dim, rng);
  params_.add("reg_head.bias", {2});
}

StudentNet::StudentNet(diffnum::ModelParams params) : params_(std::move(params)) {
  const auto& k1 = params_.at(kTrunk + "conv1.weight");
  const auto& w = params_.at("cls_head.weight");
  const auto& r = params_.at("reg_head.weight");
  if (k1.rank() != 3 || w.rank() != 2 || w.dim(1) != k1.dim(0) || r.rank() != 2 || r.dim(0) != 2)
    throw ContractError("student checkpoint has inconsistent shapes");
  embed_dim_ = k1.dim(0);
  in_dim_ = k1.dim(2);
  num_classes_ = w.dim(0);
}

ForwardPass forward(const StudentNet& net, const VideoRecord& video) {
  if (video.features.cols != net.in_dim())
    throw ContractError("student: feature width " + std::to_string(video.features.cols) + " vs network input " +
                        std::to_string(net.in_dim()));
  ForwardPass pass;
  pass.trunk = trunk_forward(net.params(), kTrunk, video.features);
  const auto& p = net.params();
  pass.class_logits = diffnum::affine(pass.trunk.embeddings, p.at("cls_head.weight"), p.at("cls_head.bias"));
  pass.reg_raw = diffnum::affine(pass.trunk.embeddings, p.at("reg_head.weight"), p.at("reg_head.bias"));
  pass.offsets = diffnum::softplus(pass.reg_raw);
  return pass;
}

void backward(StudentNet& net, ForwardPass& pass) {
  auto& p = net.params();
  auto& emb = pass.trunk.embeddings;
  diffnum::softplus_backward(pass.reg_raw, pass.offsets);
  diffnum::affine_backward(emb, p.at("reg_head.weight"), p.at("reg_head.bias"), pass.reg_raw);
  diffnum::affine_backward(emb, p.at("cls_head.weight"), p.at("cls_head.bias"), pass.class_logits);
  trunk_backward(p, kTrunk, pass.trunk);
}

Outputs infer(const StudentNet& net, const VideoRecord& video) {
  auto pass = forward(net, video);
  return Outputs{diffnum::sigmoid(pass.class_logits), std::move(pass.offsets)};
}

std::size_t SnippetTargets::num_positive() const {
  return static_cast<std::size_t>(std::count_if(class_id.begin(), class_id.end(), [](int c) { return c != kBackground; }));
}

SnippetTargets assign_targets(std::span<const Proposal> labels, std::size_t T) {
  SnippetTargets out{std::vector<int>(T, kBackground), std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
  std::vector<double> best_len(T, INFINITY);
  for (const auto& lab : labels) {
    const double s = lab.interval.start(), e = lab.interval.end();
    const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(s)));
    for (std::size_t t = first; t < T && double(t) < e; ++t) {
      // Strictly shorter wins, so the first of equal-length labels is kept.
      if (lab.interval.length() < best_len[t]) {
        best_len[t] = lab.interval.length();
        out.class_id[t] = lab.class_id;
        out.left[t] = double(t) - s;
        out.right[t] = e - double(t);
      }
    }
  }
  return out;
}

double focal_loss(Tensor& logits, const SnippetTargets& targets, double alpha, double gamma, double grad_weight) {
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  if (targets.class_id.size() != T)
    throw ContractError("focal_loss: logits " + logits.shape_string() + " vs " +
                        std::to_string(targets.class_id.size()) + " targets");
  const double norm = 1.0 / double(std::max<std::size_t>(1, targets.num_positive()));
  auto g = logits.grad();
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double z = logits.at(t, c);
      const double p = diffnum::sigmoid_scalar(z);
      const bool positive = targets.class_id[t] == static_cast<int>(c);
      double l, dz;
      if (positive) {
        const double lp = log_sigmoid(z);
        const double w = std::pow(1.0 - p, gamma);
        l = -alpha * w * lp;
        dz = alpha * w * (gamma * p * lp - (1.0 - p));
      } else {
        const double lq = log_sigmoid(-z);
        const double w = std::pow(p, gamma);
        l = -(1.0 - alpha) * w * lq;
        dz = (1.0 - alpha) * w * (p - gamma * (1.0 - p) * lq);
      }
      loss += l * norm;
      if (grad_weight != 0.0) g[t * C + c] = static_cast<float>(double(g[t * C + c]) + grad_weight * norm * dz);
    }
  }
  return loss;
}

DiouTerm diou(double ps, double pe, double ts, double te) {
  DiouTerm r;
  const double plen = pe - ps;
  const double tlen = te - ts;
  const double lo = std::max(ps, ts), hi = std::min(pe, te);
  const double inter = std::max(0.0, hi - lo);
  double iou_v = 0.0, d_iou_ps = 0.0, d_iou_pe = 0.0;
  if (plen > 0.0 && inter > 0.0) {
    const double uni = plen + tlen - inter;
    iou_v = inter / uni;
    const double di_pe = pe < te ? 1.0 : 0.0;
    const double di_ps = ps > ts ? -1.0 : 0.0;
    const double du_pe = 1.0 - di_pe;
    const double du_ps = -1.0 - di_ps;
    d_iou_pe = (di_pe * uni - inter * du_pe) / (uni * uni);
    d_iou_ps = (di_ps * uni - inter * du_ps) / (uni * uni);
  }
  const double span = std::max(pe, te) - std::min(ps, ts);
  double pen = 0.0, d_pen_ps = 0.0, d_pen_pe = 0.0;
  if (span > 0.0) {
    const double u = 0.5 * (ps + pe) - 0.5 * (ts + te);
    pen = (u / span) * (u / span);
    const double dL_pe = pe > te ? 1.0 : 0.0;
    const double dL_ps = ps < ts ? -1.0 : 0.0;
    const double a = 2.0 * u / (span * span);
    const double b = 2.0 * u * u / (span * span * span);
    d_pen_pe = a * 0.5 - b * dL_pe;
    d_pen_ps = a * 0.5 - b * dL_ps;
  }
  r.value = 1.0 - iou_v + pen;
  r.d_start = -d_iou_ps + d_pen_ps;
  r.d_end = -d_iou_pe + d_pen_pe;
  return r;
}

double diou_loss(const Interval& pred, const Interval& target) {
  return diou(pred.start(), pred.end(), target.start(), target.end()).value;
}

double diou_regression_loss(Tensor& offsets, const SnippetTargets& targets, double grad_weight) {
  const std::size_t T = offsets.dim(0);
  if (offsets.rank() != 2 || offsets.dim(1) != 2 || targets.class_id.size() != T)
    throw ContractError("diou_regression_loss: offsets " + offsets.shape_string() + " vs " +
                        std::to_string(targets.class_id.size()) + " targets");
  const std::size_t n = targets.num_positive();
  if (n == 0) return 0.0;
  const double w = 1.0 / double(n);
  auto g = offsets.grad();
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (targets.class_id[t] == kBackground) continue;
    const double tt = double(t);
    const double l = offsets.at(t, 0), r = offsets.at(t, 1);
    const auto term = diou(tt - l, tt + r, tt - targets.left[t], tt + targets.right[t]);
    loss += w * term.value;
    if (grad_weight != 0.0) {
      g[t * 2 + 0] = static_cast<float>(double(g[t * 2 + 0]) - grad_weight * w * term.d_start);
      g[t * 2 + 1] = static_cast<float>(double(g[t * 2 + 1]) + grad_weight * w * term.d_end);
    }
  }
  return loss;
}

double student_mil_loss(Tensor& logits, const MultiHot& label, std::size_t k, double grad_weight) {
  const std::size_t T = logits.dim(0), C = logits.dim(1);
  if (label.size() != C)
    throw ContractError("student_mil_loss: logits " + logits.shape_string() + " vs label of size " +
                        std::to_string(label.size()));
  if (k == 0 || k > T) throw ContractError("student_mil_loss: k outside [1,T]");
  constexpr double eps = 1e-7;
  std::vector<double> prob(T);
  auto g = logits.grad();
  double loss = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) prob[t] = diffnum::sigmoid_scalar(double(logits.at(t, c)));
    const auto top = diffnum::detail::topk_indices(prob.data(), T, 1, k);
    double v = 0.0;
    for (auto t : top) v += prob[t];
    v /= double(k);
    const double y = label[c] ? 1.0 : 0.0;
    const double vc = std::clamp(v, eps, 1.0 - eps);
    loss += -(y * std::log(vc) + (1.0 - y) * std::log(1.0 - vc)) / double(C);
    if (grad_weight != 0.0 && vc == v) {
      const double dv = (-y / v + (1.0 - y) / (1.0 - v)) / double(C);
      for (auto t : top) {
        const double dz = grad_weight * dv / double(k) * prob[t] * (1.0 - prob[t]);
        g[t * C + c] = static_cast<float>(double(g[t * C + c]) + dz);
      }
    }
  }
  return loss;
}

EmaState make_ema(const diffnum::ModelParams& student, double decay) {
  EmaState ema;
  ema.decay = decay;
  for (const auto& [name, t] : student) ema.shadow.add(name, Tensor(t.shape(), std::vector<float>(t.data().begin(), t.data().end())));
  return ema;
}

void ema_update(EmaState& ema, const diffnum::ModelParams& student) {
  if (!ema.shadow.same_layout(student)) throw ContractError("ema_update: shadow and student layouts differ");
  const double a = ema.decay;
  auto it = student.begin();
  for (auto& [name, shadow] : ema.shadow) {
    auto dst = shadow.data();
    const auto src = it->second.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<float>(a * double(dst[i]) + (1.0 - a) * double(src[i]));
    ++it;
  }
}

std::vector<Proposal> decode(const std::string& video_id, const Outputs& outputs, double score_thresh,
                             double nms_iou) {
  const std::size_t T = outputs.probs.dim(0), C = outputs.probs.dim(1);
  std::vector<Proposal> raw;
  for (std::size_t t = 0; t < T; ++t) {
    const double l = outputs.offsets.at(t, 0), r = outputs.offsets.at(t, 1);
    const double s = std::max(0.0, double(t) - l);
    const double e = std::min(double(T), double(t) + r);
    if (!(e > s)) continue;
    for (std::size_t c = 0; c < C; ++c) {
      const double p = outputs.probs.at(t, c);
      if (p < score_thresh) continue;
      raw.push_back(make_proposal(video_id, Interval(s, e), static_cast<int>(c), std::clamp(p, 0.0, 1.0)));
    }
  }
  return postprocess::nms(std::move(raw), nms_iou);
}

PseudoLabels group_by_video(std::span<const Proposal> proposals) {
  PseudoLabels out;
  for (const auto& p : proposals) out[p.video_id].push_back(p);
  return out;
}

LossBreakdown video_loss(ForwardPass& pass, const SnippetTargets& targets, const MultiHot& label,
                         const StudentConfig& config, double grad_weight) {
  LossBreakdown l;
  l.focal = focal_loss(pass.class_logits, targets, config.focal_alpha, config.focal_gamma, grad_weight);
  l.diou = diou_regression_loss(pass.offsets, targets, grad_weight);
  if (config.use_mil) {
    const std::size_t T = pass.class_logits.dim(0);
    l.mil = student_mil_loss(pass.class_logits, label, std::min(T, ceil_fraction(T, config.k_fraction)), grad_weight);
  }
  l.total = l.focal + l.diou + l.mil;
  return l;
}

namespace {

std::vector<SnippetTargets> build_targets(const std::vector<VideoRecord>& dataset, const PseudoLabels& labels) {
  std::vector<SnippetTargets> out;
  out.reserve(dataset.size());
  static const std::vector<Proposal> none;
  for (const auto& v : dataset) {
    const auto it = labels.find(v.id);
    out.push_back(assign_targets(it == labels.end() ? none : it->second, v.length()));
  }
  return out;
}

void fit(TrainedStudent& ts, const std::vector<VideoRecord>& dataset, const std::vector<SnippetTargets>& targets,
         const StudentConfig& config, std::size_t iterations, std::uint64_t stream, std::size_t log_offset,
         std::vector<LogRow>* log) {
  diffnum::AdamState adam(ts.net.params(), static_cast<float>(config.learning_rate));
  BatchSampler sampler(dataset.size(), config.batch, config.seed ^ stream);
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto indices = sampler.next();
    const double w = 1.0 / double(indices.size());
    LossBreakdown batch_loss;
    for (auto i : indices) {
      auto pass = forward(ts.net, dataset[i]);
      const auto l = video_loss(pass, targets[i], dataset[i].label, config, w);
      batch_loss.focal += w * l.focal;
      batch_loss.diou += w * l.diou;
      batch_loss.mil += w * l.mil;
      batch_loss.total += w * l.total;
      backward(ts.net, pass);
    }
    if (!std::isfinite(batch_loss.total))
      throw TrainingError("student loss became non-finite at iteration " + std::to_string(log_offset + it));
    diffnum::adam_step(ts.net.params(), adam);
    ema_update(ts.ema, ts.net.params());
    if (log) log->push_back({log_offset + it, batch_loss});
  }
}

void check_dataset(const std::vector<VideoRecord>& dataset, std::size_t num_classes) {
  if (dataset.empty()) throw ContractError("train_student: empty dataset");
  const std::size_t D = dataset.front().features.cols;
  for (const auto& v : dataset) {
    if (v.features.cols != D) throw ContractError("train_student: inconsistent feature widths");
    if (v.label.size() != num_classes) throw ContractError("train_student: label width mismatch in " + v.id);
  }
}

}  // namespace

TrainedStudent train_student(const std::vector<VideoRecord>& dataset, const PseudoLabels& pseudo_labels,
                             std::size_t num_classes, const StudentConfig& config, std::size_t iterations,
                             std::vector<LogRow>* log) {
  config.validate();
  check_dataset(dataset, num_classes);
  StudentNet net(dataset.front().features.cols, config.embed_dim, num_classes, config.prior_prob, config.seed);
  auto ema = make_ema(net.params(), config.ema_decay);
  TrainedStudent ts{std::move(net), std::move(ema)};
  fit(ts, dataset, build_targets(dataset, pseudo_labels), config, iterations, 0x2545f4914f6cdd1dULL, 0, log);
  return ts;
}

std::vector<Proposal> teacher_labels(const EmaState& ema, const std::vector<VideoRecord>& dataset,
                                     const StudentConfig& config) {
  diffnum::ModelParams copy;
  for (const auto& [name, t] : ema.shadow)
    copy.add(name, Tensor(t.shape(), std::vector<float>(t.data().begin(), t.data().end())));
  const StudentNet teacher(std::move(copy));
  std::vector<Proposal> out;
  for (const auto& v : dataset) {
    for (auto& p : decode(v.id, infer(teacher, v), std::max(config.score_thresh, config.eta_prime), config.nms_iou))
      if (p.conf >= config.eta_prime) out.push_back(std::move(p));
  }
  return out;
}

void distill_round(TrainedStudent& trained, const std::vector<VideoRecord>& dataset, const StudentConfig& config,
                   std::size_t iterations, std::vector<Proposal>* teacher_out, std::vector<LogRow>* log) {
  config.validate();
  check_dataset(dataset, trained.net.num_classes());
  auto labels = teacher_labels(trained.ema, dataset, config);
  const auto targets = build_targets(dataset, group_by_video(labels));
  const std::size_t offset = log && !log->empty() ? log->back().iteration + 1 : 0;
  fit(trained, dataset, targets, config, iterations, 0x94d049bb133111ebULL, offset, log);
  if (teacher_out) *teacher_out = std::move(labels);
}

TrainedStudent run_training_stage(const std::vector<VideoRecord>& dataset, const PseudoLabels& pseudo_labels,
                                  std::size_t num_classes, const StudentConfig& config,
                                  std::vector<LogRow>* log) {
  auto trained = train_student(dataset, pseudo_labels, num_classes, config, config.first_stage_iterations(), log);
  if (config.distill && config.distill_iterations() > 0)
    distill_round(trained, dataset, config, config.distill_iterations(), nullptr, log);
  return trained;
}

std::vector<Proposal> predict(const StudentNet& net, const std::vector<VideoRecord>& videos,
                              const StudentConfig& config) {
  std::vector<Proposal> out;
  for (const auto& v : videos) {
    auto props = decode(v.id, infer(net, v), config.score_thresh, config.nms_iou);
    out.insert(out.end(), std::make_move_iterator(props.begin()), std::make_move_iterator(props.end()));
  }
  return out;
}

}  // namespace fustal::student
