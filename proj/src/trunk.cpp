#include "fustal/trunk.hpp"

#include <algorithm>
#include <numeric>

namespace fustal {

using diffnum::Tensor;

void add_trunk_params(diffnum::ModelParams& params, const std::string& prefix, std::size_t in_dim,
                      std::size_t embed_dim, std::mt19937_64& rng) {
  auto& k1 = params.add(prefix + "conv1.weight", {embed_dim, kTrunkWidth, in_dim});
  diffnum::init_uniform(k1, kTrunkWidth * in_dim, rng);
  auto& b1 = params.add(prefix + "conv1.bias", {embed_dim});
  diffnum::init_uniform(b1, kTrunkWidth * in_dim, rng);
  auto& k2 = params.add(prefix + "conv2.weight", {embed_dim, kTrunkWidth, embed_dim});
  diffnum::init_uniform(k2, kTrunkWidth * embed_dim, rng);
  auto& b2 = params.add(prefix + "conv2.bias", {embed_dim});
  diffnum::init_uniform(b2, kTrunkWidth * embed_dim, rng);
}

Tensor to_tensor(const FeatureMatrix& m) { return Tensor({m.rows, m.cols}, m.data); }

TrunkPass trunk_forward(const diffnum::ModelParams& params, const std::string& prefix,
                        const FeatureMatrix& features) {
  TrunkPass pass;
  pass.input = to_tensor(features);
  pass.pre1 = diffnum::conv1d(pass.input, params.at(prefix + "conv1.weight"), params.at(prefix + "conv1.bias"));
  pass.act1 = diffnum::relu(pass.pre1);
  pass.pre2 = diffnum::conv1d(pass.act1, params.at(prefix + "conv2.weight"), params.at(prefix + "conv2.bias"));
  pass.embeddings = diffnum::relu(pass.pre2);
  return pass;
}

void trunk_backward(diffnum::ModelParams& params, const std::string& prefix, TrunkPass& pass) {
  diffnum::relu_backward(pass.pre2, pass.embeddings);
  diffnum::conv1d_backward(pass.act1, params.at(prefix + "conv2.weight"), params.at(prefix + "conv2.bias"),
                           pass.pre2);
  diffnum::relu_backward(pass.pre1, pass.act1);
  diffnum::conv1d_backward(pass.input, params.at(prefix + "conv1.weight"), params.at(prefix + "conv1.bias"),
                           pass.pre1, /*propagate_input=*/false);
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch, std::uint64_t seed)
    : size_(dataset_size), batch_(std::min(batch, dataset_size)), order_(dataset_size), rng_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_);
  while (out.size() < batch_) {
    if (cursor_ == size_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

}  // namespace fustal
