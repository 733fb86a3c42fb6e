#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/diffnum.hpp"

namespace fustal {

// conv1d(D->E, width 3) -> relu -> conv1d(E->E, width 3) -> relu, shared by
// the generator and the student. Parameters live under "<prefix>conv{1,2}.*".
struct TrunkPass {
  diffnum::Tensor input;
  diffnum::Tensor pre1, act1, pre2, embeddings;
};

inline constexpr std::size_t kTrunkWidth = 3;

void add_trunk_params(diffnum::ModelParams& params, const std::string& prefix, std::size_t in_dim,
                      std::size_t embed_dim, std::mt19937_64& rng);

diffnum::Tensor to_tensor(const FeatureMatrix& m);

TrunkPass trunk_forward(const diffnum::ModelParams& params, const std::string& prefix,
                        const FeatureMatrix& features);

// Requires pass.embeddings.grad populated; accumulates parameter gradients.
void trunk_backward(diffnum::ModelParams& params, const std::string& prefix, TrunkPass& pass);

// Epoch-shuffled minibatch indices, deterministic for a seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t size_, batch_, cursor_ = 0;
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
};

}  // namespace fustal
