#pragma once

#include <torch/torch.h>

#include <random>
#include <vector>

#include "ocvp/common.hpp"
#include "ocvp/geometry.hpp"
#include "ocvp/pipeline.hpp"

namespace ocvp::losses {

// λ1..λ5 of the total objective plus the binarization hyperparameters that
// the consistency term shares with the pipeline.
struct LossWeights {
  double prediction = 1.0;      // λ1
  double sparsity = 0.1;        // λ2
  double concentration = 0.5;   // λ3
  double consistency = 1.0;     // λ4
  double weight_decay = 1e-5;   // λ5
  double binarize_alpha = 75.0;
  double binarize_beta = 0.4;
};

// One (t1, t2) pair in 1-based frame indexing; drawn once per training step.
struct ConsistencySample {
  int64_t t1 = 0;
  int64_t t2 = 0;
};

// t1 uniform over [1, floor(T/2)], t2 uniform over [floor(T/2)+1, T-1]. The
// upper bound T-1 keeps the backward direction inside the recorded steps.
ConsistencySample draw_consistency_sample(int64_t T, std::mt19937_64& rng);

// Mean over batch, time, channels and pixels of |predicted - target|.
torch::Tensor prediction_loss(const torch::Tensor& predicted, const torch::Tensor& target);

// Mean |m| over every element: (1/HWK)·Σ|m| per stack, averaged over leads.
torch::Tensor sparsity_loss(const torch::Tensor& m);

// Mass-weighted squared distance to each mask's center of mass, coordinates
// normalized to [0,1]; summed over the K channels, averaged over leading
// dims. Masks with total mass below 1e-6 contribute zero.
torch::Tensor concentration_loss(const torch::Tensor& m);

// Composes the frame one direction of the cyclic term predicts: the
// binarized masks and canvases recorded at step `from_t` are projected with
// the composed transform z_o (slot order) and ordered with the permutation
// recorded at step `order_t`. Step arguments use 1-based frame indexing.
torch::Tensor consistency_project(const pipeline::RolloutRecord& record, int64_t from_t,
                                  int64_t order_t, const torch::Tensor& z_o,
                                  geometry::TransformFamily family);

// L1 error of consistency_project against the observed frame `to_t`.
torch::Tensor consistency_direction(const pipeline::RolloutRecord& record,
                                    const torch::Tensor& frames, int64_t from_t, int64_t to_t,
                                    int64_t order_t, const torch::Tensor& z_o,
                                    geometry::TransformFamily family);

// Cyclic consistency: forward projection t1 -> t2 with the product
// z_{t2-1}···z_{t1} and permutation P_{t2-1}, backward t2 -> t1 with the
// inverse product and P_{t1+1}; average of the two L1 errors.
torch::Tensor consistency_loss(const pipeline::RolloutRecord& record, const torch::Tensor& frames,
                               const ConsistencySample& sample,
                               geometry::TransformFamily family = geometry::TransformFamily::affine);

// The four weighted terms; an undefined tensor stands for an absent term.
struct LossTerms {
  torch::Tensor prediction;
  torch::Tensor sparsity;
  torch::Tensor concentration;
  torch::Tensor consistency;
};

// λ1·Lp + λ2·Lm1 + λ3·Lm2 + λ4·Lc + λ5·‖θ‖², with θ the given parameters.
torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights,
                         const std::vector<torch::Tensor>& params);

}  // namespace ocvp::losses
