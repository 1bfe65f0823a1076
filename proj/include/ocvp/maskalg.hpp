#pragma once

#include <torch/torch.h>

#include "ocvp/common.hpp"

namespace ocvp::maskalg {

// Mask stacks are [K,H,W] or [B,K,H,W] tensors with entries in [0,1]. The
// stages follow the decomposition chain: soft -> binarized -> depth-ordered
// -> occlusion. Permutations are K x K (or [B,K,K]) doubly stochastic
// matrices.

// Elementwise logistic sharpening, sigmoid(alpha * (m - beta)). Monotone
// increasing in m so that high-confidence mask values binarize towards 1.
torch::Tensor soft_binarize(const torch::Tensor& m, double alpha, double beta);

// Channelwise mixture out[k] = sum_l P[l,k] * m[l]. An exact permutation
// matrix reorders channels losslessly; P may be shared ([K,K]) or per batch
// element ([B,K,K] with m [B,K,H,W]).
torch::Tensor apply_permutation(const torch::Tensor& P, const torch::Tensor& m);

// Front-to-back occupancy: channel 1 keeps its mask, every later channel is
// clipped by the mass already claimed in front of it.
torch::Tensor occlusion(const torch::Tensor& m_ordered);

// 1 - sum_k gamma[k], clamped to [0,1]. Together with the occlusion channels
// this partitions every pixel.
torch::Tensor background_mask(const torch::Tensor& gamma);

struct SinkhornOptions {
  double temperature = 1.0;
  int64_t iters = 20;
  bool gumbel_noise = false;
  uint64_t seed = 0;
};

// Gumbel-Sinkhorn normalization of [K,K] or [B,K,K] logits to a doubly
// stochastic matrix. Runs in log space; one iteration is a row pass plus a
// column pass. Gumbel noise is only added when requested (training) and is
// drawn from an explicit generator seeded per call.
torch::Tensor sinkhorn(const torch::Tensor& logits, const SinkhornOptions& opts);

}  // namespace ocvp::maskalg
