#pragma once

#include <torch/torch.h>

#include <utility>

#include "ocvp/common.hpp"
#include "ocvp/geometry.hpp"
#include "ocvp/maskalg.hpp"
#include "ocvp/networks.hpp"

namespace ocvp::pipeline {

// Everything produced while decomposing one frame. Mask stacks are [B,K,H,W];
// "slot" order is the mask net's arbitrary channel order, "depth" order is
// front to back after applying P.
struct FrameDecomposition {
  torch::Tensor m;           // soft slot masks
  torch::Tensor m_bar;       // binarized slot masks, m̄
  torch::Tensor m_ordered;   // depth-ordered binarized masks, m̿
  torch::Tensor gamma;       // occlusion channels Γ (visible part per depth)
  torch::Tensor P;           // [B,K,K] soft permutation, column = depth position
  torch::Tensor objects;     // [B,K,3,H,W] partial appearances f ⊙ Γ^(k)
  torch::Tensor background;  // [B,3,H,W] partial background f ⊙ m^(K+1)
};

// Recurrent state carried across the frames of one sequence.
//
// Transforms are kept in both index spaces: the slot-space stack feeds the
// parameter net's recurrence, while canvases live in depth order and are
// registered with the matching depth-ordered mixture P^T ⊗ z.
struct SceneMemory {
  torch::Tensor canvases;   // [B,K,3,H,W] object canvases x̃, depth order
  torch::Tensor bg_canvas;  // [B,3,H,W] background canvas x̃^(K+1)
  torch::Tensor z_slot;     // [B,K,3,3] previous transforms, slot order
  torch::Tensor z_ordered;  // [B,K,3,3] previous transforms, depth order
  torch::Tensor gamma_hat;  // [B,K,H,W] occlusion predicted for the next frame
  torch::Tensor m_prev;     // [B,K,H,W] previous soft masks
  networks::MaskNetState state;
  int64_t t = 0;  // frames consumed so far
};

struct StepOptions {
  bool train_mode = false;  // enables Gumbel noise in the permutation net
  uint64_t seed = 0;        // master seed; per-step seeds are derived from it
  double temperature = 1.0;
};

// One-step prediction outputs.
struct Prediction {
  torch::Tensor frame;      // [B,3,H,W] composed f̂_{t+1}
  torch::Tensor gamma_hat;  // [B,K,H,W] Γ̂_{t+1}
  torch::Tensor z_ordered;  // [B,K,3,3] transforms mixed into depth order
};

// Full per-sequence outputs, stacked over the T−1 processed steps along dim 1.
struct RolloutRecord {
  torch::Tensor predictions;         // [B,T-1,3,H,W] f̂_2 .. f̂_T
  torch::Tensor masks;               // [B,T-1,K,H,W] soft m_t
  torch::Tensor masks_bin;           // [B,T-1,K,H,W] m̄_t
  torch::Tensor masks_ordered;       // [B,T-1,K,H,W] m̿_t
  torch::Tensor gamma;               // [B,T-1,K,H,W] Γ_t
  torch::Tensor gamma_pred;          // [B,T-1,K,H,W] Γ̂_{t+1} emitted at step t
  torch::Tensor perms;               // [B,T-1,K,K] P_t
  torch::Tensor transforms;          // [B,T-1,K,3,3] z_t, slot order
  torch::Tensor transforms_ordered;  // [B,T-1,K,3,3] P_t^T ⊗ z_t
  torch::Tensor canvases;            // [B,T-1,K,3,H,W] x̃_t
  torch::Tensor bg_canvases;         // [B,T-1,3,H,W] x̃_t^(K+1)
};

// Ties the four networks together into the per-frame recurrence: decompose,
// inpaint, predict transform parameters, compose the next frame.
class Pipeline {
 public:
  explicit Pipeline(networks::ObjectCentricModel model);

  SceneMemory init_memory(int64_t batch, int64_t H, int64_t W,
                          torch::TensorOptions opts = torch::dtype(torch::kFloat));

  // Runs the mask, permutation and occlusion stages on one frame and advances
  // the mask-net state. At t = 1 (memory.t == 0) the permutation net sees the
  // occlusion of the unordered binarized masks; afterwards it sees the Γ̂
  // predicted at the previous step.
  FrameDecomposition decompose(const torch::Tensor& frame, SceneMemory& memory,
                               const StepOptions& opts);

  // Copy-based object inpainting: registers each canvas to the current frame
  // with the previous depth-ordered transform, keeps the fresh appearance on
  // the visible region and the registered memory elsewhere.
  torch::Tensor inpaint_objects(const torch::Tensor& objects, const torch::Tensor& gamma,
                                const torch::Tensor& canvases,
                                const torch::Tensor& z_prev_ordered);

  // Warps canvases and masks one step forward and composes the next frame.
  // Expects memory canvases already updated for the current step.
  Prediction predict_next(const FrameDecomposition& d, const SceneMemory& memory,
                          const torch::Tensor& z_slot);

  // Algorithm: for t = 1..T−1, decompose f_t, update canvases (initializing
  // them at t = 1), predict z_t and compose f̂_{t+1}.
  RolloutRecord rollout(const torch::Tensor& frames /*[B,T,3,H,W]*/,
                        const StepOptions& opts);

  networks::ObjectCentricModel model;
};

}  // namespace ocvp::pipeline
