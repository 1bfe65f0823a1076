#pragma once

#include <torch/torch.h>

#include <utility>

#include "ocvp/common.hpp"
#include "ocvp/geometry.hpp"
#include "ocvp/maskalg.hpp"

namespace ocvp::networks {

// Deterministic 2D sinusoidal encoding, [C,H,W]. The first C/2 channels
// encode x, the rest y, each half as interleaved sin/cos pairs at geometric
// frequencies 10000^{-4i/C}.
torch::Tensor positional_encoding(int64_t H, int64_t W, int64_t C,
                                  torch::TensorOptions opts = torch::dtype(torch::kFloat));

struct NetworkConfig {
  int64_t slots = 3;  // K_m, number of object slots
  int64_t enc_channels = 64;
  int64_t enc_blocks = 3;
  int64_t lstm_channels = 64;
  int64_t perm_channels = 16;
  int64_t perm_hidden = 64;
  int64_t param_channels = 16;
  int64_t param_hidden1 = 128;
  int64_t param_hidden2 = 64;
  int64_t bg_channels = 32;
  int64_t bg_layers = 4;
  bool projective = false;
  double binarize_alpha = 75.0;
  double binarize_beta = 0.4;
  int64_t sinkhorn_iters = 20;
  // transform offsets are emitted in these units so that a unit of network
  // output moves the warp by a comparable amount in either entry type
  double offset_scale_linear = 0.1;
  double offset_scale_translation = 1.0;
  // slots share every weight; per-slot recurrent state constants are the only
  // thing that tells them apart
  double slot_init_scale = 0.5;
  uint64_t slot_init_seed = 9001;
};

struct ConvLSTMCellImpl : torch::nn::Module {
  ConvLSTMCellImpl(int64_t input_channels, int64_t hidden_channels);
  std::pair<torch::Tensor, torch::Tensor> step(const torch::Tensor& x, const torch::Tensor& h,
                                               const torch::Tensor& c);
  torch::nn::Conv2d gates{nullptr};
  int64_t hidden_channels;
};
TORCH_MODULE(ConvLSTMCell);

struct ResBlockImpl : torch::nn::Module {
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

// Recurrent per-slot state of the mask network, [B,K,C,H/4,W/4] each.
struct MaskNetState {
  torch::Tensor h;
  torch::Tensor c;
};

// F1: residual conv encoder + positional encoding + one conv-LSTM step per
// slot (shared weights, per-slot state), projected to a [0,1] mask per slot.
struct MaskNetImpl : torch::nn::Module {
  explicit MaskNetImpl(const NetworkConfig& cfg);
  MaskNetState init_state(int64_t batch, int64_t H, int64_t W);
  // frame [B,3,H,W] -> masks [B,K,H,W] plus updated state
  std::pair<torch::Tensor, MaskNetState> step(const torch::Tensor& frame,
                                              const MaskNetState& state);
  static int64_t feature_dim(int64_t px);

  NetworkConfig cfg;
  torch::nn::Sequential encoder{nullptr};
  ConvLSTMCell cell{nullptr};
  torch::nn::Conv2d head{nullptr};
  torch::Tensor slot_h0, slot_c0;  // [K,C] buffers, broadcast over space
};
TORCH_MODULE(MaskNet);

// F2: shared CNN per slot over (mask, predicted occlusion, frame), pooled
// into K scores per slot; the stacked K x K logits go through Gumbel-Sinkhorn.
struct PermutationNetImpl : torch::nn::Module {
  explicit PermutationNetImpl(const NetworkConfig& cfg);
  torch::Tensor logits(const torch::Tensor& m, const torch::Tensor& gamma_hat,
                       const torch::Tensor& frame);
  torch::Tensor forward(const torch::Tensor& m, const torch::Tensor& gamma_hat,
                        const torch::Tensor& frame, bool train_mode, uint64_t seed,
                        double temperature = 1.0);

  NetworkConfig cfg;
  torch::nn::Sequential trunk{nullptr};
  torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(PermutationNet);

// F3: shared CNN over (frame, current mask, previous mask) concatenated with
// the flattened previous transform; emits offsets added to the identity, so
// a zeroed final layer predicts exactly the identity transform.
struct ParamNetImpl : torch::nn::Module {
  explicit ParamNetImpl(const NetworkConfig& cfg);
  // frame [B,3,H,W], masks [B,K,H,W], z_prev [B,K,3,3] -> z [B,K,3,3]
  torch::Tensor forward(const torch::Tensor& frame, const torch::Tensor& m_t,
                        const torch::Tensor& m_prev, const torch::Tensor& z_prev);
  geometry::TransformFamily family() const {
    return cfg.projective ? geometry::TransformFamily::projective
                          : geometry::TransformFamily::affine;
  }

  NetworkConfig cfg;
  torch::nn::Sequential trunk{nullptr};
  torch::nn::Sequential mlp{nullptr};
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(ParamNet);

// F5: fully convolutional background inpainter applied channelwise with the
// same kernels for R, G and B, with a residual connection from the current
// partial background. Output clamped to [0,1].
struct BackgroundInpaintImpl : torch::nn::Module {
  explicit BackgroundInpaintImpl(const NetworkConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x_bg, const torch::Tensor& memory);

  NetworkConfig cfg;
  torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(BackgroundInpaint);

// The full trainable parameter set of the model.
struct ObjectCentricModelImpl : torch::nn::Module {
  explicit ObjectCentricModelImpl(const NetworkConfig& cfg);

  NetworkConfig cfg;
  MaskNet mask_net{nullptr};
  PermutationNet perm_net{nullptr};
  ParamNet param_net{nullptr};
  BackgroundInpaint bg_net{nullptr};
};
TORCH_MODULE(ObjectCentricModel);

}  // namespace ocvp::networks
