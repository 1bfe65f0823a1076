#include "ocvp/networks.hpp"

#include <cmath>

namespace ocvp::networks {

namespace nn = torch::nn;

torch::Tensor positional_encoding(int64_t H, int64_t W, int64_t C, torch::TensorOptions opts) {
  if (C % 4 != 0) {
    throw ParamError("positional_encoding: channels must be divisible by 4, got " +
                     std::to_string(C));
  }
  const int64_t bands = C / 4;
  auto xs = torch::arange(W, opts).view({1, 1, W});
  auto ys = torch::arange(H, opts).view({1, H, 1});
  auto freq =
      torch::pow(10000.0, -4.0 * torch::arange(bands, opts) / static_cast<double>(C))
          .view({bands, 1, 1});
  auto x_phase = xs * freq;  // [bands,1,W] -> broadcast over H below
  auto y_phase = ys * freq;
  auto interleave = [&](const torch::Tensor& phase, int64_t dimH, int64_t dimW) {
    auto s = torch::sin(phase).expand({bands, dimH, dimW});
    auto c = torch::cos(phase).expand({bands, dimH, dimW});
    return torch::stack({s, c}, 1).reshape({2 * bands, dimH, dimW});
  };
  return torch::cat({interleave(x_phase, H, W), interleave(y_phase, H, W)}, 0);
}

ConvLSTMCellImpl::ConvLSTMCellImpl(int64_t input_channels, int64_t hidden)
    : hidden_channels(hidden) {
  gates = register_module(
      "gates", nn::Conv2d(nn::Conv2dOptions(input_channels + hidden, 4 * hidden, 3).padding(1)));
  // bias the forget gate open so the cell retains content from the start
  torch::NoGradGuard ng;
  gates->bias.narrow(0, hidden, hidden).fill_(1.0);
}

std::pair<torch::Tensor, torch::Tensor> ConvLSTMCellImpl::step(const torch::Tensor& x,
                                                               const torch::Tensor& h,
                                                               const torch::Tensor& c) {
  auto g = gates(torch::cat({x, h}, 1));
  auto chunks = g.chunk(4, 1);
  auto i = torch::sigmoid(chunks[0]);
  auto f = torch::sigmoid(chunks[1]);
  auto cand = torch::tanh(chunks[2]);
  auto o = torch::sigmoid(chunks[3]);
  auto c_next = f * c + i * cand;
  auto h_next = o * torch::tanh(c_next);
  return {h_next, c_next};
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return torch::relu(x + conv2(torch::relu(conv1(x))));
}

int64_t MaskNetImpl::feature_dim(int64_t px) {
  auto once = [](int64_t n) { return (n - 1) / 2 + 1; };  // conv k3 s2 p1
  return once(once(px));
}

MaskNetImpl::MaskNetImpl(const NetworkConfig& cfg_) : cfg(cfg_) {
  const auto C = cfg.enc_channels;
  nn::Sequential enc;
  enc->push_back(nn::Conv2d(nn::Conv2dOptions(3, C, 3).stride(2).padding(1)));
  enc->push_back(nn::Functional(torch::relu));
  enc->push_back(nn::Conv2d(nn::Conv2dOptions(C, C, 3).stride(2).padding(1)));
  enc->push_back(nn::Functional(torch::relu));
  for (int64_t b = 0; b < cfg.enc_blocks; ++b) enc->push_back(ResBlock(C));
  encoder = register_module("encoder", enc);
  cell = register_module("cell", ConvLSTMCell(C, cfg.lstm_channels));
  head = register_module("head", nn::Conv2d(nn::Conv2dOptions(cfg.lstm_channels, 1, 1)));

  auto gen = at::detail::createCPUGenerator(cfg.slot_init_seed);
  slot_h0 = register_buffer(
      "slot_h0", torch::empty({cfg.slots, cfg.lstm_channels})
                     .normal_(0.0, cfg.slot_init_scale, gen));
  slot_c0 = register_buffer(
      "slot_c0", torch::empty({cfg.slots, cfg.lstm_channels})
                     .normal_(0.0, cfg.slot_init_scale, gen));
}

MaskNetState MaskNetImpl::init_state(int64_t batch, int64_t H, int64_t W) {
  const auto h = feature_dim(H), w = feature_dim(W);
  auto shape = std::vector<int64_t>{batch, cfg.slots, cfg.lstm_channels, h, w};
  auto h0 = slot_h0.view({1, cfg.slots, cfg.lstm_channels, 1, 1}).expand(shape).contiguous();
  auto c0 = slot_c0.view({1, cfg.slots, cfg.lstm_channels, 1, 1}).expand(shape).contiguous();
  return {h0, c0};
}

std::pair<torch::Tensor, MaskNetState> MaskNetImpl::step(const torch::Tensor& frame,
                                                         const MaskNetState& state) {
  const auto B = frame.size(0), H = frame.size(2), W = frame.size(3);
  const auto K = cfg.slots;
  auto feat = encoder->forward(frame);  // [B,C,h,w]
  auto pe = positional_encoding(feat.size(2), feat.size(3), cfg.enc_channels,
                                frame.options());
  feat = feat + pe.unsqueeze(0);

  auto fh = feat.size(2), fw = feat.size(3);
  auto slot_in = feat.unsqueeze(1)
                     .expand({B, K, cfg.enc_channels, fh, fw})
                     .reshape({B * K, cfg.enc_channels, fh, fw});
  auto [h_next, c_next] =
      cell->step(slot_in, state.h.reshape({B * K, cfg.lstm_channels, fh, fw}),
                 state.c.reshape({B * K, cfg.lstm_channels, fh, fw}));
  auto masks_small = torch::sigmoid(head(h_next));  // [B*K,1,h,w]
  auto masks = nn::functional::interpolate(
                   masks_small, nn::functional::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{H, W})
                                    .mode(torch::kBilinear)
                                    .align_corners(false))
                   .reshape({B, K, H, W});
  MaskNetState next{h_next.reshape({B, K, cfg.lstm_channels, fh, fw}),
                    c_next.reshape({B, K, cfg.lstm_channels, fh, fw})};
  if (!masks.isfinite().all().item<bool>()) {
    throw NumericError("mask_net_step: non-finite activations");
  }
  return {masks, next};
}

namespace {

// Shared slot trunk used by F2 and F3: three stride-2 convs and a global
// average pool down to a feature vector.
nn::Sequential make_slot_trunk(int64_t in_channels, int64_t width) {
  nn::Sequential trunk;
  trunk->push_back(nn::Conv2d(nn::Conv2dOptions(in_channels, width, 3).stride(2).padding(1)));
  trunk->push_back(nn::Functional(torch::relu));
  trunk->push_back(nn::Conv2d(nn::Conv2dOptions(width, 2 * width, 3).stride(2).padding(1)));
  trunk->push_back(nn::Functional(torch::relu));
  trunk->push_back(nn::Conv2d(nn::Conv2dOptions(2 * width, 2 * width, 3).stride(2).padding(1)));
  trunk->push_back(nn::Functional(torch::relu));
  trunk->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions({1, 1})));
  trunk->push_back(nn::Flatten());
  return trunk;
}

torch::Tensor expand_per_slot(const torch::Tensor& frame, int64_t K) {
  const auto B = frame.size(0);
  return frame.unsqueeze(1)
      .expand({B, K, frame.size(1), frame.size(2), frame.size(3)})
      .reshape({B * K, frame.size(1), frame.size(2), frame.size(3)});
}

}  // namespace

PermutationNetImpl::PermutationNetImpl(const NetworkConfig& cfg_) : cfg(cfg_) {
  trunk = register_module("trunk", make_slot_trunk(5, cfg.perm_channels));
  nn::Sequential m;
  m->push_back(nn::Linear(2 * cfg.perm_channels, cfg.perm_hidden));
  m->push_back(nn::Functional(torch::relu));
  m->push_back(nn::Linear(cfg.perm_hidden, cfg.slots));
  mlp = register_module("mlp", m);
}

torch::Tensor PermutationNetImpl::logits(const torch::Tensor& m, const torch::Tensor& gamma_hat,
                                         const torch::Tensor& frame) {
  const auto B = m.size(0), K = m.size(1);
  const auto H = m.size(2), W = m.size(3);
  if (gamma_hat.sizes() != m.sizes() || frame.size(0) != B) {
    throw ParamError("permutation_net: input shapes disagree");
  }
  auto in = torch::cat({m.reshape({B * K, 1, H, W}), gamma_hat.reshape({B * K, 1, H, W}),
                        expand_per_slot(frame, K)},
                       1);
  auto scores = mlp->forward(trunk->forward(in));  // [B*K, K]
  return scores.reshape({B, K, K});               // row k holds slot k's scores
}

torch::Tensor PermutationNetImpl::forward(const torch::Tensor& m, const torch::Tensor& gamma_hat,
                                          const torch::Tensor& frame, bool train_mode,
                                          uint64_t seed, double temperature) {
  return maskalg::sinkhorn(logits(m, gamma_hat, frame),
                           {temperature, cfg.sinkhorn_iters, train_mode, seed});
}

ParamNetImpl::ParamNetImpl(const NetworkConfig& cfg_) : cfg(cfg_) {
  trunk = register_module("trunk", make_slot_trunk(5, cfg.param_channels));
  nn::Sequential m;
  m->push_back(nn::Linear(2 * cfg.param_channels + 9, cfg.param_hidden1));
  m->push_back(nn::Functional(torch::relu));
  m->push_back(nn::Linear(cfg.param_hidden1, cfg.param_hidden2));
  m->push_back(nn::Functional(torch::relu));
  mlp = register_module("mlp", m);
  const int64_t dof = cfg.projective ? 8 : 6;
  out = register_module("out", nn::Linear(cfg.param_hidden2, dof));
  // zeroed output layer makes the initial prediction exactly the identity
  torch::NoGradGuard ng;
  out->weight.zero_();
  out->bias.zero_();
}

torch::Tensor ParamNetImpl::forward(const torch::Tensor& frame, const torch::Tensor& m_t,
                                    const torch::Tensor& m_prev, const torch::Tensor& z_prev) {
  const auto B = m_t.size(0), K = m_t.size(1);
  const auto H = m_t.size(2), W = m_t.size(3);
  auto in = torch::cat({expand_per_slot(frame, K), m_t.reshape({B * K, 1, H, W}),
                        m_prev.reshape({B * K, 1, H, W})},
                       1);
  auto feats = trunk->forward(in);
  auto offsets = out(mlp->forward(torch::cat({feats, z_prev.reshape({B * K, 9})}, 1)));

  const auto opts = offsets.options();
  const double sl = cfg.offset_scale_linear, st = cfg.offset_scale_translation;
  torch::Tensor scale;
  if (cfg.projective) {
    scale = torch::tensor({sl, sl, st, sl, sl, st, sl, sl}, opts);
  } else {
    scale = torch::tensor({sl, sl, st, sl, sl, st}, opts);
  }
  auto d = offsets * scale;
  torch::Tensor nine;
  if (cfg.projective) {
    nine = torch::cat({d, torch::zeros({B * K, 1}, opts)}, 1);
  } else {
    nine = torch::cat({d, torch::zeros({B * K, 3}, opts)}, 1);
  }
  auto z = nine.reshape({B * K, 3, 3}) + torch::eye(3, opts);
  return z.reshape({B, K, 3, 3});
}

BackgroundInpaintImpl::BackgroundInpaintImpl(const NetworkConfig& cfg_) : cfg(cfg_) {
  const auto C = cfg.bg_channels;
  nn::Sequential s;
  s->push_back(nn::Conv2d(nn::Conv2dOptions(2, C, 3).padding(1)));
  s->push_back(nn::Functional(torch::relu));
  for (int64_t i = 0; i < cfg.bg_layers - 2; ++i) {
    s->push_back(nn::Conv2d(nn::Conv2dOptions(C, C, 3).padding(1)));
    s->push_back(nn::Functional(torch::relu));
  }
  s->push_back(nn::Conv2d(nn::Conv2dOptions(C, 1, 3).padding(1)));
  net = register_module("net", s);
}

torch::Tensor BackgroundInpaintImpl::forward(const torch::Tensor& x_bg,
                                             const torch::Tensor& memory) {
  const auto B = x_bg.size(0), H = x_bg.size(2), W = x_bg.size(3);
  if (memory.sizes() != x_bg.sizes() || x_bg.size(1) != 3) {
    throw ParamError("background_inpaint: expected matching [B,3,H,W] inputs");
  }
  // one color channel at a time, same kernels for R, G and B; the sigmoid
  // keeps the canvas inside (0,1) without the dead flat regions a hard clamp
  // would add (a clamped canvas can start pinned at zero and never recover)
  auto in = torch::stack({x_bg.reshape({B * 3, H, W}), memory.reshape({B * 3, H, W})}, 1);
  auto logits = net->forward(in).reshape({B, 3, H, W});
  return torch::sigmoid(logits);
}

ObjectCentricModelImpl::ObjectCentricModelImpl(const NetworkConfig& cfg_) : cfg(cfg_) {
  mask_net = register_module("mask_net", MaskNet(cfg));
  perm_net = register_module("perm_net", PermutationNet(cfg));
  param_net = register_module("param_net", ParamNet(cfg));
  bg_net = register_module("bg_net", BackgroundInpaint(cfg));
}

}  // namespace ocvp::networks
