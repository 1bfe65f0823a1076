#include "ocvp/pipeline.hpp"

#include <vector>

namespace ocvp::pipeline {

namespace {

torch::Tensor identity_stack(int64_t B, int64_t K, torch::TensorOptions opts) {
  return torch::eye(3, opts).view({1, 1, 3, 3}).expand({B, K, 3, 3}).contiguous();
}

// Warp a [B,K,C,H,W] stack per (batch, slot) with [B,K,3,3] transforms.
torch::Tensor warp_stack(const torch::Tensor& stack, const torch::Tensor& mats,
                         geometry::TransformFamily family) {
  const auto B = stack.size(0), K = stack.size(1);
  const auto C = stack.size(2), H = stack.size(3), W = stack.size(4);
  auto flat = geometry::warp_n(stack.reshape({B * K, C, H, W}), mats.reshape({B * K, 3, 3}),
                               family);
  return flat.reshape({B, K, C, H, W});
}

}  // namespace

Pipeline::Pipeline(networks::ObjectCentricModel model_) : model(std::move(model_)) {}

SceneMemory Pipeline::init_memory(int64_t batch, int64_t H, int64_t W,
                                  torch::TensorOptions opts) {
  const auto K = model->cfg.slots;
  SceneMemory mem;
  mem.canvases = torch::zeros({batch, K, 3, H, W}, opts);
  mem.bg_canvas = torch::zeros({batch, 3, H, W}, opts);
  mem.z_slot = identity_stack(batch, K, opts);
  mem.z_ordered = identity_stack(batch, K, opts);
  mem.gamma_hat = torch::zeros({batch, K, H, W}, opts);
  mem.m_prev = torch::zeros({batch, K, H, W}, opts);
  mem.state = model->mask_net->init_state(batch, H, W);
  mem.t = 0;
  return mem;
}

FrameDecomposition Pipeline::decompose(const torch::Tensor& frame, SceneMemory& memory,
                                       const StepOptions& opts) {
  if (frame.dim() != 4 || frame.size(1) != 3) {
    throw ParamError("decompose: expected frames [B,3,H,W], got " + c10::str(frame.sizes()));
  }
  const auto& cfg = model->cfg;
  auto [m, state_next] = model->mask_net->step(frame, memory.state);
  memory.state = state_next;

  auto m_bar = maskalg::soft_binarize(m, cfg.binarize_alpha, cfg.binarize_beta);
  // first frame: no prediction from a previous step exists yet, so the
  // permutation net sees the occlusion of the unordered binarized masks
  auto gamma_hat = memory.t == 0 ? maskalg::occlusion(m_bar) : memory.gamma_hat;
  auto P = model->perm_net->forward(m, gamma_hat, frame, opts.train_mode,
                                    derive_seed(opts.seed, static_cast<uint64_t>(memory.t)),
                                    opts.temperature);

  FrameDecomposition d;
  d.m = m;
  d.m_bar = m_bar;
  d.m_ordered = maskalg::apply_permutation(P, m_bar);
  d.gamma = maskalg::occlusion(d.m_ordered);
  d.P = P;
  d.objects = frame.unsqueeze(1) * d.gamma.unsqueeze(2);
  d.background = frame * maskalg::background_mask(d.gamma).unsqueeze(1);
  return d;
}

torch::Tensor Pipeline::inpaint_objects(const torch::Tensor& objects, const torch::Tensor& gamma,
                                        const torch::Tensor& canvases,
                                        const torch::Tensor& z_prev_ordered) {
  auto registered = warp_stack(canvases, z_prev_ordered, model->param_net->family());
  // visible region keeps the fresh appearance (objects = f ⊙ Γ already),
  // everything else keeps the time-registered memory
  return objects + (1.0 - gamma.unsqueeze(2)) * registered;
}

Prediction Pipeline::predict_next(const FrameDecomposition& d, const SceneMemory& memory,
                                  const torch::Tensor& z_slot) {
  const auto family = model->param_net->family();

  // canvases live in depth order, so they move with the depth-ordered mixture
  auto z_ordered = maskalg::apply_permutation(d.P, z_slot);
  auto x_hat = warp_stack(memory.canvases, z_ordered, family);

  // masks are warped in slot order and only then mixed into depth order
  auto m_warped = warp_stack(d.m_bar.unsqueeze(2), z_slot, family).squeeze(2);
  auto gamma_hat = maskalg::occlusion(maskalg::apply_permutation(d.P, m_warped));

  auto bg_weight = maskalg::background_mask(gamma_hat);
  auto frame_hat = (gamma_hat.unsqueeze(2) * x_hat).sum(1) +
                   memory.bg_canvas * bg_weight.unsqueeze(1);
  return {frame_hat, gamma_hat, z_ordered};
}

RolloutRecord Pipeline::rollout(const torch::Tensor& frames, const StepOptions& opts) {
  if (frames.dim() != 5 || frames.size(2) != 3) {
    throw ParamError("rollout: expected frames [B,T,3,H,W], got " + c10::str(frames.sizes()));
  }
  const auto B = frames.size(0), T = frames.size(1);
  const auto H = frames.size(3), W = frames.size(4);
  if (T < 2) throw ParamError("rollout: need at least 2 frames, got " + std::to_string(T));

  auto memory = init_memory(B, H, W, frames.options());
  std::vector<torch::Tensor> predictions, masks, masks_bin, masks_ordered, gammas, gamma_preds,
      perms, transforms, transforms_ordered, canvases, bg_canvases;

  for (int64_t t = 0; t < T - 1; ++t) {
    auto frame = frames.select(1, t);
    auto d = decompose(frame, memory, opts);

    if (t == 0) {
      // initial condition: canvases start as the partial appearances
      memory.canvases = d.objects;
      memory.bg_canvas = d.background;
    } else {
      memory.canvases = inpaint_objects(d.objects, d.gamma, memory.canvases, memory.z_ordered);
      memory.bg_canvas = model->bg_net->forward(d.background, memory.bg_canvas);
    }

    // at t = 1 the parameter net receives the current masks twice
    auto m_before = memory.t == 0 ? d.m : memory.m_prev;
    auto z_slot = model->param_net->forward(frame, d.m, m_before, memory.z_slot);

    auto pred = predict_next(d, memory, z_slot);
    if (!pred.frame.isfinite().all().item<bool>()) {
      throw NumericError("rollout: non-finite prediction at step " + std::to_string(t + 1));
    }

    memory.z_slot = z_slot;
    memory.z_ordered = pred.z_ordered;
    memory.gamma_hat = pred.gamma_hat;
    memory.m_prev = d.m;
    memory.t += 1;

    predictions.push_back(pred.frame);
    masks.push_back(d.m);
    masks_bin.push_back(d.m_bar);
    masks_ordered.push_back(d.m_ordered);
    gammas.push_back(d.gamma);
    gamma_preds.push_back(pred.gamma_hat);
    perms.push_back(d.P);
    transforms.push_back(z_slot);
    transforms_ordered.push_back(pred.z_ordered);
    canvases.push_back(memory.canvases);
    bg_canvases.push_back(memory.bg_canvas);
  }

  RolloutRecord rec;
  rec.predictions = torch::stack(predictions, 1);
  rec.masks = torch::stack(masks, 1);
  rec.masks_bin = torch::stack(masks_bin, 1);
  rec.masks_ordered = torch::stack(masks_ordered, 1);
  rec.gamma = torch::stack(gammas, 1);
  rec.gamma_pred = torch::stack(gamma_preds, 1);
  rec.perms = torch::stack(perms, 1);
  rec.transforms = torch::stack(transforms, 1);
  rec.transforms_ordered = torch::stack(transforms_ordered, 1);
  rec.canvases = torch::stack(canvases, 1);
  rec.bg_canvases = torch::stack(bg_canvases, 1);
  return rec;
}

}  // namespace ocvp::pipeline
