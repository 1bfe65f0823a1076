#include "ocvp/losses.hpp"

#include <string>

#include "ocvp/maskalg.hpp"

namespace ocvp::losses {

ConsistencySample draw_consistency_sample(int64_t T, std::mt19937_64& rng) {
  const int64_t half = T / 2;
  if (half < 1 || half + 1 > T - 1) {
    throw ParamError("draw_consistency_sample: need T >= 3, got " + std::to_string(T));
  }
  ConsistencySample s;
  s.t1 = 1 + static_cast<int64_t>(uniform_below(rng, static_cast<uint64_t>(half)));
  s.t2 = half + 1 + static_cast<int64_t>(uniform_below(rng, static_cast<uint64_t>(T - 1 - half)));
  return s;
}

torch::Tensor prediction_loss(const torch::Tensor& predicted, const torch::Tensor& target) {
  if (predicted.sizes() != target.sizes()) {
    throw ParamError("prediction_loss: shape mismatch, " + c10::str(predicted.sizes()) +
                     " vs " + c10::str(target.sizes()));
  }
  return (predicted - target).abs().mean();
}

torch::Tensor sparsity_loss(const torch::Tensor& m) {
  if (m.dim() < 3) {
    throw ParamError("sparsity_loss: expected [...,K,H,W], got " + c10::str(m.sizes()));
  }
  return m.abs().mean();
}

torch::Tensor concentration_loss(const torch::Tensor& m) {
  if (m.dim() < 3) {
    throw ParamError("concentration_loss: expected [...,K,H,W], got " + c10::str(m.sizes()));
  }
  const auto H = m.size(-2), W = m.size(-1);
  auto flat = m.reshape({-1, H, W});  // one mask per row

  const auto opts = m.options();
  auto xs = torch::linspace(0.0, 1.0, W, opts).view({1, 1, W});
  auto ys = torch::linspace(0.0, 1.0, H, opts).view({1, H, 1});

  auto mass = flat.sum({1, 2});                       // [N]
  auto safe = mass.clamp_min(1e-6).view({-1, 1, 1});  // avoids 0/0 for dead masks
  auto weight = flat / safe;
  auto cx = (weight * xs).sum({1, 2}).view({-1, 1, 1});
  auto cy = (weight * ys).sum({1, 2}).view({-1, 1, 1});
  auto spread = ((xs - cx).pow(2) + (ys - cy).pow(2)) * weight;
  auto per_mask = torch::where(mass > 1e-6, spread.sum({1, 2}), torch::zeros_like(mass));

  // sum over the K channels, mean over any leading batch/time dims
  const auto K = m.size(-3);
  return per_mask.view({-1, K}).sum(1).mean();
}

namespace {

void check_step(const pipeline::RolloutRecord& record, int64_t t, const char* what) {
  const auto steps = record.masks_bin.size(1);
  if (t < 1 || t > steps) {
    throw ParamError(std::string("consistency_loss: ") + what + " step " + std::to_string(t) +
                     " outside recorded range [1," + std::to_string(steps) + "]");
  }
}

}  // namespace

torch::Tensor consistency_project(const pipeline::RolloutRecord& record, int64_t from_t,
                                  int64_t order_t, const torch::Tensor& z_o,
                                  geometry::TransformFamily family) {
  check_step(record, from_t, "source");
  check_step(record, order_t, "permutation");

  auto m_bar = record.masks_bin.select(1, from_t - 1);     // [B,K,H,W]
  auto canvases = record.canvases.select(1, from_t - 1);   // [B,K,3,H,W]
  auto bg = record.bg_canvases.select(1, from_t - 1);      // [B,3,H,W]
  auto P = record.perms.select(1, order_t - 1);            // [B,K,K]
  const auto B = m_bar.size(0), K = m_bar.size(1);
  const auto H = m_bar.size(2), W = m_bar.size(3);

  auto mats = z_o.reshape({B * K, 3, 3});
  auto m_warped =
      geometry::warp_n(m_bar.reshape({B * K, 1, H, W}), mats, family).reshape({B, K, H, W});
  auto gamma = maskalg::occlusion(maskalg::apply_permutation(P, m_warped));

  auto z_ordered = maskalg::apply_permutation(P, z_o);
  auto x_hat = geometry::warp_n(canvases.reshape({B * K, 3, H, W}),
                                z_ordered.reshape({B * K, 3, 3}), family)
                   .reshape({B, K, 3, H, W});

  return (gamma.unsqueeze(2) * x_hat).sum(1) +
         bg * maskalg::background_mask(gamma).unsqueeze(1);
}

torch::Tensor consistency_direction(const pipeline::RolloutRecord& record,
                                    const torch::Tensor& frames, int64_t from_t, int64_t to_t,
                                    int64_t order_t, const torch::Tensor& z_o,
                                    geometry::TransformFamily family) {
  if (to_t < 1 || to_t > frames.size(1)) {
    throw ParamError("consistency_loss: target frame " + std::to_string(to_t) + " out of range");
  }
  auto composed = consistency_project(record, from_t, order_t, z_o, family);
  return (frames.select(1, to_t - 1) - composed).abs().mean();
}

torch::Tensor consistency_loss(const pipeline::RolloutRecord& record, const torch::Tensor& frames,
                               const ConsistencySample& sample,
                               geometry::TransformFamily family) {
  const auto t1 = sample.t1, t2 = sample.t2;
  if (!(t1 >= 1 && t1 < t2)) {
    throw ParamError("consistency_loss: need 1 <= t1 < t2, got (" + std::to_string(t1) + "," +
                     std::to_string(t2) + ")");
  }
  check_step(record, t2, "t2");

  // z_o = z_{t2-1} ··· z_{t1} per slot (chronological right-to-left product)
  std::vector<torch::Tensor> steps;
  for (int64_t t = t1; t <= t2 - 1; ++t) steps.push_back(record.transforms.select(1, t - 1));
  auto z_o = geometry::compose_steps(steps);
  auto z_back = geometry::invert_n(z_o);

  auto forward = consistency_direction(record, frames, t1, t2, t2 - 1, z_o, family);
  auto backward = consistency_direction(record, frames, t2, t1, t1 + 1, z_back, family);
  return (forward + backward) / 2.0;
}

torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights,
                         const std::vector<torch::Tensor>& params) {
  for (double w : {weights.prediction, weights.sparsity, weights.concentration,
                   weights.consistency, weights.weight_decay}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ParamError("total_loss: weights must be finite and nonnegative");
    }
  }
  if (!(weights.prediction > 0.0)) throw ParamError("total_loss: lambda1 must be positive");

  auto check_term = [](const torch::Tensor& t, const char* name) {
    if (t.defined() && !t.isfinite().all().item<bool>()) {
      throw NumericError(std::string("total_loss: non-finite ") + name + " term");
    }
  };
  check_term(terms.prediction, "prediction");
  check_term(terms.sparsity, "sparsity");
  check_term(terms.concentration, "concentration");
  check_term(terms.consistency, "consistency");
  if (!terms.prediction.defined()) {
    throw ParamError("total_loss: prediction term is required");
  }

  auto total = weights.prediction * terms.prediction;
  if (terms.sparsity.defined()) total = total + weights.sparsity * terms.sparsity;
  if (terms.concentration.defined()) total = total + weights.concentration * terms.concentration;
  if (terms.consistency.defined()) total = total + weights.consistency * terms.consistency;
  if (weights.weight_decay > 0.0 && !params.empty()) {
    auto norm = torch::zeros({}, terms.prediction.options());
    for (const auto& p : params) norm = norm + p.pow(2).sum();
    total = total + weights.weight_decay * norm;
  }
  return total;
}

}  // namespace ocvp::losses
