#include "ocvp/maskalg.hpp"

#include <ATen/core/Generator.h>

namespace ocvp::maskalg {

torch::Tensor soft_binarize(const torch::Tensor& m, double alpha, double beta) {
  if (!(alpha > 0.0)) throw ParamError("soft_binarize: alpha must be > 0");
  if (!(beta > 0.0 && beta < 1.0)) throw ParamError("soft_binarize: beta must be in (0,1)");
  return torch::sigmoid(alpha * (m - beta));
}

torch::Tensor apply_permutation(const torch::Tensor& P, const torch::Tensor& m) {
  if (P.dim() < 2 || P.size(-1) != P.size(-2)) {
    throw ParamError("apply_permutation: P must be square, got " + c10::str(P.sizes()));
  }
  const auto K = P.size(-1);
  if (m.dim() < 3 || m.size(-3) != K) {
    throw ParamError("apply_permutation: mask stack must have " + std::to_string(K) +
                     " channels, got " + c10::str(m.sizes()));
  }
  if (P.dim() == 3 && m.dim() == 4 && P.size(0) != m.size(0)) {
    throw ParamError("apply_permutation: batch sizes disagree");
  }
  const auto H = m.size(-2), W = m.size(-1);
  auto flat = m.reshape({-1, K, H * W});
  auto Pb = P.dim() == 2 ? P.unsqueeze(0).expand({flat.size(0), K, K}) : P;
  auto out = torch::matmul(Pb.transpose(-1, -2), flat);
  return out.reshape(m.sizes());
}

torch::Tensor occlusion(const torch::Tensor& m_ordered) {
  if (m_ordered.dim() < 3) {
    throw ParamError("occlusion: expected [...,K,H,W], got " + c10::str(m_ordered.sizes()));
  }
  const auto ch = m_ordered.dim() - 3;
  const auto K = m_ordered.size(ch);
  auto front = m_ordered.narrow(ch, 0, 1);  // channel 1 owns everything it covers
  if (K == 1) return front;
  auto claimed = m_ordered.cumsum(ch).narrow(ch, 0, K - 1);
  auto rest = torch::relu(m_ordered.narrow(ch, 1, K - 1) - claimed);
  return torch::cat({front, rest}, ch);
}

torch::Tensor background_mask(const torch::Tensor& gamma) {
  if (gamma.dim() < 3) {
    throw ParamError("background_mask: expected [...,K,H,W], got " + c10::str(gamma.sizes()));
  }
  return (1.0 - gamma.sum(gamma.dim() - 3)).clamp(0.0, 1.0);
}

torch::Tensor sinkhorn(const torch::Tensor& logits, const SinkhornOptions& opts) {
  if (logits.dim() < 2 || logits.size(-1) != logits.size(-2)) {
    throw ParamError("sinkhorn: logits must be [...,K,K], got " + c10::str(logits.sizes()));
  }
  if (!(opts.temperature > 0.0)) throw ParamError("sinkhorn: temperature must be > 0");
  if (opts.iters < 1) throw ParamError("sinkhorn: iters must be >= 1");
  if (!logits.isfinite().all().item<bool>()) {
    throw ParamError("sinkhorn: non-finite logits");
  }

  auto l = logits;
  if (opts.gumbel_noise) {
    auto gen = at::detail::createCPUGenerator(opts.seed);
    auto u = torch::rand(logits.sizes(), gen, logits.options()).clamp(1e-12, 1.0 - 1e-12);
    l = l + (-torch::log(-torch::log(u)));
  }
  l = l / opts.temperature;
  // log-space alternating normalization; exp() never overflows this way
  for (int64_t i = 0; i < opts.iters; ++i) {
    l = l - torch::logsumexp(l, -1, /*keepdim=*/true);
    l = l - torch::logsumexp(l, -2, /*keepdim=*/true);
  }
  return torch::exp(l);
}

}  // namespace ocvp::maskalg
