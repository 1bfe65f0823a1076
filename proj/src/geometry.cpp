#include "ocvp/geometry.hpp"

namespace ocvp::geometry {

namespace {

void check_square3(const torch::Tensor& m, const char* who) {
  if (m.dim() < 2 || m.size(-1) != 3 || m.size(-2) != 3) {
    throw ParamError(std::string(who) + ": expected [...,3,3] matrix, got " +
                     c10::str(m.sizes()));
  }
}

void check_invertible(const torch::Tensor& m, const char* who) {
  auto det = torch::linalg_det(m.detach());
  double min_abs = det.abs().min().item<double>();
  if (!(min_abs > kSingularDetEps)) {
    throw SingularTransformError(std::string(who) + ": |det| = " + std::to_string(min_abs) +
                                 " below " + std::to_string(kSingularDetEps));
  }
}

}  // namespace

PlanarTransform PlanarTransform::identity(torch::TensorOptions opts) {
  return {torch::eye(3, opts), TransformFamily::affine};
}

PlanarTransform PlanarTransform::translation(double dx, double dy, torch::TensorOptions opts) {
  auto m = torch::eye(3, opts);
  m.index_put_({0, 2}, dx);
  m.index_put_({1, 2}, dy);
  return {m, TransformFamily::affine};
}

PlanarTransform PlanarTransform::scale_about(double sx, double sy, double cx, double cy,
                                             torch::TensorOptions opts) {
  auto m = torch::eye(3, opts);
  m.index_put_({0, 0}, sx);
  m.index_put_({1, 1}, sy);
  m.index_put_({0, 2}, cx * (1.0 - sx));
  m.index_put_({1, 2}, cy * (1.0 - sy));
  return {m, TransformFamily::affine};
}

torch::Tensor make_grid_n(const torch::Tensor& mats, int64_t H, int64_t W,
                          TransformFamily family) {
  check_square3(mats, "make_grid_n");
  if (H < 1 || W < 1) throw ParamError("make_grid_n: empty grid");
  check_invertible(mats, "make_grid_n");

  auto opts = mats.options();
  auto xs = torch::arange(W, opts);
  auto ys = torch::arange(H, opts);
  auto yx = torch::meshgrid({ys, xs}, "ij");
  auto ones = torch::ones({H, W}, opts);
  // [3, H*W] rows (x, y, 1) of target coordinates
  auto tgt = torch::stack({yx[1].reshape(-1), yx[0].reshape(-1), ones.reshape(-1)}, 0);

  auto inv = torch::linalg_inv(mats.reshape({-1, 3, 3}));  // [N,3,3]
  auto src = torch::matmul(inv, tgt);                      // [N,3,H*W]
  torch::Tensor gx = src.select(1, 0);
  torch::Tensor gy = src.select(1, 1);
  if (family == TransformFamily::projective) {
    auto w = src.select(1, 2);
    // guard the division; near-zero w means the point is at infinity and will
    // land far outside the frame, where padding makes it contribute zero
    auto w_safe = torch::where(w.abs() < 1e-12, torch::full_like(w, 1e-12), w);
    gx = gx / w_safe;
    gy = gy / w_safe;
  }
  auto n = mats.numel() / 9;
  return torch::stack({gx, gy}, -1).reshape({n, H, W, 2});
}

torch::Tensor bilinear_sample_n(const torch::Tensor& images, const torch::Tensor& grids) {
  if (images.dim() != 4) {
    throw ParamError("bilinear_sample_n: images must be [N,C,H,W], got " +
                     c10::str(images.sizes()));
  }
  if (grids.dim() != 4 || grids.size(-1) != 2 || grids.size(0) != images.size(0)) {
    throw ParamError("bilinear_sample_n: grids must be [N,H,W,2] matching images, got " +
                     c10::str(grids.sizes()));
  }
  const auto N = images.size(0), C = images.size(1);
  const auto H = images.size(2), W = images.size(3);
  const auto Ho = grids.size(1), Wo = grids.size(2);

  auto gx = grids.select(-1, 0);  // [N,Ho,Wo]
  auto gy = grids.select(-1, 1);
  auto x0f = gx.floor();
  auto y0f = gy.floor();
  auto wx1 = gx - x0f;  // weight of the right neighbour
  auto wy1 = gy - y0f;
  auto wx0 = 1.0 - wx1;
  auto wy0 = 1.0 - wy1;
  auto x0 = x0f.detach().to(torch::kLong);
  auto y0 = y0f.detach().to(torch::kLong);

  auto flat = images.reshape({N, C, H * W});
  auto out = torch::zeros({N, C, Ho, Wo}, images.options());

  auto accumulate = [&](const torch::Tensor& xi, const torch::Tensor& yi,
                        const torch::Tensor& w) {
    auto valid = ((xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)).to(images.dtype());
    auto idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).reshape({N, 1, Ho * Wo});
    auto vals = flat.gather(2, idx.expand({N, C, Ho * Wo})).reshape({N, C, Ho, Wo});
    out = out + vals * (w * valid).unsqueeze(1);
  };
  accumulate(x0, y0, wx0 * wy0);
  accumulate(x0 + 1, y0, wx1 * wy0);
  accumulate(x0, y0 + 1, wx0 * wy1);
  accumulate(x0 + 1, y0 + 1, wx1 * wy1);
  return out;
}

torch::Tensor warp_n(const torch::Tensor& images, const torch::Tensor& mats,
                     TransformFamily family) {
  return bilinear_sample_n(images, make_grid_n(mats, images.size(2), images.size(3), family));
}

torch::Tensor compose_steps(const std::vector<torch::Tensor>& chronological) {
  if (chronological.empty()) throw ParamError("compose_steps: empty list");
  auto acc = chronological.front();
  for (size_t i = 1; i < chronological.size(); ++i) {
    acc = torch::matmul(chronological[i], acc);  // later transforms multiply on the left
  }
  return acc;
}

torch::Tensor invert_n(const torch::Tensor& mats) {
  check_square3(mats, "invert_n");
  check_invertible(mats, "invert_n");
  return torch::linalg_inv(mats);
}

SamplingGrid make_grid(const PlanarTransform& z, int64_t H, int64_t W) {
  return {make_grid_n(z.matrix.unsqueeze(0), H, W, z.family).squeeze(0)};
}

torch::Tensor bilinear_sample(const torch::Tensor& image, const SamplingGrid& grid) {
  if (image.dim() != 3) {
    throw ParamError("bilinear_sample: image must be [C,H,W], got " + c10::str(image.sizes()));
  }
  return bilinear_sample_n(image.unsqueeze(0), grid.coords.unsqueeze(0)).squeeze(0);
}

PlanarTransform compose(const std::vector<PlanarTransform>& chronological) {
  if (chronological.empty()) throw ParamError("compose: empty list");
  std::vector<torch::Tensor> mats;
  mats.reserve(chronological.size());
  auto family = TransformFamily::affine;
  for (const auto& z : chronological) {
    mats.push_back(z.matrix);
    if (z.family == TransformFamily::projective) family = TransformFamily::projective;
  }
  return {compose_steps(mats), family};
}

PlanarTransform invert(const PlanarTransform& z) {
  return {invert_n(z.matrix.unsqueeze(0)).squeeze(0), z.family};
}

}  // namespace ocvp::geometry
