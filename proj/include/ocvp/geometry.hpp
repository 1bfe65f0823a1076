#pragma once

#include <torch/torch.h>

#include <vector>

#include "ocvp/common.hpp"

namespace ocvp::geometry {

// Coordinate convention used everywhere in this project: 0-based pixel
// indices, x along width (columns), y along height (rows). A transform acts
// forward in time, p_{t+1} = matrix * [x_t, y_t, 1]^T. Resampling onto the
// t+1 lattice therefore uses the inverse matrix, so content visually moves
// by the transform.

enum class TransformFamily { affine, projective };

// 3x3 homogeneous planar transform. The matrix lives in a torch tensor so
// that transforms predicted by a network stay inside the autograd graph.
struct PlanarTransform {
  torch::Tensor matrix;  // [3,3]
  TransformFamily family = TransformFamily::affine;

  static PlanarTransform identity(torch::TensorOptions opts = torch::dtype(torch::kDouble));
  static PlanarTransform translation(double dx, double dy,
                                     torch::TensorOptions opts = torch::dtype(torch::kDouble));
  // Scales by (sx, sy) about the fixed point (cx, cy).
  static PlanarTransform scale_about(double sx, double sy, double cx, double cy,
                                     torch::TensorOptions opts = torch::dtype(torch::kDouble));
};

// Per-target-pixel source coordinates, coords[y][x] = (src_x, src_y).
struct SamplingGrid {
  torch::Tensor coords;  // [H,W,2]
};

inline constexpr double kSingularDetEps = 1e-8;

// Grid such that sampling with it moves content forward by z.
SamplingGrid make_grid(const PlanarTransform& z, int64_t H, int64_t W);

// Bilinear interpolation with zero padding outside the frame. image is
// [C,H,W]; differentiable w.r.t. both the image and the grid.
torch::Tensor bilinear_sample(const torch::Tensor& image, const SamplingGrid& grid);

// Product of the transforms applied in chronological order: the result of
// compose({z_a, z_b}) maps like z_b applied after z_a.
PlanarTransform compose(const std::vector<PlanarTransform>& chronological);

PlanarTransform invert(const PlanarTransform& z);

// Batched variants over a leading dim N with identical semantics. The
// pipeline flattens (batch, slot) into N.
torch::Tensor make_grid_n(const torch::Tensor& mats /*[N,3,3]*/, int64_t H, int64_t W,
                          TransformFamily family = TransformFamily::affine);
torch::Tensor bilinear_sample_n(const torch::Tensor& images /*[N,C,H,W]*/,
                                const torch::Tensor& grids /*[N,H,W,2]*/);
// make_grid_n + bilinear_sample_n in one call.
torch::Tensor warp_n(const torch::Tensor& images, const torch::Tensor& mats,
                     TransformFamily family = TransformFamily::affine);
// Folded matmul of a chronological list of [...,3,3] stacks.
torch::Tensor compose_steps(const std::vector<torch::Tensor>& chronological);
torch::Tensor invert_n(const torch::Tensor& mats);

}  // namespace ocvp::geometry
