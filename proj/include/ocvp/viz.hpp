#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "ocvp/common.hpp"
#include "ocvp/pipeline.hpp"

namespace ocvp::viz {

// Accepts [H,W], [1,H,W] or [3,H,W] in [0,1]; returns [3,H,W] with values
// clamped into range. Grayscale is replicated across channels.
torch::Tensor to_rgb(const torch::Tensor& image);

// Tiles rows of equally sized [3,h,w] cells into one image with `pad`
// pixels of `pad_value` between cells and around the border. Rows may have
// different lengths; shorter rows are padded with blank cells on the right.
torch::Tensor tile_grid(const std::vector<std::vector<torch::Tensor>>& rows, std::int64_t pad = 2,
                        double pad_value = 1.0);

// 8-bit PNG (truecolor for [3,H,W], grayscale for [H,W]/[1,H,W]); output
// bytes are a pure function of the pixels, so reruns are byte-identical.
void write_png(const std::string& path, const torch::Tensor& image);

// One column per rendered step of a single-sequence rollout (batch index 0):
// from top to bottom the binarized masks m_bar (K rows), the depth-ordered
// masks (K rows), the visibility masks gamma (K rows), the input frame, the
// object canvases (K rows), the background canvas, and the predicted next
// frame. `steps` lists target frame indices in [1, T-1]; empty means all.
torch::Tensor sequence_panel(const pipeline::RolloutRecord& record, const torch::Tensor& frames,
                             const std::vector<std::int64_t>& steps = {});

// One row over time of a single slot's inpainting canvas (batch index 0):
// the per-object appearance memory the model carries forward.
torch::Tensor object_strip(const pipeline::RolloutRecord& record, std::int64_t slot);

// Same as object_strip for the background canvas.
torch::Tensor background_strip(const pipeline::RolloutRecord& record);

// Five-number summary of one distribution, already in plot units.
struct BoxStats {
  double lo = 0.0;
  double q25 = 0.0;
  double q50 = 0.0;
  double q75 = 0.0;
  double hi = 0.0;
};

// Classic box-and-whisker chart, one box per entry in input order, with a
// numeric axis on the left (built-in 3x5 digit glyphs; no font files).
torch::Tensor boxplot(const std::vector<BoxStats>& boxes);

}  // namespace ocvp::viz
