#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ocvp/common.hpp"

namespace ocvp::datagen {

// Synthetic moving-shapes generator. Every sequence shows K_d rigid shapes
// translating over a static background; objects start in a random quadrant
// and move toward the opposite one, which makes them cross paths and occlude
// each other mid-sequence. Alongside the frames we emit full ground truth:
// amodal per-object masks (support including occluded pixels), the exact
// per-step translation of each object, and the depth order used to composite
// the scene. All randomness flows through one std::mt19937_64 stream per
// sequence, so a (seed, config) pair maps to bit-identical output on every
// platform.

enum class Shape { circle, square, triangle };
enum class Quadrant { TL, TR, BL, BR };

const char* shape_name(Shape shape);
const char* quadrant_name(Quadrant quadrant);
Shape shape_from_name(const std::string& name);
Quadrant quadrant_from_name(const std::string& name);

// Unit direction (x, y) from a quadrant toward the opposite one, e.g. TL
// maps to (+1, +1) / sqrt(2). Image coordinates: x grows right, y grows down.
std::array<double, 2> quadrant_direction(Quadrant quadrant);

// Static description of one object. `start_offset` is the subpixel center
// position relative to the start quadrant's top-left corner; `speed` is the
// step length in pixels per frame along the quadrant diagonal. `depth_rank`
// is 1 for the object nearest the camera. Rendering ignores `depth_rank`
// and trusts the explicit depth order instead; the generator keeps the two
// consistent.
struct ShapeSpec {
  Shape shape = Shape::circle;
  std::array<std::uint8_t, 3> color{255, 255, 255};
  double size = 12.0;  // side length (square/triangle) or diameter (circle)
  Quadrant start_quadrant = Quadrant::TL;
  std::array<double, 2> start_offset{0.0, 0.0};
  double speed = 2.0;
  std::int64_t depth_rank = 1;
};

// Absolute center of the shape at frame 0, in pixel coordinates.
std::array<double, 2> start_center(const ShapeSpec& spec, std::int64_t height,
                                   std::int64_t width);

// Velocity in pixels per frame implied by the quadrant diagonal and speed.
std::array<double, 2> spec_velocity(const ShapeSpec& spec);

// Ground truth attached to a rendered sequence.
//   masks       [T, K, H, W] float in {0, 1}; full support per object, even
//               where another object occludes it.
//   transforms  [T-1, K, 3, 3] double; pure translations mapping the object
//               at step t to step t+1 (slot order, not depth order).
//   depth_order object indices front to back; depth_order[0] is nearest.
//   background  [3, H, W] float in [0, 1]; constant across the sequence.
struct SequenceAnnotation {
  torch::Tensor masks;
  torch::Tensor transforms;
  std::vector<std::int64_t> depth_order;
  torch::Tensor background;
  std::vector<ShapeSpec> shapes;
  std::uint64_t seed = 0;
};

struct VideoSequence {
  torch::Tensor frames;  // [T, 3, H, W] float in [0, 1]
};

// Binary mask of one shape instance, [H, W] float in {0, 1}. Pixel (x, y)
// owns the square [x - 0.5, x + 0.5) x [y - 0.5, y + 0.5) and is set when at
// least half of a 4x4 subsample grid lands inside the shape.
torch::Tensor rasterize_shape(Shape shape, double center_x, double center_y,
                              double size, std::int64_t height,
                              std::int64_t width);

// Uniformly colored background, [3, H, W] float.
torch::Tensor solid_background(std::int64_t height, std::int64_t width);

// Smooth low-frequency sinusoid mix for the textured stress variant,
// quantized to 8 bits so disk round trips are exact. Consumes nine draws.
torch::Tensor textured_background(std::int64_t height, std::int64_t width,
                                  std::mt19937_64& rng);

// Deterministic core renderer: no RNG, everything explicit. `velocities`
// holds one constant (vx, vy) pixel step per shape, applied at every frame
// transition; shapes must stay fully inside the frame for all T positions or
// a parameter error is thrown. Frames are painted back to front over
// `background` with hard (thresholded) masks, so compositing the annotation
// masks in depth order reproduces the frames exactly.
std::pair<VideoSequence, SequenceAnnotation> render_sequence(
    const std::vector<ShapeSpec>& shapes,
    const std::vector<std::array<double, 2>>& velocities,
    const std::vector<std::int64_t>& depth_order, std::int64_t frames,
    const torch::Tensor& background);

// Draws K_d shapes (kind, palette color, size in [10, 18] px, start quadrant,
// speed in [1.0, 3.5] px/frame) plus a depth order, clamping size and speed
// so every trajectory stays inside the frame with its endpoint in the
// opposite quadrant. For K_d >= 2 the layout is resampled until two supports
// overlap at some frame (up to 100 trials, then a parameter error). The
// color palette is 5 levels per channel minus the background color.
std::pair<VideoSequence, SequenceAnnotation> generate_sequence(
    std::uint64_t seed, std::int64_t num_objects, std::int64_t frames,
    std::int64_t height, std::int64_t width, bool textured = false);

struct DatasetConfig {
  std::string root;
  std::int64_t train = 20000;
  std::int64_t val = 2000;
  std::int64_t test = 2000;
  std::int64_t objects = 3;
  std::int64_t frames = 11;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::uint64_t seed = 0;
  bool textured = false;
};

// Writes train/val/test splits under config.root:
//   manifest.json                  config, counts, sequence list, version "1"
//   <split>/seq_NNNNNN.bin         packed uint8 frames, T x H x W x 3
//   <split>/seq_NNNNNN.json        shape specs, transforms, depth order, seed
// Sequence i (counted across splits in train, val, test order) uses the RNG
// stream derive_seed(config.seed, i), so parallel and serial generation
// agree and any sequence can be regenerated from its own seed alone.
void generate_dataset(const DatasetConfig& config);

// Read-side view of one split. Frames come from the packed tensor files;
// annotations are regenerated from the per-sequence seed recorded in the
// manifest, which is cheaper than storing masks and guaranteed consistent
// by generator determinism.
class DatasetReader {
 public:
  DatasetReader(const std::string& root, const std::string& split);

  std::int64_t size() const { return static_cast<std::int64_t>(seeds_.size()); }
  const DatasetConfig& config() const { return config_; }
  std::uint64_t sequence_seed(std::int64_t index) const;

  torch::Tensor frames(std::int64_t index) const;  // [T, 3, H, W] float
  std::pair<VideoSequence, SequenceAnnotation> sample(std::int64_t index) const;

 private:
  DatasetConfig config_;
  std::string split_;
  std::vector<std::string> stems_;
  std::vector<std::uint64_t> seeds_;
};

}  // namespace ocvp::datagen
