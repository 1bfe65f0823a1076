#include "ocvp/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace ocvp::datagen {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;
const double kSqrt2 = std::sqrt(2.0);

// 5 intensity levels per channel; (128, 128, 128) is reserved for the
// default background, leaving 5^3 - 1 object colors.
constexpr std::array<std::uint8_t, 5> kPaletteLevels{0, 64, 128, 191, 255};
constexpr int kBackgroundPaletteIndex = 2 * 25 + 2 * 5 + 2;
constexpr double kBackgroundGray = 128.0 / 255.0;

constexpr double kMinSize = 10.0;
constexpr double kMaxSize = 18.0;
constexpr double kMinSpeed = 1.0;
constexpr double kMaxSpeed = 3.5;
constexpr int kOcclusionTrials = 100;

// Subsample offsets of the 4x4 coverage grid within one pixel's square.
constexpr std::array<double, 4> kSubsample{-0.375, -0.125, 0.125, 0.375};

// Half extents of a shape around its center: symmetric in x, asymmetric in
// y for the triangle (equilateral, apex up, centroid at the center).
struct Extent {
  double x = 0.0;
  double y_up = 0.0;
  double y_down = 0.0;
};

Extent shape_extent(Shape shape, double size) {
  const double half = 0.5 * size;
  if (shape == Shape::triangle) {
    const double height = size * std::sqrt(3.0) / 2.0;
    return {half, 2.0 * height / 3.0, height / 3.0};
  }
  return {half, half, half};
}

bool point_inside(Shape shape, double dx, double dy, double size) {
  const double half = 0.5 * size;
  switch (shape) {
    case Shape::circle:
      return dx * dx + dy * dy <= half * half;
    case Shape::square:
      return std::abs(dx) <= half && std::abs(dy) <= half;
    case Shape::triangle: {
      const double height = size * std::sqrt(3.0) / 2.0;
      const double ax = 0.0, ay = -2.0 * height / 3.0;
      const double bx = -half, by = height / 3.0;
      const double cx = half, cy = height / 3.0;
      // Same-side test against the three edges (A apex, B left, C right).
      const auto cross = [](double ux, double uy, double vx, double vy) {
        return ux * vy - uy * vx;
      };
      const double e0 = cross(bx - ax, by - ay, dx - ax, dy - ay);
      const double e1 = cross(cx - bx, cy - by, dx - bx, dy - by);
      const double e2 = cross(ax - cx, ay - cy, dx - cx, dy - cy);
      return (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) ||
             (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
    }
  }
  throw ParamError("point_inside: unknown shape kind");
}

void rasterize_into(float* data, Shape shape, double cx, double cy,
                    double size, std::int64_t height, std::int64_t width) {
  const Extent extent = shape_extent(shape, size);
  const auto x0 = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(cx - extent.x - 1.0)));
  const auto x1 = std::min<std::int64_t>(
      width - 1, static_cast<std::int64_t>(std::ceil(cx + extent.x + 1.0)));
  const auto y0 = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(cy - extent.y_up - 1.0)));
  const auto y1 = std::min<std::int64_t>(
      height - 1,
      static_cast<std::int64_t>(std::ceil(cy + extent.y_down + 1.0)));
  for (std::int64_t y = y0; y <= y1; ++y) {
    for (std::int64_t x = x0; x <= x1; ++x) {
      int inside = 0;
      for (const double oy : kSubsample) {
        for (const double ox : kSubsample) {
          inside += point_inside(shape, x + ox - cx, y + oy - cy, size) ? 1 : 0;
        }
      }
      if (inside >= 8) {
        data[y * width + x] = 1.0F;
      }
    }
  }
}

// Amodal masks for every shape at every frame, [T, K, H, W].
torch::Tensor rasterize_tracks(const std::vector<ShapeSpec>& shapes,
                               const std::vector<std::array<double, 2>>& velocities,
                               std::int64_t frames, std::int64_t height,
                               std::int64_t width) {
  const auto num_shapes = static_cast<std::int64_t>(shapes.size());
  auto masks =
      torch::zeros({frames, num_shapes, height, width}, torch::kFloat32);
  float* data = masks.data_ptr<float>();
  for (std::int64_t k = 0; k < num_shapes; ++k) {
    const auto center = start_center(shapes[k], height, width);
    for (std::int64_t t = 0; t < frames; ++t) {
      const double cx = center[0] + static_cast<double>(t) * velocities[k][0];
      const double cy = center[1] + static_cast<double>(t) * velocities[k][1];
      rasterize_into(data + (t * num_shapes + k) * height * width,
                     shapes[k].shape, cx, cy, shapes[k].size, height, width);
    }
  }
  return masks;
}

std::array<std::uint8_t, 3> draw_color(std::mt19937_64& rng) {
  auto flat = static_cast<int>(uniform_below(rng, 5 * 5 * 5 - 1));
  if (flat >= kBackgroundPaletteIndex) {
    ++flat;
  }
  return {kPaletteLevels[flat / 25], kPaletteLevels[(flat / 5) % 5],
          kPaletteLevels[flat % 5]};
}

struct AxisWindow {
  double lo = 0.0;
  double hi = 0.0;
};

// Valid range for the start coordinate on one axis: the trajectory must stay
// inside [0, length - 1] with `margin_lo/hi` slack toward each border, start
// in the half the sign points away from, and end in the opposite half.
AxisWindow axis_window(double length, double sign, double margin_lo,
                       double margin_hi, double travel) {
  const double half = 0.5 * length;
  if (sign > 0.0) {
    return {std::max(margin_lo, half - travel),
            std::min(half, length - 1.0 - margin_hi - travel)};
  }
  return {std::max(half, margin_lo + travel),
          std::min(length - 1.0 - margin_hi, half + travel)};
}

// Draws one shape. Consumes, in order: kind, color, size, quadrant, speed,
// start x, start y. Size and speed are clamped so the whole trajectory fits
// inside the frame; the start window then cannot be empty.
ShapeSpec draw_shape_spec(std::mt19937_64& rng, std::int64_t frames,
                          std::int64_t height, std::int64_t width) {
  ShapeSpec spec;
  spec.shape = static_cast<Shape>(uniform_below(rng, 3));
  spec.color = draw_color(rng);

  const double size = uniform_range(rng, kMinSize, kMaxSize);
  const Extent unit = shape_extent(spec.shape, 1.0);
  const double unit_max = std::max({unit.x, unit.y_up, unit.y_down});
  const double size_cap =
      (0.5 * static_cast<double>(std::min(height, width)) - 2.25) / unit_max;
  if (size_cap < 2.0) {
    throw ParamError("generate_sequence: frame too small for any shape");
  }
  spec.size = std::min(size, size_cap);

  spec.start_quadrant = static_cast<Quadrant>(uniform_below(rng, 4));
  const auto dir = quadrant_direction(spec.start_quadrant);

  const Extent extent = shape_extent(spec.shape, spec.size);
  const double mx = extent.x + 1.0;
  const double my_lo = extent.y_up + 1.0;
  const double my_hi = extent.y_down + 1.0;
  const double travel_cap =
      0.98 * std::min(static_cast<double>(width) - 1.0 - 2.0 * mx,
                      static_cast<double>(height) - 1.0 - my_lo - my_hi);
  const double speed = uniform_range(rng, kMinSpeed, kMaxSpeed);
  const double steps = static_cast<double>(frames - 1);
  spec.speed = std::min(speed, travel_cap * kSqrt2 / steps);
  if (spec.speed <= 1e-3) {
    throw ParamError("generate_sequence: frame too small for moving shapes");
  }

  const double travel = spec.speed * steps / kSqrt2;
  const AxisWindow wx = axis_window(static_cast<double>(width), dir[0], mx, mx, travel);
  const AxisWindow wy =
      axis_window(static_cast<double>(height), dir[1], my_lo, my_hi, travel);
  if (!(wx.lo < wx.hi) || !(wy.lo < wy.hi)) {
    throw NumericError("generate_sequence: empty start window after clamping");
  }
  const double cx = uniform_range(rng, wx.lo, wx.hi);
  const double cy = uniform_range(rng, wy.lo, wy.hi);
  const double qx = dir[0] > 0.0 ? 0.0 : 0.5 * static_cast<double>(width);
  const double qy = dir[1] > 0.0 ? 0.0 : 0.5 * static_cast<double>(height);
  spec.start_offset = {cx - qx, cy - qy};
  return spec;
}

std::vector<std::int64_t> draw_permutation(std::mt19937_64& rng,
                                           std::int64_t count) {
  std::vector<std::int64_t> order(count);
  std::iota(order.begin(), order.end(), std::int64_t{0});
  for (std::int64_t i = count - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(
        uniform_below(rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  return order;
}

void write_bytes(const fs::path& path, const void* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("generate_dataset: cannot open " + path.string() +
                  " for writing");
  }
  out.write(static_cast<const char*>(data),
            static_cast<std::streamsize>(count));
  if (!out) {
    throw IoError("generate_dataset: short write to " + path.string());
  }
}

void write_frames_bin(const fs::path& path, const torch::Tensor& frames) {
  const auto packed = frames.mul(255.0)
                          .round()
                          .clamp(0.0, 255.0)
                          .to(torch::kUInt8)
                          .permute({0, 2, 3, 1})
                          .contiguous();
  write_bytes(path, packed.data_ptr<std::uint8_t>(),
              static_cast<std::size_t>(packed.numel()));
}

json annotation_to_json(const SequenceAnnotation& ann,
                        const DatasetConfig& config) {
  json doc;
  doc["format_version"] = "1";
  doc["seed"] = ann.seed;
  doc["objects"] = static_cast<std::int64_t>(ann.shapes.size());
  doc["frames"] = config.frames;
  doc["height"] = config.height;
  doc["width"] = config.width;
  doc["textured"] = config.textured;
  doc["depth_order"] = ann.depth_order;

  json shapes = json::array();
  for (const ShapeSpec& spec : ann.shapes) {
    const auto velocity = spec_velocity(spec);
    shapes.push_back({{"shape", shape_name(spec.shape)},
                      {"color", {spec.color[0], spec.color[1], spec.color[2]}},
                      {"size", spec.size},
                      {"start_quadrant", quadrant_name(spec.start_quadrant)},
                      {"start_offset", {spec.start_offset[0], spec.start_offset[1]}},
                      {"speed", spec.speed},
                      {"depth_rank", spec.depth_rank},
                      {"velocity", {velocity[0], velocity[1]}}});
  }
  doc["shapes"] = std::move(shapes);

  // Row-major 3x3 per object per step.
  const auto mats = ann.transforms.to(torch::kFloat64).contiguous();
  const auto access = mats.accessor<double, 4>();
  json transforms = json::array();
  for (std::int64_t t = 0; t < mats.size(0); ++t) {
    json per_step = json::array();
    for (std::int64_t k = 0; k < mats.size(1); ++k) {
      json cells = json::array();
      for (std::int64_t r = 0; r < 3; ++r) {
        for (std::int64_t c = 0; c < 3; ++c) {
          cells.push_back(access[t][k][r][c]);
        }
      }
      per_step.push_back(std::move(cells));
    }
    transforms.push_back(std::move(per_step));
  }
  doc["transforms"] = std::move(transforms);
  return doc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("generate_dataset: cannot open " + path.string() +
                  " for writing");
  }
  out << text;
  if (!out) {
    throw IoError("generate_dataset: short write to " + path.string());
  }
}

}  // namespace

const char* shape_name(Shape shape) {
  switch (shape) {
    case Shape::circle:
      return "circle";
    case Shape::square:
      return "square";
    case Shape::triangle:
      return "triangle";
  }
  throw ParamError("shape_name: unknown shape kind");
}

const char* quadrant_name(Quadrant quadrant) {
  switch (quadrant) {
    case Quadrant::TL:
      return "TL";
    case Quadrant::TR:
      return "TR";
    case Quadrant::BL:
      return "BL";
    case Quadrant::BR:
      return "BR";
  }
  throw ParamError("quadrant_name: unknown quadrant");
}

Shape shape_from_name(const std::string& name) {
  if (name == "circle") return Shape::circle;
  if (name == "square") return Shape::square;
  if (name == "triangle") return Shape::triangle;
  throw ParamError("shape_from_name: unknown shape \"" + name + "\"");
}

Quadrant quadrant_from_name(const std::string& name) {
  if (name == "TL") return Quadrant::TL;
  if (name == "TR") return Quadrant::TR;
  if (name == "BL") return Quadrant::BL;
  if (name == "BR") return Quadrant::BR;
  throw ParamError("quadrant_from_name: unknown quadrant \"" + name + "\"");
}

std::array<double, 2> quadrant_direction(Quadrant quadrant) {
  const double step = 1.0 / kSqrt2;
  switch (quadrant) {
    case Quadrant::TL:
      return {step, step};
    case Quadrant::TR:
      return {-step, step};
    case Quadrant::BL:
      return {step, -step};
    case Quadrant::BR:
      return {-step, -step};
  }
  throw ParamError("quadrant_direction: unknown quadrant");
}

std::array<double, 2> start_center(const ShapeSpec& spec, std::int64_t height,
                                   std::int64_t width) {
  const bool right = spec.start_quadrant == Quadrant::TR ||
                     spec.start_quadrant == Quadrant::BR;
  const bool bottom = spec.start_quadrant == Quadrant::BL ||
                      spec.start_quadrant == Quadrant::BR;
  const double qx = right ? 0.5 * static_cast<double>(width) : 0.0;
  const double qy = bottom ? 0.5 * static_cast<double>(height) : 0.0;
  return {qx + spec.start_offset[0], qy + spec.start_offset[1]};
}

std::array<double, 2> spec_velocity(const ShapeSpec& spec) {
  const auto dir = quadrant_direction(spec.start_quadrant);
  return {spec.speed * dir[0], spec.speed * dir[1]};
}

torch::Tensor rasterize_shape(Shape shape, double center_x, double center_y,
                              double size, std::int64_t height,
                              std::int64_t width) {
  if (height <= 0 || width <= 0) {
    throw ParamError("rasterize_shape: dimensions must be positive");
  }
  if (!(size > 0.0) || !std::isfinite(size) || !std::isfinite(center_x) ||
      !std::isfinite(center_y)) {
    throw ParamError("rasterize_shape: center and size must be finite, size positive");
  }
  auto mask = torch::zeros({height, width}, torch::kFloat32);
  rasterize_into(mask.data_ptr<float>(), shape, center_x, center_y, size,
                 height, width);
  return mask;
}

torch::Tensor solid_background(std::int64_t height, std::int64_t width) {
  if (height <= 0 || width <= 0) {
    throw ParamError("solid_background: dimensions must be positive");
  }
  return torch::full({3, height, width}, kBackgroundGray, torch::kFloat32);
}

torch::Tensor textured_background(std::int64_t height, std::int64_t width,
                                  std::mt19937_64& rng) {
  if (height <= 0 || width <= 0) {
    throw ParamError("textured_background: dimensions must be positive");
  }
  const auto xs =
      torch::arange(width, torch::kFloat32).div(static_cast<double>(width));
  const auto ys =
      torch::arange(height, torch::kFloat32).div(static_cast<double>(height));
  std::vector<torch::Tensor> channels;
  channels.reserve(3);
  for (int c = 0; c < 3; ++c) {
    // Per channel: x frequency, y frequency, phase.
    const double fx = 1.0 + static_cast<double>(uniform_below(rng, 3));
    const double fy = 1.0 + static_cast<double>(uniform_below(rng, 3));
    const double phase = uniform_unit(rng);
    const auto arg = xs.mul(fx).unsqueeze(0) + ys.mul(fy).unsqueeze(1) + phase;
    channels.push_back(arg.mul(2.0 * kPi).sin().mul(0.18).add(0.5));
  }
  // Quantize to 8 bits so the float image survives the uint8 disk format.
  auto bg = torch::stack(channels, 0);
  return bg.mul(255.0).round().clamp(0.0, 255.0).div(255.0);
}

std::pair<VideoSequence, SequenceAnnotation> render_sequence(
    const std::vector<ShapeSpec>& shapes,
    const std::vector<std::array<double, 2>>& velocities,
    const std::vector<std::int64_t>& depth_order, std::int64_t frames,
    const torch::Tensor& background) {
  const auto num_shapes = static_cast<std::int64_t>(shapes.size());
  if (num_shapes < 1) {
    throw ParamError("render_sequence: need at least one shape");
  }
  if (static_cast<std::int64_t>(velocities.size()) != num_shapes) {
    throw ParamError("render_sequence: one velocity per shape required");
  }
  if (frames < 2) {
    throw ParamError("render_sequence: need at least two frames");
  }
  if (!background.defined() || background.dim() != 3 ||
      background.size(0) != 3) {
    throw ParamError("render_sequence: background must be [3, H, W]");
  }
  if (static_cast<std::int64_t>(depth_order.size()) != num_shapes) {
    throw ParamError("render_sequence: depth order must cover every shape");
  }
  std::vector<bool> seen(shapes.size(), false);
  for (const std::int64_t k : depth_order) {
    if (k < 0 || k >= num_shapes || seen[static_cast<std::size_t>(k)]) {
      throw ParamError("render_sequence: depth order is not a permutation");
    }
    seen[static_cast<std::size_t>(k)] = true;
  }
  const std::int64_t height = background.size(1);
  const std::int64_t width = background.size(2);

  // Linear motion: checking both endpoints keeps the whole path in frame.
  for (std::int64_t k = 0; k < num_shapes; ++k) {
    if (!std::isfinite(velocities[k][0]) || !std::isfinite(velocities[k][1])) {
      throw ParamError("render_sequence: velocities must be finite");
    }
    const Extent extent = shape_extent(shapes[k].shape, shapes[k].size);
    const auto center = start_center(shapes[k], height, width);
    for (const std::int64_t t : {std::int64_t{0}, frames - 1}) {
      const double cx = center[0] + static_cast<double>(t) * velocities[k][0];
      const double cy = center[1] + static_cast<double>(t) * velocities[k][1];
      if (cx - extent.x < -1e-9 ||
          cx + extent.x > static_cast<double>(width) - 1.0 + 1e-9 ||
          cy - extent.y_up < -1e-9 ||
          cy + extent.y_down > static_cast<double>(height) - 1.0 + 1e-9) {
        throw ParamError("render_sequence: shape " + std::to_string(k) +
                         " leaves the frame at step " + std::to_string(t));
      }
    }
  }

  auto masks = rasterize_tracks(shapes, velocities, frames, height, width);

  auto transforms =
      torch::eye(3, torch::kFloat64)
          .reshape({1, 1, 3, 3})
          .repeat({frames - 1, num_shapes, 1, 1})
          .contiguous();
  {
    auto access = transforms.accessor<double, 4>();
    for (std::int64_t t = 0; t < frames - 1; ++t) {
      for (std::int64_t k = 0; k < num_shapes; ++k) {
        access[t][k][0][2] = velocities[k][0];
        access[t][k][1][2] = velocities[k][1];
      }
    }
  }

  // Painter's algorithm: background first, then shapes back to front, so the
  // nearest object wins every contested pixel.
  auto bg = background.to(torch::kFloat32);
  auto video = bg.unsqueeze(0).repeat({frames, 1, 1, 1}).contiguous();
  for (std::int64_t t = 0; t < frames; ++t) {
    auto frame = video.select(0, t);
    for (std::int64_t r = num_shapes - 1; r >= 0; --r) {
      const std::int64_t k = depth_order[static_cast<std::size_t>(r)];
      const auto mask = masks.select(0, t).select(0, k).unsqueeze(0);
      const auto color =
          torch::tensor({shapes[k].color[0] / 255.0F, shapes[k].color[1] / 255.0F,
                         shapes[k].color[2] / 255.0F},
                        torch::kFloat32)
              .reshape({3, 1, 1});
      frame.mul_(1.0 - mask).add_(color * mask);
    }
  }

  SequenceAnnotation ann;
  ann.masks = std::move(masks);
  ann.transforms = std::move(transforms);
  ann.depth_order = depth_order;
  ann.background = std::move(bg);
  ann.shapes = shapes;
  return {VideoSequence{std::move(video)}, std::move(ann)};
}

std::pair<VideoSequence, SequenceAnnotation> generate_sequence(
    std::uint64_t seed, std::int64_t num_objects, std::int64_t frames,
    std::int64_t height, std::int64_t width, bool textured) {
  if (num_objects < 1) {
    throw ParamError("generate_sequence: need at least one object");
  }
  if (frames < 2) {
    throw ParamError("generate_sequence: need at least two frames");
  }
  if (height < 8 || width < 8) {
    throw ParamError("generate_sequence: frame must be at least 8x8");
  }

  std::mt19937_64 rng(seed);
  std::vector<ShapeSpec> shapes;
  std::vector<std::array<double, 2>> velocities;
  std::vector<std::int64_t> order;
  bool accepted = false;
  for (int trial = 0; trial < kOcclusionTrials && !accepted; ++trial) {
    shapes.clear();
    velocities.clear();
    for (std::int64_t k = 0; k < num_objects; ++k) {
      shapes.push_back(draw_shape_spec(rng, frames, height, width));
      velocities.push_back(spec_velocity(shapes.back()));
    }
    order = draw_permutation(rng, num_objects);
    for (std::int64_t rank = 0; rank < num_objects; ++rank) {
      shapes[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])]
          .depth_rank = rank + 1;
    }
    if (num_objects == 1) {
      accepted = true;
      break;
    }
    // Occlusion guarantee: some pixel must be claimed by two supports at
    // some frame; otherwise redraw the whole layout.
    const auto masks =
        rasterize_tracks(shapes, velocities, frames, height, width);
    accepted = masks.sum(1).gt(1.5).any().item<bool>();
  }
  if (!accepted) {
    throw ParamError(
        "generate_sequence: no occluding layout found in 100 trials");
  }

  const auto background = textured ? textured_background(height, width, rng)
                                   : solid_background(height, width);
  auto result = render_sequence(shapes, velocities, order, frames, background);
  result.second.seed = seed;
  return result;
}

void generate_dataset(const DatasetConfig& config) {
  if (config.root.empty()) {
    throw ParamError("generate_dataset: destination root must be set");
  }
  if (config.train < 0 || config.val < 0 || config.test < 0) {
    throw ParamError("generate_dataset: split sizes must be non-negative");
  }
  const fs::path root(config.root);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) {
    throw IoError("generate_dataset: cannot create " + root.string() + ": " +
                  ec.message());
  }

  json manifest;
  manifest["format_version"] = "1";
  manifest["config"] = {{"seed", config.seed},   {"objects", config.objects},
                        {"frames", config.frames}, {"height", config.height},
                        {"width", config.width},  {"textured", config.textured}};
  manifest["splits"] = {
      {"train", config.train}, {"val", config.val}, {"test", config.test}};

  const std::array<std::pair<const char*, std::int64_t>, 3> splits{
      {{"train", config.train}, {"val", config.val}, {"test", config.test}}};
  json sequences = json::array();
  std::int64_t global = 0;
  for (const auto& [split, count] : splits) {
    fs::create_directories(root / split, ec);
    if (ec) {
      throw IoError("generate_dataset: cannot create " +
                    (root / split).string() + ": " + ec.message());
    }
    for (std::int64_t i = 0; i < count; ++i, ++global) {
      const std::uint64_t seq_seed =
          derive_seed(config.seed, static_cast<std::uint64_t>(global));
      auto [video, ann] =
          generate_sequence(seq_seed, config.objects, config.frames,
                            config.height, config.width, config.textured);
      char name[32];
      std::snprintf(name, sizeof(name), "seq_%06lld",
                    static_cast<long long>(i));
      const std::string stem = std::string(split) + "/" + name;
      write_frames_bin(root / (stem + ".bin"), video.frames);
      write_text(root / (stem + ".json"),
                 annotation_to_json(ann, config).dump(2) + "\n");
      sequences.push_back({{"split", split},
                           {"index", i},
                           {"stem", stem},
                           {"seed", seq_seed}});
    }
  }
  manifest["sequences"] = std::move(sequences);
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

DatasetReader::DatasetReader(const std::string& root, const std::string& split)
    : split_(split) {
  if (split != "train" && split != "val" && split != "test") {
    throw ParamError("DatasetReader: unknown split \"" + split + "\"");
  }
  const fs::path manifest_path = fs::path(root) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) {
    throw IoError("DatasetReader: cannot open " + manifest_path.string());
  }
  try {
    const json manifest = json::parse(in);
    if (manifest.at("format_version").get<std::string>() != "1") {
      throw IoError("DatasetReader: unsupported manifest format version");
    }
    const json& cfg = manifest.at("config");
    config_.root = root;
    config_.seed = cfg.at("seed").get<std::uint64_t>();
    config_.objects = cfg.at("objects").get<std::int64_t>();
    config_.frames = cfg.at("frames").get<std::int64_t>();
    config_.height = cfg.at("height").get<std::int64_t>();
    config_.width = cfg.at("width").get<std::int64_t>();
    config_.textured = cfg.at("textured").get<bool>();
    const json& counts = manifest.at("splits");
    config_.train = counts.at("train").get<std::int64_t>();
    config_.val = counts.at("val").get<std::int64_t>();
    config_.test = counts.at("test").get<std::int64_t>();
    for (const json& entry : manifest.at("sequences")) {
      if (entry.at("split").get<std::string>() != split_) {
        continue;
      }
      stems_.push_back(entry.at("stem").get<std::string>());
      seeds_.push_back(entry.at("seed").get<std::uint64_t>());
    }
  } catch (const json::exception& err) {
    throw IoError("DatasetReader: malformed manifest " +
                  manifest_path.string() + ": " + err.what());
  }
}

std::uint64_t DatasetReader::sequence_seed(std::int64_t index) const {
  if (index < 0 || index >= size()) {
    throw ParamError("DatasetReader: sequence index out of range");
  }
  return seeds_[static_cast<std::size_t>(index)];
}

torch::Tensor DatasetReader::frames(std::int64_t index) const {
  if (index < 0 || index >= size()) {
    throw ParamError("DatasetReader: sequence index out of range");
  }
  const fs::path path = fs::path(config_.root) /
                        (stems_[static_cast<std::size_t>(index)] + ".bin");
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("DatasetReader: cannot open " + path.string());
  }
  const std::int64_t expected =
      config_.frames * config_.height * config_.width * 3;
  std::vector<char> bytes(static_cast<std::size_t>(expected));
  in.read(bytes.data(), expected);
  if (in.gcount() != expected || in.peek() != std::ifstream::traits_type::eof()) {
    throw IoError("DatasetReader: " + path.string() +
                  " does not match the manifest geometry");
  }
  const auto packed =
      torch::from_blob(bytes.data(),
                       {config_.frames, config_.height, config_.width, 3},
                       torch::kUInt8)
          .clone();
  return packed.permute({0, 3, 1, 2}).to(torch::kFloat32).div(255.0);
}

std::pair<VideoSequence, SequenceAnnotation> DatasetReader::sample(
    std::int64_t index) const {
  auto regenerated =
      generate_sequence(sequence_seed(index), config_.objects, config_.frames,
                        config_.height, config_.width, config_.textured);
  return {VideoSequence{frames(index)}, std::move(regenerated.second)};
}

}  // namespace ocvp::datagen
