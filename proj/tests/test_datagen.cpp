#include "support/testcommon.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "ocvp/datagen.hpp"
#include "ocvp/geometry.hpp"
#include "ocvp/maskalg.hpp"

namespace fs = std::filesystem;
using namespace ocvp;
using datagen::Quadrant;
using datagen::Shape;
using datagen::ShapeSpec;

namespace {

ShapeSpec make_spec(Shape shape, double size, double offset_x,
                    double offset_y) {
  ShapeSpec spec;
  spec.shape = shape;
  spec.color = {255, 0, 64};
  spec.size = size;
  spec.start_quadrant = Quadrant::TL;
  spec.start_offset = {offset_x, offset_y};
  return spec;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Pixels within two steps of the support boundary, where thresholded
// rasterization and bilinear warping may legitimately disagree.
torch::Tensor boundary_band(const torch::Tensor& mask) {
  const auto m = mask.unsqueeze(0).unsqueeze(0);
  const auto dilated = torch::max_pool2d(m, 5, 1, 2);
  const auto eroded = 1.0 - torch::max_pool2d(1.0 - m, 5, 1, 2);
  return (dilated - eroded).squeeze(0).squeeze(0);
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("rasterize_shape matches analytic coverage") {
  // Square of side 10 centered off the half-integer ties: exactly 10x10
  // pixels pass the half-coverage threshold.
  const auto square =
      datagen::rasterize_shape(Shape::square, 8.25, 8.25, 10.0, 24, 24);
  CHECK(square.sum().item<double>() == doctest::Approx(100.0));

  // Circle of diameter 14: pixel count tracks the analytic area.
  const auto circle =
      datagen::rasterize_shape(Shape::circle, 12.0, 12.0, 14.0, 24, 24);
  const double area = 3.14159265358979 * 7.0 * 7.0;
  CHECK(circle.sum().item<double>() == doctest::Approx(area).epsilon(0.05));

  // Triangle: centroid centered, so the mass sits below the center row.
  const auto tri =
      datagen::rasterize_shape(Shape::triangle, 12.0, 12.0, 14.0, 24, 24);
  const double tri_area = std::sqrt(3.0) / 4.0 * 14.0 * 14.0;
  CHECK(tri.sum().item<double>() == doctest::Approx(tri_area).epsilon(0.08));
  const auto rows = tri.sum(1);
  CHECK(rows.slice(0, 13, 18).sum().item<double>() >
        rows.slice(0, 5, 12).sum().item<double>());

  CHECK_THROWS_AS(datagen::rasterize_shape(Shape::circle, 5.0, 5.0, 0.0, 8, 8),
                  ParamError);
  CHECK_THROWS_AS(datagen::rasterize_shape(Shape::circle, 5.0, 5.0, 4.0, 0, 8),
                  ParamError);
}

TEST_CASE("integer translation shifts annotation masks index for index") {
  const auto spec = make_spec(Shape::circle, 12.0, 10.0, 10.0);
  const auto [video, ann] = datagen::render_sequence(
      {spec}, {{2.0, 1.0}}, {0}, 5, datagen::solid_background(32, 32));

  CHECK(video.frames.sizes() == torch::IntArrayRef({5, 3, 32, 32}));
  CHECK(ann.masks.sizes() == torch::IntArrayRef({5, 1, 32, 32}));
  for (std::int64_t t = 0; t + 1 < 5; ++t) {
    const auto moved =
        torch::roll(ann.masks.select(0, t).select(0, 0), {1, 2}, {0, 1});
    CHECK(torch::equal(ann.masks.select(0, t + 1).select(0, 0), moved));
    const auto shifted_frame =
        torch::roll(video.frames.select(0, t), {1, 2}, {1, 2});
    CHECK(torch::equal(video.frames.select(0, t + 1), shifted_frame));
  }

  auto expected = torch::eye(3, torch::kFloat64);
  expected[0][2] = 2.0;
  expected[1][2] = 1.0;
  for (std::int64_t t = 0; t < 4; ++t) {
    CHECK(torch::equal(ann.transforms.select(0, t).select(0, 0), expected));
  }
}

TEST_CASE("zero velocity freezes the sequence") {
  const auto spec = make_spec(Shape::square, 10.0, 12.0, 12.0);
  const auto [video, ann] = datagen::render_sequence(
      {spec}, {{0.0, 0.0}}, {0}, 6, datagen::solid_background(32, 32));
  const auto eye = torch::eye(3, torch::kFloat64);
  for (std::int64_t t = 1; t < 6; ++t) {
    CHECK(torch::equal(video.frames.select(0, t), video.frames.select(0, 0)));
    CHECK(torch::equal(ann.masks.select(0, t), ann.masks.select(0, 0)));
    CHECK(torch::equal(ann.transforms.select(0, t - 1).select(0, 0), eye));
  }
}

TEST_CASE("generated sequences occlude and stay inside the frame") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [video, ann] = datagen::generate_sequence(seed, 2, 11, 64, 64);
    CHECK(video.frames.sizes() == torch::IntArrayRef({11, 3, 64, 64}));
    CHECK(ann.masks.sizes() == torch::IntArrayRef({11, 2, 64, 64}));

    // Two supports must share a pixel at some frame.
    CHECK(ann.masks.sum(1).gt(1.5).any().item<bool>());

    // Trajectories are clamped so no support ever touches the border.
    CHECK(ann.masks.select(3, 0).sum().item<double>() == 0.0);
    CHECK(ann.masks.select(3, 63).sum().item<double>() == 0.0);
    CHECK(ann.masks.select(2, 0).sum().item<double>() == 0.0);
    CHECK(ann.masks.select(2, 63).sum().item<double>() == 0.0);
  }
}

TEST_CASE("generate_sequence is a pure function of the seed") {
  const auto [video_a, ann_a] = datagen::generate_sequence(123, 3, 7, 48, 48);
  const auto [video_b, ann_b] = datagen::generate_sequence(123, 3, 7, 48, 48);
  CHECK(torch::equal(video_a.frames, video_b.frames));
  CHECK(torch::equal(ann_a.masks, ann_b.masks));
  CHECK(torch::equal(ann_a.transforms, ann_b.transforms));
  CHECK(ann_a.depth_order == ann_b.depth_order);

  const auto [video_c, ann_c] = datagen::generate_sequence(124, 3, 7, 48, 48);
  CHECK_FALSE(torch::equal(video_a.frames, video_c.frames));
}

TEST_CASE("drawn specs respect the declared ranges") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [video, ann] = datagen::generate_sequence(seed, 3, 11, 64, 64);
    REQUIRE(ann.shapes.size() == 3);
    for (std::size_t k = 0; k < ann.shapes.size(); ++k) {
      const ShapeSpec& spec = ann.shapes[k];
      CHECK(spec.size >= 10.0);
      CHECK(spec.size <= 18.0);
      CHECK(spec.speed >= 1.0);
      CHECK(spec.speed <= 3.5);
      const bool gray = spec.color[0] == 128 && spec.color[1] == 128 &&
                        spec.color[2] == 128;
      CHECK_FALSE(gray);

      // Endpoint lands in the quadrant opposite the start.
      const auto start = datagen::start_center(spec, 64, 64);
      const auto velocity = datagen::spec_velocity(spec);
      const double end_x = start[0] + 10.0 * velocity[0];
      const double end_y = start[1] + 10.0 * velocity[1];
      if (velocity[0] > 0.0) {
        CHECK(start[0] < 32.0);
        CHECK(end_x >= 32.0);
      } else {
        CHECK(start[0] >= 32.0);
        CHECK(end_x < 32.0);
      }
      if (velocity[1] > 0.0) {
        CHECK(start[1] < 32.0);
        CHECK(end_y >= 32.0);
      } else {
        CHECK(start[1] >= 32.0);
        CHECK(end_y < 32.0);
      }
    }
    // depth_rank mirrors the front-to-back order.
    for (std::size_t rank = 0; rank < ann.depth_order.size(); ++rank) {
      const auto k = static_cast<std::size_t>(ann.depth_order[rank]);
      CHECK(ann.shapes[k].depth_rank == static_cast<std::int64_t>(rank) + 1);
    }
  }
}

TEST_CASE("occlusion compositing of the annotation reproduces the frames") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto [video, ann] = datagen::generate_sequence(seed, 3, 11, 64, 64);
    const auto order = torch::tensor(ann.depth_order);
    const auto ordered = ann.masks.index_select(1, order);
    for (std::int64_t t = 0; t < 11; ++t) {
      const auto gamma = maskalg::occlusion(ordered.select(0, t).unsqueeze(0));
      auto recomposed =
          ann.background * maskalg::background_mask(gamma).squeeze(0);
      for (std::int64_t rank = 0; rank < 3; ++rank) {
        const ShapeSpec& spec =
            ann.shapes[static_cast<std::size_t>(ann.depth_order[rank])];
        const auto color =
            torch::tensor({spec.color[0] / 255.0F, spec.color[1] / 255.0F,
                           spec.color[2] / 255.0F})
                .reshape({3, 1, 1});
        recomposed = recomposed + color * gamma.select(0, 0).select(0, rank);
      }
      const double diff =
          (recomposed - video.frames.select(0, t)).abs().max().item<double>();
      CHECK(diff <= 2.0 / 255.0);
      CHECK(diff == 0.0);  // binary masks make both paths exact
    }
  }
}

TEST_CASE("warping a mask by its transform reproduces the next mask") {
  const auto [video, ann] = datagen::generate_sequence(5, 2, 11, 64, 64);
  for (const std::int64_t t : {0, 4, 9}) {
    const auto warped = geometry::warp_n(
        ann.masks.select(0, t).unsqueeze(1),
        ann.transforms.select(0, t).to(torch::kFloat32),
        geometry::TransformFamily::affine);
    const auto warped_bin = warped.squeeze(1).gt(0.5).to(torch::kFloat32);
    for (std::int64_t k = 0; k < 2; ++k) {
      const auto target = ann.masks.select(0, t + 1).select(0, k);
      const auto mismatch =
          warped_bin.select(0, k).ne(target).to(torch::kFloat32);
      // Disagreement is confined to the support boundary band.
      const auto outside = mismatch * (1.0 - boundary_band(target));
      CHECK(outside.sum().item<double>() == 0.0);
    }
  }
}

TEST_CASE("frame colors stay on the palette over a solid background") {
  const auto [video, ann] = datagen::generate_sequence(3, 3, 11, 64, 64);
  const auto counts = video.frames.mul(255.0);
  CHECK((counts - counts.round()).abs().max().item<double>() < 1e-4);
  const auto levels =
      torch::tensor({0.0F, 64.0F, 128.0F, 191.0F, 255.0F});
  CHECK(torch::isin(counts.round(), levels).all().item<bool>());
}

TEST_CASE("textured background is static and survives quantization") {
  const auto [video, ann] =
      datagen::generate_sequence(11, 2, 5, 32, 32, true);
  // Texture varies over space but is exactly representable in 8 bits.
  CHECK(ann.background.std().item<double>() > 0.0);
  const auto scaled = ann.background.mul(255.0);
  CHECK((scaled - scaled.round()).abs().max().item<double>() < 1e-4);

  // Background pixels never claimed by a support are constant over time.
  const auto uncovered = ann.masks.sum(0).sum(0).eq(0.0).to(torch::kFloat32);
  REQUIRE(uncovered.sum().item<double>() > 0.0);
  for (std::int64_t t = 1; t < 5; ++t) {
    const auto drift = (video.frames.select(0, t) - video.frames.select(0, 0))
                           .abs()
                           .mul(uncovered);
    CHECK(drift.max().item<double>() == 0.0);
  }
}

TEST_CASE("invalid render and generation requests are rejected") {
  const auto bg = datagen::solid_background(32, 32);
  const auto spec = make_spec(Shape::circle, 12.0, 10.0, 10.0);

  // Trajectory exits the frame.
  CHECK_THROWS_AS(
      datagen::render_sequence({spec}, {{8.0, 0.0}}, {0}, 5, bg), ParamError);
  // One velocity per shape.
  CHECK_THROWS_AS(datagen::render_sequence({spec}, {}, {0}, 5, bg),
                  ParamError);
  // Depth order must be a permutation.
  CHECK_THROWS_AS(
      datagen::render_sequence({spec, spec}, {{1.0, 1.0}, {1.0, 1.0}}, {0, 0},
                               5, bg),
      ParamError);
  CHECK_THROWS_AS(datagen::render_sequence({spec}, {{1.0, 1.0}}, {0}, 1, bg),
                  ParamError);

  CHECK_THROWS_AS(datagen::generate_sequence(0, 0, 11, 64, 64), ParamError);
  CHECK_THROWS_AS(datagen::generate_sequence(0, 2, 1, 64, 64), ParamError);
  CHECK_THROWS_AS(datagen::generate_sequence(0, 2, 11, 4, 64), ParamError);
}

TEST_CASE("minimal dataset split writes a complete tree") {
  const fs::path root = fresh_dir("ocvp_datagen_minimal");
  datagen::DatasetConfig config;
  config.root = root.string();
  config.train = 2;
  config.val = 1;
  config.test = 1;
  config.objects = 2;
  config.frames = 5;
  config.height = 32;
  config.width = 32;
  config.seed = 7;
  datagen::generate_dataset(config);

  const auto manifest = nlohmann::json::parse(slurp(root / "manifest.json"));
  CHECK(manifest.at("format_version").get<std::string>() == "1");
  CHECK(manifest.at("sequences").size() == 4);
  CHECK(manifest.at("splits").at("train").get<std::int64_t>() == 2);
  for (const char* stem :
       {"train/seq_000000", "train/seq_000001", "val/seq_000000",
        "test/seq_000000"}) {
    CHECK(fs::exists(root / (std::string(stem) + ".bin")));
    CHECK(fs::exists(root / (std::string(stem) + ".json")));
  }
  CHECK(fs::file_size(root / "train/seq_000000.bin") == 5 * 32 * 32 * 3);

  const datagen::DatasetReader reader(root.string(), "train");
  CHECK(reader.size() == 2);
  CHECK(reader.config().objects == 2);
  const auto frames = reader.frames(0);
  CHECK(frames.sizes() == torch::IntArrayRef({5, 3, 32, 32}));
  CHECK(frames.min().item<double>() >= 0.0);
  CHECK(frames.max().item<double>() <= 1.0);

  // The uint8 file round-trips the generator output exactly, and the
  // reader's annotation comes from replaying the recorded seed.
  const auto regenerated =
      datagen::generate_sequence(reader.sequence_seed(0), 2, 5, 32, 32);
  CHECK(torch::equal(frames, regenerated.first.frames));
  const auto [video, ann] = reader.sample(0);
  CHECK(torch::equal(ann.masks, regenerated.second.masks));
  CHECK(ann.depth_order == regenerated.second.depth_order);

  CHECK_THROWS_AS(datagen::DatasetReader(root.string(), "dev"), ParamError);
  CHECK_THROWS_AS(datagen::DatasetReader("/nonexistent/ocvp", "train"),
                  IoError);
  CHECK_THROWS_AS(reader.frames(5), ParamError);
  fs::remove_all(root);
}

TEST_CASE("dataset regeneration is byte identical") {
  datagen::DatasetConfig config;
  config.train = 1;
  config.val = 1;
  config.test = 0;
  config.objects = 2;
  config.frames = 4;
  config.height = 24;
  config.width = 24;
  config.seed = 99;

  const fs::path root_a = fresh_dir("ocvp_datagen_rerun_a");
  const fs::path root_b = fresh_dir("ocvp_datagen_rerun_b");
  config.root = root_a.string();
  datagen::generate_dataset(config);
  config.root = root_b.string();
  datagen::generate_dataset(config);

  for (const char* name :
       {"manifest.json", "train/seq_000000.bin", "train/seq_000000.json",
        "val/seq_000000.bin", "val/seq_000000.json"}) {
    CHECK(slurp(root_a / name) == slurp(root_b / name));
  }
  fs::remove_all(root_a);
  fs::remove_all(root_b);
}

}  // TEST_SUITE
