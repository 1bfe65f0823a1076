#include "ocvp/viz.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace ocvp::viz {

namespace {

void append_u32be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
  append_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                           static_cast<uInt>(body.size()));
  append_u32be(out, static_cast<std::uint32_t>(crc));
}

// 3x5 glyphs for the boxplot axis, one bit per pixel, rows top to bottom.
struct Glyph {
  char ch;
  std::uint16_t bits;
};
constexpr Glyph kGlyphs[] = {
    {'0', 0b111101101101111}, {'1', 0b010110010010111}, {'2', 0b111001111100111},
    {'3', 0b111001111001111}, {'4', 0b101101111001001}, {'5', 0b111100111001111},
    {'6', 0b111100111101111}, {'7', 0b111001001010010}, {'8', 0b111101111101111},
    {'9', 0b111101111001111}, {'.', 0b000000000000010}, {'-', 0b000000111000000},
    {'e', 0b111100111100111}, {'+', 0b000010111010000},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kGlyphs) {
    if (g.ch == c) return &g;
  }
  return nullptr;
}

}  // namespace

torch::Tensor to_rgb(const torch::Tensor& image) {
  torch::Tensor chw = image;
  if (chw.dim() == 2) chw = chw.unsqueeze(0);
  if (chw.dim() != 3 || (chw.size(0) != 1 && chw.size(0) != 3)) {
    throw ParamError("to_rgb: expected [H,W], [1,H,W] or [3,H,W], got " +
                     c10::str(image.sizes()));
  }
  if (chw.size(0) == 1) chw = chw.expand({3, chw.size(1), chw.size(2)});
  return chw.to(torch::kFloat).clamp(0.0, 1.0).contiguous();
}

torch::Tensor tile_grid(const std::vector<std::vector<torch::Tensor>>& rows, std::int64_t pad,
                        double pad_value) {
  if (rows.empty() || rows.front().empty()) throw ParamError("tile_grid: no cells");
  if (pad < 0) throw ParamError("tile_grid: negative padding");

  const auto first = to_rgb(rows.front().front());
  const auto h = first.size(1), w = first.size(2);
  std::size_t cols = 0;
  for (const auto& row : rows) cols = std::max(cols, row.size());

  const auto H = pad + static_cast<std::int64_t>(rows.size()) * (h + pad);
  const auto W = pad + static_cast<std::int64_t>(cols) * (w + pad);
  auto canvas = torch::full({3, H, W}, pad_value, torch::kFloat);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      auto cell = to_rgb(rows[r][c]);
      if (cell.size(1) != h || cell.size(2) != w) {
        throw ParamError("tile_grid: cell (" + std::to_string(r) + "," + std::to_string(c) +
                         ") is " + c10::str(cell.sizes()) + ", expected [3," +
                         std::to_string(h) + "," + std::to_string(w) + "]");
      }
      const auto y = pad + static_cast<std::int64_t>(r) * (h + pad);
      const auto x = pad + static_cast<std::int64_t>(c) * (w + pad);
      canvas.index_put_({torch::indexing::Slice(), torch::indexing::Slice(y, y + h),
                         torch::indexing::Slice(x, x + w)},
                        cell);
    }
  }
  return canvas;
}

void write_png(const std::string& path, const torch::Tensor& image) {
  torch::Tensor chw = image;
  if (chw.dim() == 2) chw = chw.unsqueeze(0);
  if (chw.dim() != 3 || (chw.size(0) != 1 && chw.size(0) != 3)) {
    throw ParamError("write_png: expected [H,W], [1,H,W] or [3,H,W], got " +
                     c10::str(image.sizes()));
  }
  const auto C = chw.size(0), H = chw.size(1), W = chw.size(2);
  if (H < 1 || W < 1) throw ParamError("write_png: empty image");

  auto bytes = chw.to(torch::kFloat).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  auto hwc = bytes.permute({1, 2, 0}).contiguous();
  const auto* px = hwc.data_ptr<std::uint8_t>();

  // filter byte 0 in front of every scanline
  const std::size_t stride = static_cast<std::size_t>(W) * C;
  std::string raw;
  raw.reserve(static_cast<std::size_t>(H) * (stride + 1));
  for (std::int64_t y = 0; y < H; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(px + y * stride), stride);
  }

  uLongf comp_size = ::compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(comp_size, '\0');
  const int rc = ::compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_size,
                             reinterpret_cast<const Bytef*>(raw.data()),
                             static_cast<uLong>(raw.size()), 6);
  if (rc != Z_OK) throw NumericError("write_png: zlib compress failed with code " +
                                     std::to_string(rc));
  compressed.resize(comp_size);

  std::string ihdr;
  append_u32be(ihdr, static_cast<std::uint32_t>(W));
  append_u32be(ihdr, static_cast<std::uint32_t>(H));
  ihdr.push_back(8);                      // bit depth
  ihdr.push_back(C == 3 ? 2 : 0);         // color type: truecolor or grayscale
  ihdr.push_back(0);                      // compression
  ihdr.push_back(0);                      // filter method
  ihdr.push_back(0);                      // no interlace

  std::string out("\x89PNG\r\n\x1a\n", 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", "");

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("write_png: cannot open " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write_png: short write to " + path);
}

namespace {

void check_single_rollout(const pipeline::RolloutRecord& record) {
  if (!record.predictions.defined() || record.predictions.dim() != 5) {
    throw ParamError("viz: record does not hold a finished rollout");
  }
}

}  // namespace

torch::Tensor sequence_panel(const pipeline::RolloutRecord& record, const torch::Tensor& frames,
                             const std::vector<std::int64_t>& steps) {
  check_single_rollout(record);
  const auto S = record.predictions.size(1);
  const auto K = record.masks_bin.size(2);
  if (frames.dim() != 4 || frames.size(0) != S + 1 || frames.size(1) != 3) {
    throw ParamError("sequence_panel: expected frames [T,3,H,W] with T = " +
                     std::to_string(S + 1) + ", got " + c10::str(frames.sizes()));
  }

  std::vector<std::int64_t> targets = steps;
  if (targets.empty()) {
    for (std::int64_t t = 1; t <= S; ++t) targets.push_back(t);
  }
  for (const auto t : targets) {
    if (t < 1 || t > S) {
      throw ParamError("sequence_panel: step " + std::to_string(t) + " outside [1, " +
                       std::to_string(S) + "]");
    }
  }

  // row order mirrors the decomposition: masks first, then appearances
  std::vector<std::vector<torch::Tensor>> rows(static_cast<std::size_t>(4 * K + 3));
  for (const auto t : targets) {
    const auto j = t - 1;  // rollout step whose prediction targets frame t
    std::size_t r = 0;
    for (std::int64_t k = 0; k < K; ++k) rows[r++].push_back(record.masks_bin[0][j][k]);
    for (std::int64_t k = 0; k < K; ++k) rows[r++].push_back(record.masks_ordered[0][j][k]);
    for (std::int64_t k = 0; k < K; ++k) rows[r++].push_back(record.gamma[0][j][k]);
    rows[r++].push_back(frames[j]);
    for (std::int64_t k = 0; k < K; ++k) rows[r++].push_back(record.canvases[0][j][k]);
    rows[r++].push_back(record.bg_canvases[0][j]);
    rows[r++].push_back(record.predictions[0][j]);
  }
  return tile_grid(rows);
}

torch::Tensor object_strip(const pipeline::RolloutRecord& record, std::int64_t slot) {
  check_single_rollout(record);
  const auto S = record.canvases.size(1);
  const auto K = record.canvases.size(2);
  if (slot < 0 || slot >= K) {
    throw ParamError("object_strip: slot " + std::to_string(slot) + " outside [0, " +
                     std::to_string(K) + ")");
  }
  std::vector<std::vector<torch::Tensor>> row(1);
  for (std::int64_t j = 0; j < S; ++j) row[0].push_back(record.canvases[0][j][slot]);
  return tile_grid(row);
}

torch::Tensor background_strip(const pipeline::RolloutRecord& record) {
  check_single_rollout(record);
  const auto S = record.bg_canvases.size(1);
  std::vector<std::vector<torch::Tensor>> row(1);
  for (std::int64_t j = 0; j < S; ++j) row[0].push_back(record.bg_canvases[0][j]);
  return tile_grid(row);
}

torch::Tensor boxplot(const std::vector<BoxStats>& boxes) {
  if (boxes.empty()) throw ParamError("boxplot: no boxes");
  for (const auto& b : boxes) {
    if (!(b.lo <= b.q25 && b.q25 <= b.q50 && b.q50 <= b.q75 && b.q75 <= b.hi)) {
      throw ParamError("boxplot: five-number summary out of order");
    }
  }

  const std::int64_t plot_h = 140, top = 8, bottom = 16, left = 36, right = 8;
  const std::int64_t slot_w = 26, box_w = 14;
  const auto n = static_cast<std::int64_t>(boxes.size());
  const std::int64_t H = top + plot_h + bottom;
  const std::int64_t W = left + n * slot_w + right;
  auto canvas = torch::ones({3, H, W}, torch::kFloat);
  auto px = canvas.accessor<float, 3>();

  auto put = [&](std::int64_t x, std::int64_t y, float r, float g, float b) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    px[0][y][x] = r;
    px[1][y][x] = g;
    px[2][y][x] = b;
  };
  auto hline = [&](std::int64_t x0, std::int64_t x1, std::int64_t y, float r, float g, float b) {
    for (auto x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(x, y, r, g, b);
  };
  auto vline = [&](std::int64_t x, std::int64_t y0, std::int64_t y1, float r, float g, float b) {
    for (auto y = std::min(y0, y1); y <= std::max(y0, y1); ++y) put(x, y, r, g, b);
  };
  auto text = [&](std::int64_t x, std::int64_t y, const std::string& s) {
    for (char c : s) {
      if (const auto* glyph = find_glyph(c)) {
        for (int row = 0; row < 5; ++row) {
          for (int col = 0; col < 3; ++col) {
            if (glyph->bits >> (14 - row * 3 - col) & 1) put(x + col, y + row, 0.15f, 0.15f, 0.15f);
          }
        }
      }
      x += 4;
    }
  };

  double lo = boxes.front().lo, hi = boxes.front().hi;
  for (const auto& b : boxes) {
    lo = std::min(lo, b.lo);
    hi = std::max(hi, b.hi);
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  auto ypos = [&](double v) {
    return top + static_cast<std::int64_t>(std::llround((hi - v) / (hi - lo) * (plot_h - 1)));
  };

  // axis with five labelled ticks
  vline(left - 2, top, top + plot_h - 1, 0.15f, 0.15f, 0.15f);
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    const auto y = ypos(v);
    hline(left - 4, left - 2, y, 0.15f, 0.15f, 0.15f);
    char label[16];
    std::snprintf(label, sizeof(label), "%.3g", v);
    text(1, y - 2, label);
  }

  for (std::int64_t i = 0; i < n; ++i) {
    const auto& b = boxes[static_cast<std::size_t>(i)];
    const auto cx = left + i * slot_w + slot_w / 2;
    const auto x0 = cx - box_w / 2, x1 = cx + box_w / 2;
    const auto y_lo = ypos(b.lo), y_q25 = ypos(b.q25), y_q50 = ypos(b.q50);
    const auto y_q75 = ypos(b.q75), y_hi = ypos(b.hi);

    vline(cx, y_hi, y_q75, 0.15f, 0.15f, 0.15f);
    vline(cx, y_q25, y_lo, 0.15f, 0.15f, 0.15f);
    hline(cx - 3, cx + 3, y_hi, 0.15f, 0.15f, 0.15f);
    hline(cx - 3, cx + 3, y_lo, 0.15f, 0.15f, 0.15f);

    hline(x0, x1, y_q75, 0.15f, 0.15f, 0.15f);
    hline(x0, x1, y_q25, 0.15f, 0.15f, 0.15f);
    vline(x0, y_q75, y_q25, 0.15f, 0.15f, 0.15f);
    vline(x1, y_q75, y_q25, 0.15f, 0.15f, 0.15f);
    hline(x0 + 1, x1 - 1, y_q50, 0.8f, 0.1f, 0.1f);

    text(cx - 1, top + plot_h + 4, std::to_string(i));
  }
  return canvas;
}

}  // namespace ocvp::viz
