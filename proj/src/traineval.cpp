#include "ocvp/traineval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "ocvp/geometry.hpp"

namespace ocvp::traineval {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Distinct RNG streams derived from the master seed so shuffling, the
// consistency sampler, and per-step Gumbel noise never alias.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kConsistencyStream = 2;
constexpr std::uint64_t kRolloutStream = 3;

json network_to_json(const networks::NetworkConfig& c) {
  return json{{"slots", c.slots},
              {"enc_channels", c.enc_channels},
              {"enc_blocks", c.enc_blocks},
              {"lstm_channels", c.lstm_channels},
              {"perm_channels", c.perm_channels},
              {"perm_hidden", c.perm_hidden},
              {"param_channels", c.param_channels},
              {"param_hidden1", c.param_hidden1},
              {"param_hidden2", c.param_hidden2},
              {"bg_channels", c.bg_channels},
              {"bg_layers", c.bg_layers},
              {"projective", c.projective},
              {"binarize_alpha", c.binarize_alpha},
              {"binarize_beta", c.binarize_beta},
              {"sinkhorn_iters", c.sinkhorn_iters},
              {"offset_scale_linear", c.offset_scale_linear},
              {"offset_scale_translation", c.offset_scale_translation},
              {"slot_init_scale", c.slot_init_scale},
              {"slot_init_seed", c.slot_init_seed}};
}

networks::NetworkConfig network_from_json(const json& j) {
  networks::NetworkConfig c;
  c.slots = j.at("slots").get<std::int64_t>();
  c.enc_channels = j.at("enc_channels").get<std::int64_t>();
  c.enc_blocks = j.at("enc_blocks").get<std::int64_t>();
  c.lstm_channels = j.at("lstm_channels").get<std::int64_t>();
  c.perm_channels = j.at("perm_channels").get<std::int64_t>();
  c.perm_hidden = j.at("perm_hidden").get<std::int64_t>();
  c.param_channels = j.at("param_channels").get<std::int64_t>();
  c.param_hidden1 = j.at("param_hidden1").get<std::int64_t>();
  c.param_hidden2 = j.at("param_hidden2").get<std::int64_t>();
  c.bg_channels = j.at("bg_channels").get<std::int64_t>();
  c.bg_layers = j.at("bg_layers").get<std::int64_t>();
  c.projective = j.at("projective").get<bool>();
  c.binarize_alpha = j.at("binarize_alpha").get<double>();
  c.binarize_beta = j.at("binarize_beta").get<double>();
  c.sinkhorn_iters = j.at("sinkhorn_iters").get<std::int64_t>();
  c.offset_scale_linear = j.at("offset_scale_linear").get<double>();
  c.offset_scale_translation = j.at("offset_scale_translation").get<double>();
  c.slot_init_scale = j.at("slot_init_scale").get<double>();
  c.slot_init_seed = j.at("slot_init_seed").get<std::uint64_t>();
  return c;
}

void shuffle_indices(std::vector<std::int64_t>& indices, std::mt19937_64& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(indices[i - 1], indices[j]);
  }
}

torch::Tensor gaussian_window(std::int64_t size, double sigma) {
  auto coords = torch::arange(size, torch::kFloat32) -
                static_cast<double>(size - 1) / 2.0;
  auto g = coords.pow(2).div(-2.0 * sigma * sigma).exp();
  g = g / g.sum();
  return torch::outer(g, g);
}

void write_train_csv(const fs::path& path, const std::vector<StepLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("train: cannot open " + path.string() + " for writing");
  }
  out << "epoch,step,prediction,sparsity,concentration,consistency,total\n";
  char line[256];
  for (const StepLog& row : log) {
    std::snprintf(line, sizeof(line),
                  "%lld,%lld,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(row.epoch),
                  static_cast<long long>(row.step), row.prediction,
                  row.sparsity, row.concentration, row.consistency, row.total);
    out << line;
  }
  if (!out) {
    throw IoError("train: short write to " + path.string());
  }
}

void write_val_csv(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("train: cannot open " + path.string() + " for writing");
  }
  out << "epoch,val_loss\n";
  char line[64];
  for (std::size_t e = 0; e < losses.size(); ++e) {
    std::snprintf(line, sizeof(line), "%zu,%.10g\n", e, losses[e]);
    out << line;
  }
}

// Eval-mode mean one-rollout prediction loss over (a cap of) a split.
double validation_loss(pipeline::Pipeline& pl,
                       const datagen::DatasetReader& data,
                       std::int64_t batch_size, std::int64_t max_sequences) {
  torch::NoGradGuard no_grad;
  const std::int64_t count =
      max_sequences > 0 ? std::min(max_sequences, data.size()) : data.size();
  if (count == 0) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double total = 0.0;
  std::int64_t frames_scored = 0;
  for (std::int64_t start = 0; start < count; start += batch_size) {
    const std::int64_t stop = std::min(count, start + batch_size);
    std::vector<torch::Tensor> batch;
    batch.reserve(static_cast<std::size_t>(stop - start));
    for (std::int64_t i = start; i < stop; ++i) {
      batch.push_back(data.frames(i));
    }
    const auto frames = torch::stack(batch, 0);
    auto record = pl.rollout(frames, {});
    const auto loss = losses::prediction_loss(record.predictions,
                                              frames.slice(1, 1));
    total += loss.item<double>() * static_cast<double>(stop - start);
    frames_scored += stop - start;
  }
  return total / static_cast<double>(frames_scored);
}

torch::Tensor per_pair_iou(const torch::Tensor& pred,
                           const torch::Tensor& truth) {
  const auto p = pred.gt(0.5).to(torch::kFloat32).flatten(1);
  const auto t = truth.gt(0.5).to(torch::kFloat32).flatten(1);
  const auto inter = torch::matmul(p, t.t());
  const auto uni =
      p.sum(1).unsqueeze(1) + t.sum(1).unsqueeze(0) - inter;
  return torch::where(uni > 0.0, inter / uni, torch::zeros_like(inter));
}

}  // namespace

void save_checkpoint(const networks::ObjectCentricModel& model,
                     const CheckpointHeader& header, const std::string& stem) {
  const fs::path base(stem);
  if (base.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(base.parent_path(), ec);
    if (ec) {
      throw IoError("save_checkpoint: cannot create " +
                    base.parent_path().string() + ": " + ec.message());
    }
  }
  auto holder = model;  // shared handle; serialization is non-mutating
  torch::save(holder, stem + ".pt");

  json doc;
  doc["format_version"] = "1";
  doc["network"] = network_to_json(header.network);
  doc["seed"] = header.seed;
  doc["epoch"] = header.epoch;
  doc["val_loss"] = header.val_loss;
  std::ofstream out(stem + ".json", std::ios::trunc);
  if (!out) {
    throw IoError("save_checkpoint: cannot open " + stem + ".json");
  }
  out << doc.dump(2) << "\n";
  if (!out) {
    throw IoError("save_checkpoint: short write to " + stem + ".json");
  }
}

std::pair<networks::ObjectCentricModel, CheckpointHeader> load_checkpoint(
    const std::string& stem) {
  std::ifstream in(stem + ".json");
  if (!in) {
    throw IoError("load_checkpoint: cannot open " + stem + ".json");
  }
  CheckpointHeader header;
  try {
    const json doc = json::parse(in);
    if (doc.at("format_version").get<std::string>() != "1") {
      throw IoError("load_checkpoint: unsupported checkpoint format version");
    }
    header.network = network_from_json(doc.at("network"));
    header.seed = doc.at("seed").get<std::uint64_t>();
    header.epoch = doc.at("epoch").get<std::int64_t>();
    header.val_loss = doc.at("val_loss").get<double>();
  } catch (const json::exception& err) {
    throw IoError("load_checkpoint: malformed header " + stem + ".json: " +
                  err.what());
  }
  networks::ObjectCentricModel model(header.network);
  try {
    torch::load(model, stem + ".pt");
  } catch (const c10::Error& err) {
    throw IoError("load_checkpoint: cannot read " + stem + ".pt: " +
                  err.what_without_backtrace());
  }
  return {std::move(model), header};
}

TrainReport train(const TrainConfig& config) {
  if (config.network.slots < 1) {
    throw ParamError("train: slot count must be at least 1");
  }
  if (!(config.learning_rate > 0.0)) {
    throw ParamError("train: learning rate must be positive");
  }
  if (config.batch_size < 1 || config.epochs < 1 ||
      config.checkpoint_every < 1) {
    throw ParamError("train: batch size, epochs and cadence must be positive");
  }
  if (config.out.empty()) {
    throw ParamError("train: output directory must be set");
  }
  if (!(config.sinkhorn.start > 0.0) || !(config.sinkhorn.floor > 0.0) ||
      !(config.sinkhorn.decay > 0.0) || config.sinkhorn.decay > 1.0) {
    throw ParamError("train: invalid Sinkhorn schedule");
  }

  const datagen::DatasetReader train_data(config.dataset, "train");
  const datagen::DatasetReader val_data(config.dataset, "val");
  const std::int64_t train_count =
      config.max_train_sequences > 0
          ? std::min(config.max_train_sequences, train_data.size())
          : train_data.size();
  if (train_count == 0) {
    throw ParamError("train: training split is empty");
  }
  const std::int64_t T = train_data.config().frames;

  const fs::path out(config.out);
  std::error_code ec;
  fs::create_directories(out / "checkpoints", ec);
  if (ec) {
    throw IoError("train: cannot create " + (out / "checkpoints").string() +
                  ": " + ec.message());
  }

  torch::manual_seed(config.seed);
  networks::ObjectCentricModel model(config.network);
  pipeline::Pipeline pl(model);
  auto params = model->parameters();

  std::unique_ptr<torch::optim::Optimizer> opt;
  if (config.optimizer == Optimizer::rmsprop) {
    opt = std::make_unique<torch::optim::RMSprop>(
        params, torch::optim::RMSpropOptions(config.learning_rate));
  } else {
    opt = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(config.learning_rate));
  }

  const auto family = config.network.projective
                          ? geometry::TransformFamily::projective
                          : geometry::TransformFamily::affine;
  std::mt19937_64 consistency_rng(
      derive_seed(derive_seed(config.seed, kConsistencyStream), 0));

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t global_step = 0;
  std::vector<std::int64_t> indices(static_cast<std::size_t>(train_count));
  std::iota(indices.begin(), indices.end(), std::int64_t{0});

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double temperature =
        std::max(config.sinkhorn.floor,
                 config.sinkhorn.start *
                     std::pow(config.sinkhorn.decay,
                              static_cast<double>(epoch)));
    std::mt19937_64 order_rng(derive_seed(
        derive_seed(config.seed, kShuffleStream),
        static_cast<std::uint64_t>(epoch)));
    shuffle_indices(indices, order_rng);

    double epoch_total = 0.0;
    std::int64_t epoch_steps = 0;
    for (std::int64_t start = 0; start < train_count;
         start += config.batch_size, ++global_step) {
      const std::int64_t stop =
          std::min(train_count, start + config.batch_size);
      std::vector<torch::Tensor> batch;
      batch.reserve(static_cast<std::size_t>(stop - start));
      for (std::int64_t b = start; b < stop; ++b) {
        batch.push_back(
            train_data.frames(indices[static_cast<std::size_t>(b)]));
      }
      const auto frames = torch::stack(batch, 0);

      StepLog row;
      row.epoch = epoch;
      row.step = global_step;
      try {
        const pipeline::StepOptions opts{
            true,
            derive_seed(derive_seed(config.seed, kRolloutStream),
                        static_cast<std::uint64_t>(global_step)),
            temperature};
        auto record = pl.rollout(frames, opts);

        losses::LossTerms terms;
        terms.prediction =
            losses::prediction_loss(record.predictions, frames.slice(1, 1));
        if (config.weights.sparsity > 0.0) {
          terms.sparsity = losses::sparsity_loss(record.masks);
        }
        if (config.weights.concentration > 0.0) {
          terms.concentration = losses::concentration_loss(record.masks);
        }
        if (config.weights.consistency > 0.0 && T >= 3) {
          const auto sample = losses::draw_consistency_sample(T, consistency_rng);
          terms.consistency =
              losses::consistency_loss(record, frames, sample, family);
        }
        const auto total = losses::total_loss(terms, config.weights, params);

        opt->zero_grad();
        total.backward();
        opt->step();

        row.prediction = terms.prediction.item<double>();
        row.sparsity =
            terms.sparsity.defined() ? terms.sparsity.item<double>() : 0.0;
        row.concentration = terms.concentration.defined()
                                ? terms.concentration.item<double>()
                                : 0.0;
        row.consistency =
            terms.consistency.defined() ? terms.consistency.item<double>() : 0.0;
        row.total = total.item<double>();
      } catch (const NumericError& err) {
        throw NumericError("train: aborted at step " +
                           std::to_string(global_step) + ": " + err.what());
      }
      report.log.push_back(row);
      epoch_total += row.total;
      ++epoch_steps;
    }

    double val_loss = validation_loss(pl, val_data, config.batch_size,
                                      config.max_val_sequences);
    if (std::isnan(val_loss)) {
      // No validation split: fall back to the epoch's mean training loss.
      val_loss = epoch_total / static_cast<double>(epoch_steps);
    }
    report.val_loss.push_back(val_loss);

    CheckpointHeader header;
    header.network = config.network;
    header.seed = config.seed;
    header.epoch = epoch;
    header.val_loss = val_loss;
    if ((epoch + 1) % config.checkpoint_every == 0 ||
        epoch + 1 == config.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04lld",
                    static_cast<long long>(epoch));
      report.last_checkpoint = (out / "checkpoints" / name).string();
      save_checkpoint(model, header, report.last_checkpoint);
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      report.best_epoch = epoch;
      report.best_checkpoint = (out / "checkpoints" / "best").string();
      save_checkpoint(model, header, report.best_checkpoint);
    }

    write_train_csv(out / "train_log.csv", report.log);
    write_val_csv(out / "val_log.csv", report.val_loss);
  }
  return report;
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ParamError("psnr: inputs must share one shape");
  }
  const double mse = (a - b).pow(2).mean().item<double>();
  if (mse <= 0.0) {
    return 100.0;
  }
  return std::min(100.0, -10.0 * std::log10(mse));
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes() || a.dim() != 3) {
    throw ParamError("ssim: inputs must be matching [C, H, W] frames");
  }
  constexpr std::int64_t kWindow = 11;
  if (a.size(1) < kWindow || a.size(2) < kWindow) {
    throw ParamError("ssim: frames are smaller than the 11x11 window");
  }
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const std::int64_t channels = a.size(0);

  const auto window = gaussian_window(kWindow, 1.5)
                          .reshape({1, 1, kWindow, kWindow})
                          .expand({channels, 1, kWindow, kWindow});
  const auto x = a.unsqueeze(0).to(torch::kFloat32);
  const auto y = b.unsqueeze(0).to(torch::kFloat32);
  const auto blur = [&](const torch::Tensor& t) {
    return torch::nn::functional::conv2d(
        t, window,
        torch::nn::functional::Conv2dFuncOptions().groups(channels));
  };
  const auto mu_x = blur(x);
  const auto mu_y = blur(y);
  const auto sigma_x = blur(x * x) - mu_x * mu_x;
  const auto sigma_y = blur(y * y) - mu_y * mu_y;
  const auto sigma_xy = blur(x * y) - mu_x * mu_y;
  const auto ssim_map = ((2.0 * mu_x * mu_y + kC1) * (2.0 * sigma_xy + kC2)) /
                        ((mu_x * mu_x + mu_y * mu_y + kC1) *
                         (sigma_x + sigma_y + kC2));
  return ssim_map.mean().item<double>();
}

double MetricTable::mean_psnr() const {
  return psnr.defined() && psnr.numel() > 0 ? psnr.mean().item<double>() : 0.0;
}

double MetricTable::mean_ssim() const {
  return ssim.defined() && ssim.numel() > 0 ? ssim.mean().item<double>() : 0.0;
}

void summarize(MetricTable& table) {
  const auto quartiles = torch::tensor({0.25, 0.5, 0.75}, torch::kFloat64);
  const auto reduce = [&](const torch::Tensor& matrix, torch::Tensor& mean,
                          torch::Tensor& q25, torch::Tensor& q50,
                          torch::Tensor& q75) {
    if (!matrix.defined() || matrix.size(1) == 0) {
      const auto steps = matrix.defined() ? matrix.size(0) : 0;
      mean = torch::zeros({steps}, torch::kFloat64);
      q25 = q50 = q75 = mean;
      return;
    }
    const auto wide = matrix.to(torch::kFloat64);
    mean = wide.mean(1);
    const auto q = torch::quantile(wide, quartiles, 1);
    q25 = q.select(0, 0);
    q50 = q.select(0, 1);
    q75 = q.select(0, 2);
  };
  reduce(table.psnr, table.psnr_mean, table.psnr_q25, table.psnr_q50,
         table.psnr_q75);
  reduce(table.ssim, table.ssim_mean, table.ssim_q25, table.ssim_q50,
         table.ssim_q75);
}

MetricTable evaluate(pipeline::Pipeline& pl, const datagen::DatasetReader& data,
                     std::int64_t max_sequences) {
  torch::NoGradGuard no_grad;
  const std::int64_t count =
      max_sequences > 0 ? std::min(max_sequences, data.size()) : data.size();
  const std::int64_t T = data.config().frames;

  std::vector<torch::Tensor> psnr_cols;
  std::vector<torch::Tensor> ssim_cols;
  MetricTable table;
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const auto frames = data.frames(i).unsqueeze(0);
      auto record = pl.rollout(frames, {});
      auto pcol = torch::zeros({T - 1}, torch::kFloat64);
      auto scol = torch::zeros({T - 1}, torch::kFloat64);
      for (std::int64_t j = 0; j + 1 < T; ++j) {
        const auto pred = record.predictions.select(0, 0).select(0, j);
        const auto target = frames.select(0, 0).select(0, j + 1);
        pcol[j] = psnr(pred, target);
        scol[j] = ssim(pred, target);
      }
      psnr_cols.push_back(pcol);
      ssim_cols.push_back(scol);
    } catch (const std::exception& err) {
      std::fprintf(stderr, "evaluate: skipping sequence %lld: %s\n",
                   static_cast<long long>(i), err.what());
      ++table.skipped;
    }
  }
  if (psnr_cols.empty()) {
    table.psnr = torch::zeros({T - 1, 0}, torch::kFloat64);
    table.ssim = torch::zeros({T - 1, 0}, torch::kFloat64);
  } else {
    table.psnr = torch::stack(psnr_cols, 1);
    table.ssim = torch::stack(ssim_cols, 1);
  }
  table.sequences = static_cast<std::int64_t>(psnr_cols.size());
  summarize(table);
  return table;
}

MetricTable evaluate(const std::string& checkpoint_stem,
                     const std::string& dataset_root, const std::string& split,
                     std::int64_t max_sequences) {
  auto loaded = load_checkpoint(checkpoint_stem);
  pipeline::Pipeline pl(std::move(loaded.first));
  const datagen::DatasetReader data(dataset_root, split);
  return evaluate(pl, data, max_sequences);
}

MetricTable evaluate_copy_baseline(const datagen::DatasetReader& data,
                                   std::int64_t max_sequences) {
  const std::int64_t count =
      max_sequences > 0 ? std::min(max_sequences, data.size()) : data.size();
  const std::int64_t T = data.config().frames;
  std::vector<torch::Tensor> psnr_cols;
  std::vector<torch::Tensor> ssim_cols;
  for (std::int64_t i = 0; i < count; ++i) {
    const auto frames = data.frames(i);
    auto pcol = torch::zeros({T - 1}, torch::kFloat64);
    auto scol = torch::zeros({T - 1}, torch::kFloat64);
    for (std::int64_t j = 0; j + 1 < T; ++j) {
      pcol[j] = psnr(frames.select(0, j), frames.select(0, j + 1));
      scol[j] = ssim(frames.select(0, j), frames.select(0, j + 1));
    }
    psnr_cols.push_back(pcol);
    ssim_cols.push_back(scol);
  }
  MetricTable table;
  if (psnr_cols.empty()) {
    table.psnr = torch::zeros({T - 1, 0}, torch::kFloat64);
    table.ssim = torch::zeros({T - 1, 0}, torch::kFloat64);
  } else {
    table.psnr = torch::stack(psnr_cols, 1);
    table.ssim = torch::stack(ssim_cols, 1);
  }
  table.sequences = static_cast<std::int64_t>(psnr_cols.size());
  summarize(table);
  return table;
}

std::vector<CrossEvalCell> cross_evaluate(
    const std::vector<std::string>& checkpoint_stems,
    const std::vector<std::string>& dataset_roots, const std::string& split,
    const std::string& out, std::int64_t max_sequences) {
  std::vector<CrossEvalCell> cells;
  json report;
  report["schema_version"] = "1";
  report["split"] = split;
  json cell_docs = json::array();
  for (const std::string& stem : checkpoint_stems) {
    for (const std::string& root : dataset_roots) {
      const std::string cell_name = "(" + stem + ", " + root + ")";
      try {
        auto [model, header] = load_checkpoint(stem);
        pipeline::Pipeline pl(std::move(model));
        const datagen::DatasetReader data(root, split);
        auto table = evaluate(pl, data, max_sequences);

        json doc;
        doc["checkpoint"] = stem;
        doc["dataset"] = root;
        doc["slots"] = header.network.slots;
        doc["objects"] = data.config().objects;
        doc["sequences"] = table.sequences;
        doc["skipped"] = table.skipped;
        const auto dump_rows = [](const torch::Tensor& matrix) {
          json rows = json::array();
          for (std::int64_t t = 0; t < matrix.size(0); ++t) {
            json row = json::array();
            for (std::int64_t n = 0; n < matrix.size(1); ++n) {
              row.push_back(matrix[t][n].item<double>());
            }
            rows.push_back(std::move(row));
          }
          return rows;
        };
        const auto dump_vec = [](const torch::Tensor& v) {
          json arr = json::array();
          for (std::int64_t t = 0; t < v.size(0); ++t) {
            arr.push_back(v[t].item<double>());
          }
          return arr;
        };
        doc["psnr"] = dump_rows(table.psnr);
        doc["ssim"] = dump_rows(table.ssim);
        doc["psnr_mean"] = dump_vec(table.psnr_mean);
        doc["psnr_q25"] = dump_vec(table.psnr_q25);
        doc["psnr_q50"] = dump_vec(table.psnr_q50);
        doc["psnr_q75"] = dump_vec(table.psnr_q75);
        doc["ssim_mean"] = dump_vec(table.ssim_mean);
        doc["ssim_q25"] = dump_vec(table.ssim_q25);
        doc["ssim_q50"] = dump_vec(table.ssim_q50);
        doc["ssim_q75"] = dump_vec(table.ssim_q75);
        cell_docs.push_back(std::move(doc));
        cells.push_back({stem, root, std::move(table)});
      } catch (const IoError& err) {
        throw IoError("cross_evaluate: cell " + cell_name + ": " + err.what());
      }
    }
  }
  report["cells"] = std::move(cell_docs);

  if (!out.empty()) {
    const fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
      throw IoError("cross_evaluate: cannot create " + dir.string() + ": " +
                    ec.message());
    }
    std::ofstream json_out(dir / "report.json", std::ios::trunc);
    if (!json_out) {
      throw IoError("cross_evaluate: cannot open " +
                    (dir / "report.json").string());
    }
    json_out << report.dump(2) << "\n";

    std::ofstream csv(dir / "summary.csv", std::ios::trunc);
    if (!csv) {
      throw IoError("cross_evaluate: cannot open " +
                    (dir / "summary.csv").string());
    }
    csv << "checkpoint,dataset,sequences,mean_psnr,mean_ssim\n";
    char line[512];
    for (const CrossEvalCell& cell : cells) {
      std::snprintf(line, sizeof(line), "%s,%s,%lld,%.6f,%.6f\n",
                    cell.checkpoint.c_str(), cell.dataset.c_str(),
                    static_cast<long long>(cell.table.sequences),
                    cell.table.mean_psnr(), cell.table.mean_ssim());
      csv << line;
    }
  }
  return cells;
}

std::pair<std::vector<std::int64_t>, double> match_masks_iou(
    const torch::Tensor& pred_masks, const torch::Tensor& true_masks) {
  if (!pred_masks.defined() || !true_masks.defined() ||
      pred_masks.dim() != 3 || true_masks.dim() != 3 ||
      pred_masks.size(1) != true_masks.size(1) ||
      pred_masks.size(2) != true_masks.size(2)) {
    throw ParamError("match_masks_iou: inputs must be [K, H, W] mask stacks "
                     "over one grid");
  }
  const std::int64_t num_pred = pred_masks.size(0);
  const std::int64_t num_true = true_masks.size(0);
  const std::int64_t span = std::max(num_pred, num_true);
  if (span > 6) {
    throw ParamError("match_masks_iou: exhaustive matching is limited to 6 "
                     "slots");
  }
  const auto iou = per_pair_iou(pred_masks, true_masks);
  const auto access = iou.accessor<float, 2>();

  std::vector<std::int64_t> order(static_cast<std::size_t>(span));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::vector<std::int64_t> best_order = order;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (std::int64_t i = 0; i < num_pred; ++i) {
      const std::int64_t j = order[static_cast<std::size_t>(i)];
      if (j < num_true) {
        score += access[i][j];
      }
    }
    if (score > best_score) {
      best_score = score;
      best_order = order;
    }
  } while (std::next_permutation(order.begin(), order.end()));

  std::vector<std::int64_t> assignment(static_cast<std::size_t>(num_pred), -1);
  for (std::int64_t i = 0; i < num_pred; ++i) {
    const std::int64_t j = best_order[static_cast<std::size_t>(i)];
    if (j < num_true) {
      assignment[static_cast<std::size_t>(i)] = j;
    }
  }
  return {std::move(assignment),
          best_score / static_cast<double>(std::max<std::int64_t>(num_true, 1))};
}

}  // namespace ocvp::traineval
