#include <torch/torch.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ocvp/config.hpp"
#include "ocvp/datagen.hpp"
#include "ocvp/pipeline.hpp"
#include "ocvp/traineval.hpp"
#include "ocvp/viz.hpp"

namespace fs = std::filesystem;
using namespace ocvp;
using nlohmann::json;

namespace {

// File-backed config and explicit overrides shared by every subcommand.
struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (key-value tree)");
  cmd->add_option("--override", args.overrides,
                  "dotted-path override, e.g. loss.lambda4=0 (repeatable)");
}

// Convenience flags become overrides applied after --override, so the most
// specific spelling wins.
config::RunConfig resolve_command(const std::string& command, const CommonArgs& common,
                                  const std::vector<std::string>& sugar) {
  config::ConfigTree tree;
  if (!common.config_path.empty()) tree = config::load_tree(common.config_path);
  for (const auto& spec : common.overrides) config::apply_override(tree, spec);
  for (const auto& spec : sugar) config::apply_override(tree, spec);
  auto cfg = config::resolve(tree);
  cfg.command = command;
  return cfg;
}

void write_resolved(const config::RunConfig& cfg, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const fs::path path = dir / "resolved.toml";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  out << config::serialize(cfg);
}

json table_doc(const traineval::MetricTable& table) {
  const auto dump_rows = [](const torch::Tensor& matrix) {
    json rows = json::array();
    for (std::int64_t t = 0; t < matrix.size(0); ++t) {
      json row = json::array();
      for (std::int64_t n = 0; n < matrix.size(1); ++n) row.push_back(matrix[t][n].item<double>());
      rows.push_back(std::move(row));
    }
    return rows;
  };
  const auto dump_vec = [](const torch::Tensor& v) {
    json arr = json::array();
    for (std::int64_t t = 0; t < v.size(0); ++t) arr.push_back(v[t].item<double>());
    return arr;
  };
  json doc;
  doc["sequences"] = table.sequences;
  doc["skipped"] = table.skipped;
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
  return doc;
}

viz::BoxStats box_stats(const torch::Tensor& matrix) {
  auto flat = matrix.reshape(-1).to(torch::kDouble);
  auto q = torch::quantile(flat, torch::tensor({0.25, 0.5, 0.75}, torch::kDouble));
  return {flat.min().item<double>(), q[0].item<double>(), q[1].item<double>(),
          q[2].item<double>(), flat.max().item<double>()};
}

int run_generate(const CommonArgs& common, const std::vector<std::string>& sugar) {
  auto cfg = resolve_command("generate", common, sugar);
  if (cfg.dataset.root.empty()) cfg.dataset.root = config::default_out("generate");
  // the dataset path also carries the other per-command defaults
  if (cfg.train.dataset.empty()) cfg.train.dataset = cfg.dataset.root;
  if (cfg.eval.dataset.empty()) cfg.eval.dataset = cfg.dataset.root;
  if (cfg.visualize.dataset.empty()) cfg.visualize.dataset = cfg.dataset.root;
  write_resolved(cfg, cfg.dataset.root);
  datagen::generate_dataset(cfg.dataset);
  std::printf("dataset %s: train=%lld val=%lld test=%lld objects=%lld frames=%lld %lldx%lld seed=%llu\n",
              cfg.dataset.root.c_str(), static_cast<long long>(cfg.dataset.train),
              static_cast<long long>(cfg.dataset.val), static_cast<long long>(cfg.dataset.test),
              static_cast<long long>(cfg.dataset.objects),
              static_cast<long long>(cfg.dataset.frames),
              static_cast<long long>(cfg.dataset.height),
              static_cast<long long>(cfg.dataset.width),
              static_cast<unsigned long long>(cfg.dataset.seed));
  return 0;
}

int run_train(const CommonArgs& common, const std::vector<std::string>& sugar) {
  auto cfg = resolve_command("train", common, sugar);
  if (cfg.train.dataset.empty()) {
    throw ParamError("train: no dataset given (flag --dataset or key train.dataset)");
  }
  if (!fs::exists(fs::path(cfg.train.dataset) / "manifest.json")) {
    throw IoError("train: dataset manifest not found at " +
                  (fs::path(cfg.train.dataset) / "manifest.json").string());
  }
  if (cfg.train.out.empty()) cfg.train.out = config::default_out("train");
  write_resolved(cfg, cfg.train.out);
  const auto report = traineval::train(cfg.train);
  const double last_val = report.val_loss.empty() ? 0.0 : report.val_loss.back();
  std::printf("trained %lld epochs (K_m=%lld): best epoch %lld, last val %.6f\n",
              static_cast<long long>(cfg.train.epochs),
              static_cast<long long>(cfg.train.network.slots),
              static_cast<long long>(report.best_epoch), last_val);
  std::printf("best checkpoint: %s\n", report.best_checkpoint.c_str());
  return 0;
}

int run_eval(const CommonArgs& common, const std::vector<std::string>& sugar) {
  auto cfg = resolve_command("eval", common, sugar);
  if (cfg.eval.checkpoint.empty()) {
    throw ParamError("eval: no checkpoint given (flag --checkpoint or key eval.checkpoint)");
  }
  if (cfg.eval.dataset.empty()) {
    throw ParamError("eval: no dataset given (flag --dataset or key eval.dataset)");
  }
  if (cfg.eval.out.empty()) cfg.eval.out = config::default_out("eval");
  write_resolved(cfg, cfg.eval.out);

  const auto table = traineval::evaluate(cfg.eval.checkpoint, cfg.eval.dataset, cfg.eval.split,
                                         cfg.eval.max_sequences);
  json doc = table_doc(table);
  doc["schema_version"] = "1";
  doc["checkpoint"] = cfg.eval.checkpoint;
  doc["dataset"] = cfg.eval.dataset;
  doc["split"] = cfg.eval.split;
  const fs::path path = fs::path(cfg.eval.out) / "report.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("eval: cannot open " + path.string());
  out << doc.dump(2) << "\n";

  std::printf("eval %s on %s/%s: %lld sequences (%lld skipped), PSNR %.2f dB, SSIM %.4f\n",
              cfg.eval.checkpoint.c_str(), cfg.eval.dataset.c_str(), cfg.eval.split.c_str(),
              static_cast<long long>(table.sequences), static_cast<long long>(table.skipped),
              table.mean_psnr(), table.mean_ssim());
  return 0;
}

int run_crosseval(const CommonArgs& common, const std::vector<std::string>& sugar) {
  auto cfg = resolve_command("crosseval", common, sugar);
  if (cfg.crosseval.checkpoints.empty()) {
    throw ParamError("crosseval: no checkpoints given (flag --checkpoints or key "
                     "crosseval.checkpoints)");
  }
  if (cfg.crosseval.datasets.empty()) {
    throw ParamError("crosseval: no datasets given (flag --datasets or key crosseval.datasets)");
  }
  if (cfg.crosseval.out.empty()) cfg.crosseval.out = config::default_out("crosseval");
  write_resolved(cfg, cfg.crosseval.out);

  const auto cells = traineval::cross_evaluate(cfg.crosseval.checkpoints, cfg.crosseval.datasets,
                                               cfg.crosseval.split, cfg.crosseval.out,
                                               cfg.crosseval.max_sequences);
  // one box per cell, row-major over (checkpoint, dataset) like report.json
  std::vector<viz::BoxStats> psnr_boxes, ssim_boxes;
  for (const auto& cell : cells) {
    psnr_boxes.push_back(box_stats(cell.table.psnr));
    ssim_boxes.push_back(box_stats(cell.table.ssim));
    std::printf("cell (%s, %s): PSNR %.2f dB, SSIM %.4f\n", cell.checkpoint.c_str(),
                cell.dataset.c_str(), cell.table.mean_psnr(), cell.table.mean_ssim());
  }
  viz::write_png((fs::path(cfg.crosseval.out) / "psnr_boxplot.png").string(),
                 viz::boxplot(psnr_boxes));
  viz::write_png((fs::path(cfg.crosseval.out) / "ssim_boxplot.png").string(),
                 viz::boxplot(ssim_boxes));
  std::printf("wrote %zu cells to %s\n", cells.size(), cfg.crosseval.out.c_str());
  return 0;
}

int run_visualize(const CommonArgs& common, const std::vector<std::string>& sugar) {
  auto cfg = resolve_command("visualize", common, sugar);
  if (cfg.visualize.checkpoint.empty()) {
    throw ParamError("visualize: no checkpoint given (flag --checkpoint or key "
                     "visualize.checkpoint)");
  }
  if (cfg.visualize.dataset.empty()) {
    throw ParamError("visualize: no dataset given (flag --dataset or key visualize.dataset)");
  }
  if (cfg.visualize.out.empty()) cfg.visualize.out = config::default_out("visualize");
  write_resolved(cfg, cfg.visualize.out);

  auto loaded = traineval::load_checkpoint(cfg.visualize.checkpoint);
  pipeline::Pipeline pl(std::move(loaded.first));
  pl.model->eval();
  const datagen::DatasetReader reader(cfg.visualize.dataset, cfg.visualize.split);

  torch::NoGradGuard no_grad;
  int64_t written = 0;
  for (const auto index : cfg.visualize.sequences) {
    if (index < 0 || index >= reader.size()) {
      throw ParamError("visualize: sequence " + std::to_string(index) + " outside [0, " +
                       std::to_string(reader.size()) + ")");
    }
    const auto frames = reader.frames(index);
    pipeline::StepOptions opts;  // eval mode: rollouts are deterministic
    const auto record = pl.rollout(frames.unsqueeze(0), opts);

    char stem[64];
    std::snprintf(stem, sizeof(stem), "%s_%06lld", cfg.visualize.split.c_str(),
                  static_cast<long long>(index));
    const fs::path base = fs::path(cfg.visualize.out) / stem;
    viz::write_png(base.string() + "_panel.png",
                   viz::sequence_panel(record, frames, cfg.visualize.steps));
    const auto K = record.canvases.size(2);
    for (std::int64_t k = 0; k < K; ++k) {
      viz::write_png(base.string() + "_object" + std::to_string(k) + "_strip.png",
                     viz::object_strip(record, k));
    }
    viz::write_png(base.string() + "_background_strip.png", viz::background_strip(record));
    written += K + 2;
  }
  std::printf("wrote %lld images to %s\n", static_cast<long long>(written),
              cfg.visualize.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised object-centric video prediction toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::vector<std::string> sugar;
  // option targets for the convenience flags; turned into overrides on use
  std::string opt_out, opt_dataset, opt_checkpoint, opt_checkpoints, opt_datasets, opt_split;
  std::string opt_optimizer, opt_sequences, opt_steps;
  std::int64_t opt_kd = 0, opt_km = 0, opt_train = 0, opt_val = 0, opt_test = 0;
  std::int64_t opt_frames = 0, opt_epochs = 0, opt_batch = 0, opt_max = 0;
  std::uint64_t opt_seed = 0;
  double opt_lr = 0.0;
  bool opt_textured = false;

  const auto sugar_if = [&sugar](const CLI::Option* opt, const std::string& key,
                                 const std::string& value) {
    if (opt->count() > 0) sugar.push_back(key + "=" + value);
  };

  auto* generate = app.add_subcommand("generate", "write a moving-shapes dataset to disk");
  add_common(generate, common);
  auto* g_out = generate->add_option("--out", opt_out, "dataset root directory");
  auto* g_kd = generate->add_option("--kd", opt_kd, "objects per sequence (K_d)");
  auto* g_train = generate->add_option("--train", opt_train, "training sequences");
  auto* g_val = generate->add_option("--val", opt_val, "validation sequences");
  auto* g_test = generate->add_option("--test", opt_test, "test sequences");
  auto* g_frames = generate->add_option("--frames", opt_frames, "frames per sequence");
  auto* g_seed = generate->add_option("--seed", opt_seed, "master seed");
  auto* g_tex = generate->add_flag("--textured", opt_textured, "sinusoidal background");
  generate->callback([&] {
    sugar_if(g_out, "dataset.root", opt_out);
    sugar_if(g_kd, "dataset.objects", std::to_string(opt_kd));
    sugar_if(g_train, "dataset.train", std::to_string(opt_train));
    sugar_if(g_val, "dataset.val", std::to_string(opt_val));
    sugar_if(g_test, "dataset.test", std::to_string(opt_test));
    sugar_if(g_frames, "dataset.frames", std::to_string(opt_frames));
    sugar_if(g_seed, "seed", std::to_string(opt_seed));
    sugar_if(g_tex, "dataset.textured", "true");
    run_generate(common, sugar);
  });

  auto* train = app.add_subcommand("train", "fit a model on a generated dataset");
  add_common(train, common);
  auto* t_data = train->add_option("--dataset", opt_dataset, "dataset root");
  auto* t_out = train->add_option("--out", opt_out, "run directory");
  auto* t_km = train->add_option("--km", opt_km, "object slots (K_m)");
  auto* t_epochs = train->add_option("--epochs", opt_epochs, "training epochs");
  auto* t_batch = train->add_option("--batch", opt_batch, "batch size");
  auto* t_lr = train->add_option("--lr", opt_lr, "learning rate");
  auto* t_optim = train->add_option("--optimizer", opt_optimizer, "rmsprop or adam")
                      ->check(CLI::IsMember({"rmsprop", "adam"}));
  auto* t_seed = train->add_option("--seed", opt_seed, "master seed");
  train->callback([&] {
    sugar_if(t_data, "train.dataset", opt_dataset);
    sugar_if(t_out, "train.out", opt_out);
    sugar_if(t_km, "network.slots", std::to_string(opt_km));
    sugar_if(t_epochs, "train.epochs", std::to_string(opt_epochs));
    sugar_if(t_batch, "train.batch_size", std::to_string(opt_batch));
    sugar_if(t_lr, "train.learning_rate", std::to_string(opt_lr));
    sugar_if(t_optim, "train.optimizer", opt_optimizer);
    sugar_if(t_seed, "seed", std::to_string(opt_seed));
    run_train(common, sugar);
  });

  auto* eval = app.add_subcommand("eval", "measure PSNR/SSIM of a checkpoint on a split");
  add_common(eval, common);
  auto* e_ck = eval->add_option("--checkpoint", opt_checkpoint, "checkpoint stem");
  auto* e_data = eval->add_option("--dataset", opt_dataset, "dataset root");
  auto* e_split = eval->add_option("--split", opt_split, "train, val or test");
  auto* e_out = eval->add_option("--out", opt_out, "report directory");
  auto* e_max = eval->add_option("--max", opt_max, "cap on evaluated sequences");
  eval->callback([&] {
    sugar_if(e_ck, "eval.checkpoint", opt_checkpoint);
    sugar_if(e_data, "eval.dataset", opt_dataset);
    sugar_if(e_split, "eval.split", opt_split);
    sugar_if(e_out, "eval.out", opt_out);
    sugar_if(e_max, "eval.max_sequences", std::to_string(opt_max));
    run_eval(common, sugar);
  });

  auto* crosseval = app.add_subcommand("crosseval",
                                       "evaluate checkpoints x datasets and plot the grid");
  add_common(crosseval, common);
  auto* c_cks = crosseval->add_option("--checkpoints", opt_checkpoints,
                                      "comma-separated checkpoint stems");
  auto* c_data = crosseval->add_option("--datasets", opt_datasets,
                                       "comma-separated dataset roots");
  auto* c_split = crosseval->add_option("--split", opt_split, "train, val or test");
  auto* c_out = crosseval->add_option("--out", opt_out, "report directory");
  auto* c_max = crosseval->add_option("--max", opt_max, "cap on evaluated sequences");
  crosseval->callback([&] {
    sugar_if(c_cks, "crosseval.checkpoints", opt_checkpoints);
    sugar_if(c_data, "crosseval.datasets", opt_datasets);
    sugar_if(c_split, "crosseval.split", opt_split);
    sugar_if(c_out, "crosseval.out", opt_out);
    sugar_if(c_max, "crosseval.max_sequences", std::to_string(opt_max));
    run_crosseval(common, sugar);
  });

  auto* visualize = app.add_subcommand("visualize",
                                       "render decomposition panels for chosen sequences");
  add_common(visualize, common);
  auto* v_ck = visualize->add_option("--checkpoint", opt_checkpoint, "checkpoint stem");
  auto* v_data = visualize->add_option("--dataset", opt_dataset, "dataset root");
  auto* v_split = visualize->add_option("--split", opt_split, "train, val or test");
  auto* v_seqs = visualize->add_option("--sequences", opt_sequences,
                                       "comma-separated sequence indices");
  auto* v_steps = visualize->add_option("--steps", opt_steps,
                                        "comma-separated target frames, e.g. 5,7");
  auto* v_out = visualize->add_option("--out", opt_out, "image directory");
  visualize->callback([&] {
    sugar_if(v_ck, "visualize.checkpoint", opt_checkpoint);
    sugar_if(v_data, "visualize.dataset", opt_dataset);
    sugar_if(v_split, "visualize.split", opt_split);
    sugar_if(v_seqs, "visualize.sequences", opt_sequences);
    sugar_if(v_steps, "visualize.steps", opt_steps);
    sugar_if(v_out, "visualize.out", opt_out);
    run_visualize(common, sugar);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors map to exit 2
  } catch (const ParamError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const c10::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what_without_backtrace());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
