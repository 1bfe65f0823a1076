#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ocvp/common.hpp"
#include "ocvp/datagen.hpp"
#include "ocvp/losses.hpp"
#include "ocvp/networks.hpp"
#include "ocvp/pipeline.hpp"

namespace ocvp::traineval {

// The paper names rmsprop as its optimizer while citing the Adam reference;
// both are available and rmsprop is the default.
enum class Optimizer { rmsprop, adam };

// Gumbel-Sinkhorn temperature annealing: temperature for epoch e (0-based)
// is max(floor, start * decay^e). Lower temperatures sharpen the soft
// permutations toward hard ones as training progresses.
struct SinkhornSchedule {
  double start = 1.0;
  double decay = 0.97;
  double floor = 0.1;
};

struct TrainConfig {
  std::string dataset;  // root written by generate_dataset
  std::string out;      // run directory: checkpoints, loss log, resolved seed
  std::int64_t batch_size = 16;
  double learning_rate = 1e-4;
  Optimizer optimizer = Optimizer::rmsprop;
  std::int64_t epochs = 50;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 5;  // epochs between periodic checkpoints
  SinkhornSchedule sinkhorn;
  networks::NetworkConfig network;  // network.slots is K_m
  // Optional caps for desk-scale runs; 0 means the whole split.
  std::int64_t max_train_sequences = 0;
  std::int64_t max_val_sequences = 0;
};

struct StepLog {
  std::int64_t epoch = 0;
  std::int64_t step = 0;  // global optimizer step, 0-based
  double prediction = 0.0;
  double sparsity = 0.0;
  double concentration = 0.0;
  double consistency = 0.0;
  double total = 0.0;
};

struct TrainReport {
  std::vector<StepLog> log;
  std::vector<double> val_loss;  // eval-mode prediction loss per epoch
  std::int64_t best_epoch = -1;
  std::string best_checkpoint;  // stem of the best-validation checkpoint
  std::string last_checkpoint;
};

// Sidecar metadata stored next to the weights so a checkpoint can be
// reopened without the original config file.
struct CheckpointHeader {
  networks::NetworkConfig network;
  std::uint64_t seed = 0;
  std::int64_t epoch = -1;
  double val_loss = 0.0;
};

// Writes stem.pt (weights) and stem.json (header, format version "1").
void save_checkpoint(const networks::ObjectCentricModel& model,
                     const CheckpointHeader& header, const std::string& stem);
std::pair<networks::ObjectCentricModel, CheckpointHeader> load_checkpoint(
    const std::string& stem);

// Full training loop: seeded init, per-epoch shuffled batches, rollout in
// train mode with per-step Gumbel seeds, four-term loss, optimizer step.
// Logs every step to out/train_log.csv and checkpoints periodically plus
// whenever the eval-mode validation loss improves.
TrainReport train(const TrainConfig& config);

// 10 * log10(1 / MSE) in dB for frames in [0, 1]; capped at 100 dB so
// perfect predictions do not produce infinities in aggregates.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, averaged over channels and valid positions. Inputs [C, H, W].
double ssim(const torch::Tensor& a, const torch::Tensor& b);

// Per-timestep metrics over a split: row t holds the score of predicted
// frame t+2 (1-based) for every sequence; every predicted frame counts, no
// warm-up discard. Quartile tensors are [T-1].
struct MetricTable {
  torch::Tensor psnr;  // [T-1, N]
  torch::Tensor ssim;  // [T-1, N]
  torch::Tensor psnr_mean, psnr_q25, psnr_q50, psnr_q75;
  torch::Tensor ssim_mean, ssim_q25, ssim_q50, ssim_q75;
  std::int64_t sequences = 0;
  std::int64_t skipped = 0;  // sequences dropped due to rollout errors

  double mean_psnr() const;  // grand mean over timesteps and sequences
  double mean_ssim() const;
};

// Fills the summary tensors from the raw per-sequence matrices.
void summarize(MetricTable& table);

// Rolls out every sequence of the split in eval mode and scores each
// predicted frame against the ground-truth frame. Sequences whose rollout
// throws are skipped and counted. `max_sequences` 0 means all.
MetricTable evaluate(pipeline::Pipeline& pl, const datagen::DatasetReader& data,
                     std::int64_t max_sequences = 0);
MetricTable evaluate(const std::string& checkpoint_stem,
                     const std::string& dataset_root, const std::string& split,
                     std::int64_t max_sequences = 0);

// Copy-last-frame baseline: predicts frame t+1 as frame t.
MetricTable evaluate_copy_baseline(const datagen::DatasetReader& data,
                                   std::int64_t max_sequences = 0);

struct CrossEvalCell {
  std::string checkpoint;
  std::string dataset;
  MetricTable table;
};

// Full grid of evaluate() over checkpoints x dataset roots (the paper's
// K_m x K_d protocol). Writes report.json (schema version "1") with
// per-timestep distributions plus a CSV summary under `out`; set `out`
// empty to skip writing.
std::vector<CrossEvalCell> cross_evaluate(
    const std::vector<std::string>& checkpoint_stems,
    const std::vector<std::string>& dataset_roots, const std::string& split,
    const std::string& out, std::int64_t max_sequences = 0);

// Best one-to-one slot-to-object assignment by total IoU, exhaustive over
// permutations (intended for K <= 4). Masks are binarized at 0.5; slot
// counts may differ and unmatched entries score 0. Returns the matched
// truth index per predicted slot (-1 if unmatched) and the IoU sum divided
// by the number of true objects.
std::pair<std::vector<std::int64_t>, double> match_masks_iou(
    const torch::Tensor& pred_masks, const torch::Tensor& true_masks);

}  // namespace ocvp::traineval
