#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dla/net.hpp"
#include "dla/patches.hpp"

namespace dla {

struct LrPoint {
    double epoch;  // epoch fraction at which this rate takes effect
    double rate;
};

struct TrainConfig {
    int batch_size = 512;
    double momentum = 0.9;
    std::vector<LrPoint> lr_points = {{0.0, 1e-3}, {1.0, 1e-4}, {1.5, 1e-5}};
    int max_iterations = 2000;
    int n_workers = 2;
    int eval_interval = 50;
    int patience = 10;          // consecutive non-improving evals before stopping
    double min_delta = 1e-4;    // required validation-loss improvement
    int val_subsample = 1024;   // fixed seeded subsample of the validation set
    std::uint64_t seed = 0;

    void validate() const;
};

// step schedule over epoch fractions: the active rate is the last point whose
// epoch is <= iteration / iters_per_epoch
double lr_at(std::int64_t iteration, std::int64_t iters_per_epoch,
             const std::vector<LrPoint>& points);

// momentum buffer, shape-congruent with the parameters
using Velocity = ModelParams;

// classical momentum: v' = momentum * v - lr * g; p' = p + v'
void sgd_step(ModelParams& params, Velocity& velocity, const Gradients& grads, double lr,
              double momentum);

// batch-size-weighted mean in worker order; equals the whole-batch gradient
// when the shards partition one batch
Gradients sync_aggregate(const std::vector<Gradients>& worker_grads,
                         const std::vector<int>& worker_batch_sizes);

struct TrainRecord {
    std::int64_t iteration;
    double lr;
    double train_loss;
    double val_loss;
    double val_acc;
};

struct TrainHistory {
    std::int64_t iters_per_epoch = 0;  // one balanced pass over the vessel pool
    std::vector<TrainRecord> records;
    std::string stop_reason;  // "early_stop" or "max_iterations"
    std::int64_t best_iteration = 0;
    double best_val_loss = 0.0;
};

void save_history(const TrainHistory& h, const std::filesystem::path& path);

// synchronous data-parallel SGD: each iteration draws one balanced batch,
// splits it into contiguous per-worker shards, aggregates the shard gradients
// and applies one momentum step. Validation loss/accuracy are measured on a
// fixed seeded subsample at iteration 0 and every eval_interval iterations;
// returns the parameters of the best evaluation. Deterministic in cfg.seed
// for a fixed worker count, and within 1e-9 across worker counts.
std::pair<ModelParams, TrainHistory> train(const TrainConfig& cfg, const Architecture& arch,
                                           const std::vector<const Volume*>& train_fills,
                                           const std::vector<const LabeledVoxelSet*>& train_sets,
                                           const std::vector<const Volume*>& val_fills,
                                           const std::vector<const LabeledVoxelSet*>& val_sets);

}  // namespace dla
