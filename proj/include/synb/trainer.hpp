#pragma once

#include <functional>
#include <string>
#include <vector>

#include "synb/checkpoint.hpp"
#include "synb/datagen.hpp"
#include "synb/eval.hpp"
#include "synb/network.hpp"

namespace synb {

struct TrainConfig {
    ModelConfig model;
    int steps = 5000;
    int batch = 16;
    double lr = 4e-4;
    int log_every = 50;
    int ckpt_every = 1000;  // 0 disables periodic checkpoints
    std::uint64_t seed = 0;
    std::string out_dir;  // empty: no files written (in-memory run)
};

struct StepMetrics {
    long step = 0;
    double loss = 0.0;
    double mse = 0.0;
    double l_ct = 0.0;  // meaningful only when has_ct
    bool has_ct = false;
};

struct TrainResult {
    long steps_done = 0;
    bool aborted_nan = false;
    long nan_step = -1;
    std::vector<int> nan_batch;  // offending batch indices on abort
    std::vector<StepMetrics> logged;
    std::string final_checkpoint;  // path, empty for in-memory runs
};

// Deterministic under (config, seed): batches are drawn from a child stream
// keyed by the step index, contrastive mining from another.
TrainResult train(Model<float>& model, const TrainConfig& cfg,
                  const std::vector<LabeledScene>& train_scenes,
                  const std::function<void(const StepMetrics&)>& on_log = nullptr);

// Eval-mode forward over scenes, batched; one ImageOutput per scene.
std::vector<ImageOutput> model_outputs(Model<float>& model,
                                       const std::vector<LabeledScene>& scenes, int batch = 16);

EvalReport evaluate_model(Model<float>& model, const std::vector<LabeledScene>& scenes,
                          const EvalConfig& cfg, int batch = 16);

}  // namespace synb
