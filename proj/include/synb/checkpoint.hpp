#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "synb/adam.hpp"
#include "synb/network.hpp"

namespace synb {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Restored training state. `model` is rebuilt from the stored config with
// every parameter and batch-norm running stat overwritten from the payload.
struct Checkpoint {
    ModelConfig config;
    long step = 0;
    Rng train_rng{0};
    std::unique_ptr<Model<float>> model;
    // optimizer moments in params() order; empty when saved without one
    std::vector<Tensor<float>> adam_m, adam_v;
    long adam_steps = 0;
    bool has_optimizer = false;
};

// Format: magic "SYNB", u32 version, u64 header length, JSON header (config,
// step, rng, tensor manifest with name/shape/offset), raw little-endian f32
// payload. Round trips are bitwise.
void save_checkpoint(const std::string& path, Model<float>& model, Adam<float>* opt,
                     const Rng& train_rng, long step);
Checkpoint load_checkpoint(const std::string& path);

// attach(model.params()) plus moment/step restore
void restore_adam(Adam<float>& opt, Model<float>& model, const Checkpoint& ckpt);

}  // namespace synb
