#pragma once

#include <string>
#include <vector>

#include "synb/datagen.hpp"
#include "synb/eval.hpp"

namespace synb {

// Emits the seven per-scene panels as `<scene>_<panel>.png` in out_dir:
// input, gt, recon, grouping, phase_scatter, phase_mean, magnitude.
// pred_labels: one cluster id per pixel (from the evaluation clustering).
void render_scene(const LabeledScene& scene, const ImageOutput& output,
                  const std::vector<int>& pred_labels, const std::string& out_dir,
                  const std::string& scene_name);

// label -> distinct color; label 0 maps to dark gray
std::array<std::uint8_t, 3> label_color(int label);

}  // namespace synb
