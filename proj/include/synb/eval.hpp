#pragma once

#include <optional>
#include <string>
#include <vector>

#include "synb/datagen.hpp"
#include "synb/rng.hpp"
#include "synb/tensor.hpp"

namespace synb {

struct EvalConfig {
    // nullopt disables magnitude masking ("none"); otherwise a pixel is valid
    // iff its mean channel magnitude exceeds the threshold strictly, so
    // threshold 0.0 masks exactly-zero magnitudes only. Masked pixels have
    // their phase zeroed before clustering (features pinned to cos 0, sin 0
    // per channel), which groups all low-magnitude pixels — whose phase is
    // ill-defined noise — into one coherent cluster.
    std::optional<double> threshold = 0.1;
    bool valid_any_channel = false;  // alternative criterion: any channel above

    int kmeans_restarts = 10;
    int kmeans_iters = 300;
    double kmeans_tol = 1e-6;
    std::uint64_t seed = 0;

    bool separability_on_predicted = false;  // default: ground-truth segments
};

struct PhaseFeatures {
    Tensor<double> features;  // [H*W, 6] = (cos, sin) per channel
    std::vector<char> valid;  // one flag per pixel
};

// magnitude, phase: [3,H,W]
PhaseFeatures phase_features(const Tensor<float>& magnitude, const Tensor<float>& phase,
                             const EvalConfig& cfg);

struct KmeansResult {
    std::vector<int> labels;  // every row labeled, valid or not
    double inertia = 0.0;
    bool fallback_all_rows = false;  // fewer valid rows than K
};

// Fit on valid rows (k-means++, best of restarts by inertia), assign all rows.
KmeansResult kmeans(const Tensor<double>& features, const std::vector<char>& valid, int k,
                    Rng& rng, int restarts = 10, int max_iters = 300, double tol = 1e-6);

enum class AriMode { FG, FULL };

// Adjusted Rand index; FG restricts both partitions to gt != 0. Empty
// foreground (or a single element) in FG mode returns nullopt.
std::optional<double> ari(const std::vector<int>& pred, const std::vector<int>& gt, AriMode mode);

struct Separability {
    double inter_min = 0.0;
    double inter_mean = 0.0;
    double intra = 0.0;
    bool skipped = false;  // fewer than two clusters
};

// Segment centroids/spread in the 6-dim phase feature space; segments are the
// labels >= 1 of `segments` by default (pass predicted labels to override).
Separability separability(const Tensor<double>& features, const std::vector<int>& segments);

struct ImageEval {
    int n_objects = 0;
    double mse = 0.0;
    std::optional<double> ari_fg;
    std::optional<double> ari_full;
    Separability sep;
    bool kmeans_fallback = false;
};

// One test image: cluster phases with K = number of gt objects, score.
// reconstruction/magnitude/phase: [3,H,W]; target from the scene.
ImageEval evaluate_image(const Tensor<float>& reconstruction, const Tensor<float>& magnitude,
                         const Tensor<float>& phase, const LabeledScene& scene,
                         const EvalConfig& cfg, Rng& rng,
                         std::vector<int>* pred_labels_out = nullptr);

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
    int n = 0;
};

Aggregate aggregate(const std::vector<double>& xs);

struct EvalReport {
    EvalConfig cfg;
    std::vector<ImageEval> per_image;
    Aggregate mse, ari_fg, ari_full, inter_min, inter_mean, intra;
    int kmeans_fallbacks = 0;
    int ari_fg_skipped = 0;
    int sep_skipped = 0;

    static EvalReport from_images(std::vector<ImageEval> imgs, const EvalConfig& cfg);
    // per-object-count sub-reports (Table 3-style split)
    std::vector<std::pair<int, EvalReport>> by_count() const;
    std::string to_json(bool include_per_image = false) const;
};

// Decoder outputs for one image, the model-agnostic evaluation input.
struct ImageOutput {
    Tensor<float> reconstruction;  // [3,H,W]
    Tensor<float> magnitude;       // [3,H,W]
    Tensor<float> phase;           // [3,H,W]
};

EvalReport evaluate(const std::vector<ImageOutput>& outputs,
                    const std::vector<LabeledScene>& scenes, const EvalConfig& cfg);

}  // namespace synb
