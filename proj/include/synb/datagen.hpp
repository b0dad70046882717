#pragma once

#include <array>
#include <string>
#include <vector>

#include "synb/rng.hpp"
#include "synb/tensor.hpp"

namespace synb {

enum class DatasetStyle { Tetrominoes, Dsprites };

inline std::string style_name(DatasetStyle s) {
    return s == DatasetStyle::Tetrominoes ? "tetrominoes" : "dsprites";
}

struct SceneMeta {
    int n_objects = 0;
    std::vector<std::string> shapes;                // one entry per object
    std::vector<std::array<float, 3>> colors;       // pre-quantization RGB in [0,1]
    float background = 0.0f;                        // gray level (0 for tetrominoes)
};

// image: [3,H,W] floats in [0,1]; mask: H*W labels, 0 = background, 1..K objects
struct LabeledScene {
    Tensor<float> image;
    std::vector<int> mask;
    SceneMeta meta;

    int height() const { return image.shape[1]; }
    int width() const { return image.shape[2]; }
};

struct DatasetSpec {
    DatasetStyle style = DatasetStyle::Tetrominoes;
    int resolution = 32;
    int min_objects = 3;  // tetrominoes default 3; dsprites uses 2..5
    int max_objects = 3;
    int n_train = 5000;
    int n_test = 320;
    std::uint64_t seed = 0;

    void validate() const;
    static DatasetSpec defaults(DatasetStyle style);
};

struct Dataset {
    DatasetSpec spec;
    std::vector<LabeledScene> train;
    std::vector<LabeledScene> test;
};

// Both generators are deterministic: spec+seed fully determines the result.
// Train and test use disjoint per-scene rng streams.
Dataset generate_tetrominoes(const DatasetSpec& spec);
Dataset generate_dsprites(const DatasetSpec& spec);
Dataset generate(const DatasetSpec& spec);  // dispatch on spec.style

// meta.json + images/NNNNN.png (8-bit RGB) + masks/NNNNN.png (grayscale,
// pixel value = label). Train scenes first, then test, one shared numbering.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// Scenes whose object count matches (both splits filtered).
Dataset filter_by_count(const Dataset& ds, int n_objects);

// [N,3,H,W] batch tensor from dataset scenes at the given indices.
Tensor<float> batch_images(const std::vector<LabeledScene>& scenes, const std::vector<int>& idx);

}  // namespace synb
