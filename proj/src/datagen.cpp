#include "synb/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "synb/png_io.hpp"

namespace synb {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- tetrominoes

// the five free tetrominoes on a cell grid
struct TetShape {
    const char* name;
    std::array<std::array<int, 2>, 4> cells;  // (row, col)
};

constexpr std::array<TetShape, 5> kTetrominoes = {{
    {"I", {{{0, 0}, {0, 1}, {0, 2}, {0, 3}}}},
    {"O", {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}}},
    {"T", {{{0, 0}, {0, 1}, {0, 2}, {1, 1}}}},
    {"S", {{{0, 1}, {0, 2}, {1, 0}, {1, 1}}}},
    {"L", {{{0, 0}, {1, 0}, {2, 0}, {2, 1}}}},
}};

// saturated palette; repeats across objects are allowed by sampling with
// replacement
constexpr std::array<std::array<float, 3>, 8> kPalette = {{
    {1.0f, 0.0f, 0.0f},
    {0.0f, 1.0f, 0.0f},
    {0.0f, 0.0f, 1.0f},
    {1.0f, 1.0f, 0.0f},
    {1.0f, 0.0f, 1.0f},
    {0.0f, 1.0f, 1.0f},
    {1.0f, 0.5f, 0.0f},
    {0.6f, 0.2f, 1.0f},
}};

std::vector<std::array<int, 2>> transformed_cells(const TetShape& shape, int rot, bool mirror) {
    std::vector<std::array<int, 2>> cells(shape.cells.begin(), shape.cells.end());
    for (auto& c : cells) {
        if (mirror) c[1] = -c[1];
        for (int r = 0; r < rot; ++r) {
            const int row = c[0], col = c[1];
            c[0] = col;
            c[1] = -row;
        }
    }
    int min_r = cells[0][0], min_c = cells[0][1];
    for (const auto& c : cells) {
        min_r = std::min(min_r, c[0]);
        min_c = std::min(min_c, c[1]);
    }
    for (auto& c : cells) {
        c[0] -= min_r;
        c[1] -= min_c;
    }
    return cells;
}

LabeledScene make_tetromino_scene(const DatasetSpec& spec, Rng& rng) {
    const int res = spec.resolution;
    for (int scene_try = 0; scene_try < 64; ++scene_try) {
        LabeledScene s;
        s.image = Tensor<float>({3, res, res});
        s.mask.assign(static_cast<std::size_t>(res) * res, 0);
        s.meta.n_objects =
            spec.min_objects + rng.uniform_int(spec.max_objects - spec.min_objects + 1);
        bool ok = true;
        for (int obj = 1; obj <= s.meta.n_objects && ok; ++obj) {
            bool placed = false;
            for (int attempt = 0; attempt < 128 && !placed; ++attempt) {
                const auto& shape = kTetrominoes[static_cast<std::size_t>(rng.uniform_int(5))];
                auto cells = transformed_cells(shape, rng.uniform_int(4), rng.uniform_int(2) == 1);
                const int cell = 2 + rng.uniform_int(3);  // block size 2..4 pixels
                int max_r = 0, max_c = 0;
                for (const auto& c : cells) {
                    max_r = std::max(max_r, c[0]);
                    max_c = std::max(max_c, c[1]);
                }
                const int span_h = (max_r + 1) * cell, span_w = (max_c + 1) * cell;
                if (span_h > res || span_w > res) continue;
                const int oy = rng.uniform_int(res - span_h + 1);
                const int ox = rng.uniform_int(res - span_w + 1);
                bool overlap = false;
                for (const auto& c : cells)
                    for (int i = 0; i < cell && !overlap; ++i)
                        for (int j = 0; j < cell && !overlap; ++j)
                            if (s.mask[(oy + c[0] * cell + i) * res + ox + c[1] * cell + j] != 0)
                                overlap = true;
                if (overlap) continue;
                const auto color = kPalette[static_cast<std::size_t>(rng.uniform_int(8))];
                for (const auto& c : cells)
                    for (int i = 0; i < cell; ++i)
                        for (int j = 0; j < cell; ++j) {
                            const int y = oy + c[0] * cell + i, x = ox + c[1] * cell + j;
                            s.mask[y * res + x] = obj;
                            for (int ch = 0; ch < 3; ++ch)
                                s.image.at((ch * res + y) * res + x) = color[ch];
                        }
                s.meta.shapes.push_back(shape.name);
                s.meta.colors.push_back(color);
                placed = true;
            }
            if (!placed) ok = false;
        }
        if (ok) return s;
    }
    throw std::runtime_error("generate_tetrominoes: placement failed after bounded retries");
}

// ------------------------------------------------------------------ dsprites

struct SpriteParams {
    int kind = 0;  // 0 heart, 1 square, 2 ellipse
    double cx = 0, cy = 0, scale = 0, angle = 0;
};

const char* sprite_name(int kind) {
    return kind == 0 ? "heart" : kind == 1 ? "square" : "ellipse";
}

// hard-edged membership test at pixel centers, no anti-aliasing
bool sprite_contains(const SpriteParams& p, double px, double py) {
    const double dx = px - p.cx, dy = py - p.cy;
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    const double x = (dx * ca + dy * sa) / p.scale;
    const double y = (-dx * sa + dy * ca) / p.scale;
    switch (p.kind) {
        case 0: {  // implicit heart curve, y up
            const double xs = x * 1.25, ys = -y * 1.25 + 0.2;
            const double q = xs * xs + ys * ys - 1.0;
            return q * q * q - xs * xs * ys * ys * ys <= 0.0;
        }
        case 1: return std::abs(x) <= 1.0 && std::abs(y) <= 1.0;
        default: return x * x + y * y / (0.6 * 0.6) <= 1.0;  // ellipse
    }
}

std::array<float, 3> hsv_color(Rng& rng) {
    const double h = rng.uniform(0.0, 6.0), s = rng.uniform(0.6, 1.0), v = rng.uniform(0.6, 1.0);
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r, g, b;
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

LabeledScene make_dsprites_scene(const DatasetSpec& spec, Rng& rng) {
    const int res = spec.resolution;
    for (int scene_try = 0; scene_try < 64; ++scene_try) {
        LabeledScene s;
        s.meta.background = static_cast<float>(rng.uniform(0.15, 0.55));
        s.image = Tensor<float>::full({3, res, res}, s.meta.background);
        s.mask.assign(static_cast<std::size_t>(res) * res, 0);
        s.meta.n_objects =
            spec.min_objects + rng.uniform_int(spec.max_objects - spec.min_objects + 1);
        // later objects paint over earlier ones (occlusion)
        for (int obj = 1; obj <= s.meta.n_objects; ++obj) {
            SpriteParams p;
            p.kind = rng.uniform_int(3);
            p.scale = rng.uniform(0.1, 0.22) * res;
            p.cx = rng.uniform(p.scale, res - p.scale);
            p.cy = rng.uniform(p.scale, res - p.scale);
            p.angle = rng.uniform(0.0, 2 * 3.14159265358979323846);
            const auto color = hsv_color(rng);
            for (int y = 0; y < res; ++y)
                for (int x = 0; x < res; ++x)
                    if (sprite_contains(p, x + 0.5, y + 0.5)) {
                        s.mask[y * res + x] = obj;
                        for (int ch = 0; ch < 3; ++ch)
                            s.image.at((ch * res + y) * res + x) = color[ch];
                    }
            s.meta.shapes.push_back(sprite_name(p.kind));
            s.meta.colors.push_back(color);
        }
        // every object must stay visible after occlusion
        std::vector<int> visible(static_cast<std::size_t>(s.meta.n_objects) + 1, 0);
        for (int label : s.mask) ++visible[static_cast<std::size_t>(label)];
        bool ok = true;
        for (int obj = 1; obj <= s.meta.n_objects; ++obj)
            if (visible[static_cast<std::size_t>(obj)] < 8) ok = false;
        if (ok) return s;
    }
    throw std::runtime_error("generate_dsprites: visibility failed after bounded retries");
}

Dataset generate_with(const DatasetSpec& spec,
                      LabeledScene (*make_scene)(const DatasetSpec&, Rng&)) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    Rng root(spec.seed);
    ds.train.reserve(static_cast<std::size_t>(spec.n_train));
    ds.test.reserve(static_cast<std::size_t>(spec.n_test));
    for (int i = 0; i < spec.n_train; ++i) {
        Rng scene_rng = root.child(0, static_cast<std::uint64_t>(i));
        ds.train.push_back(make_scene(spec, scene_rng));
    }
    for (int i = 0; i < spec.n_test; ++i) {
        Rng scene_rng = root.child(1, static_cast<std::uint64_t>(i));
        ds.test.push_back(make_scene(spec, scene_rng));
    }
    return ds;
}

std::string scene_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", i);
    return buf;
}

std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_scene(const LabeledScene& s, const std::string& dir, int index) {
    const int res = s.width();
    Image8 img{res, res, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(res) * res * 3)};
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = quantize(s.image.at((c * res + y) * res + x));
    png_write(dir + "/images/" + scene_id(index) + ".png", img);

    Image8 msk{res, res, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(res) * res)};
    for (int i = 0; i < res * res; ++i)
        msk.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(s.mask[static_cast<std::size_t>(i)]);
    png_write(dir + "/masks/" + scene_id(index) + ".png", msk);
}

LabeledScene read_scene(const std::string& dir, int index, const json& meta, int resolution) {
    const std::string id = scene_id(index);
    Image8 img = png_read(dir + "/images/" + id + ".png");
    Image8 msk = png_read(dir + "/masks/" + id + ".png");
    check(img.channels == 3 && msk.channels == 1, "read_dataset: wrong channel counts for " + id);
    check(img.width == resolution && img.height == resolution && msk.width == resolution &&
              msk.height == resolution,
          "read_dataset: resolution mismatch for " + id);

    LabeledScene s;
    const int res = resolution;
    s.image = Tensor<float>({3, res, res});
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
            for (int c = 0; c < 3; ++c)
                s.image.at((c * res + y) * res + x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
    s.mask.resize(static_cast<std::size_t>(res) * res);
    for (std::size_t i = 0; i < s.mask.size(); ++i) s.mask[i] = msk.pixels[i];

    s.meta.n_objects = meta.at("objects").get<int>();
    for (const auto& name : meta.at("shapes")) s.meta.shapes.push_back(name.get<std::string>());
    for (const auto& col : meta.at("colors"))
        s.meta.colors.push_back({col[0].get<float>(), col[1].get<float>(), col[2].get<float>()});
    s.meta.background = meta.at("background").get<float>();

    // labels 1..K must all be present (no gaps)
    std::vector<int> seen(static_cast<std::size_t>(s.meta.n_objects) + 1, 0);
    for (int label : s.mask) {
        check(label <= s.meta.n_objects, "read_dataset: mask label out of range in " + id);
        ++seen[static_cast<std::size_t>(label)];
    }
    for (int k = 1; k <= s.meta.n_objects; ++k)
        check(seen[static_cast<std::size_t>(k)] > 0, "read_dataset: label gap in " + id);
    return s;
}

json scene_meta_json(const LabeledScene& s, const std::string& split) {
    json colors = json::array();
    for (const auto& c : s.meta.colors) colors.push_back({c[0], c[1], c[2]});
    return {{"split", split},
            {"objects", s.meta.n_objects},
            {"shapes", s.meta.shapes},
            {"colors", colors},
            {"background", s.meta.background}};
}

}  // namespace

void DatasetSpec::validate() const {
    check(resolution > 0, "dataset: resolution must be positive");
    check(min_objects >= 1 && min_objects <= max_objects, "dataset: bad object count range");
    check(max_objects <= 255, "dataset: labels must fit 8-bit masks");
    check(n_train >= 0 && n_test >= 0, "dataset: negative split size");
}

DatasetSpec DatasetSpec::defaults(DatasetStyle style) {
    DatasetSpec s;
    s.style = style;
    if (style == DatasetStyle::Dsprites) {
        s.min_objects = 2;
        s.max_objects = 5;
    }
    return s;
}

Dataset generate_tetrominoes(const DatasetSpec& spec) {
    check(spec.style == DatasetStyle::Tetrominoes, "generate_tetrominoes: wrong style");
    return generate_with(spec, make_tetromino_scene);
}

Dataset generate_dsprites(const DatasetSpec& spec) {
    check(spec.style == DatasetStyle::Dsprites, "generate_dsprites: wrong style");
    return generate_with(spec, make_dsprites_scene);
}

Dataset generate(const DatasetSpec& spec) {
    return spec.style == DatasetStyle::Tetrominoes ? generate_tetrominoes(spec)
                                                   : generate_dsprites(spec);
}

void write_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir + "/images");
    fs::create_directories(dir + "/masks");

    json scenes = json::array();
    int index = 0;
    for (const auto& s : ds.train) {
        write_scene(s, dir, index++);
        scenes.push_back(scene_meta_json(s, "train"));
    }
    for (const auto& s : ds.test) {
        write_scene(s, dir, index++);
        scenes.push_back(scene_meta_json(s, "test"));
    }

    json meta = {{"style", style_name(ds.spec.style)},
                 {"resolution", ds.spec.resolution},
                 {"min_objects", ds.spec.min_objects},
                 {"max_objects", ds.spec.max_objects},
                 {"n_train", static_cast<int>(ds.train.size())},
                 {"n_test", static_cast<int>(ds.test.size())},
                 {"seed", ds.spec.seed},
                 {"scenes", std::move(scenes)}};
    std::ofstream f(dir + "/meta.json");
    check(static_cast<bool>(f), "write_dataset: cannot open " + dir + "/meta.json");
    f << meta.dump(2) << "\n";
}

Dataset read_dataset(const std::string& dir) {
    std::ifstream f(dir + "/meta.json");
    check(static_cast<bool>(f), "read_dataset: missing " + dir + "/meta.json");
    json meta;
    try {
        f >> meta;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("read_dataset: malformed meta.json: ") + e.what());
    }

    Dataset ds;
    const std::string style = meta.at("style").get<std::string>();
    check(style == "tetrominoes" || style == "dsprites", "read_dataset: unknown style " + style);
    ds.spec.style = style == "tetrominoes" ? DatasetStyle::Tetrominoes : DatasetStyle::Dsprites;
    ds.spec.resolution = meta.at("resolution").get<int>();
    ds.spec.min_objects = meta.at("min_objects").get<int>();
    ds.spec.max_objects = meta.at("max_objects").get<int>();
    ds.spec.n_train = meta.at("n_train").get<int>();
    ds.spec.n_test = meta.at("n_test").get<int>();
    ds.spec.seed = meta.at("seed").get<std::uint64_t>();
    ds.spec.validate();

    const auto& scenes = meta.at("scenes");
    check(static_cast<int>(scenes.size()) == ds.spec.n_train + ds.spec.n_test,
          "read_dataset: scene count mismatch between meta.json and splits");
    int index = 0;
    for (const auto& sm : scenes) {
        LabeledScene s = read_scene(dir, index, sm, ds.spec.resolution);
        const std::string split = sm.at("split").get<std::string>();
        check(split == "train" || split == "test", "read_dataset: bad split tag");
        (split == "train" ? ds.train : ds.test).push_back(std::move(s));
        ++index;
    }
    check(static_cast<int>(ds.train.size()) == ds.spec.n_train &&
              static_cast<int>(ds.test.size()) == ds.spec.n_test,
          "read_dataset: split sizes disagree with meta.json");
    return ds;
}

Dataset filter_by_count(const Dataset& ds, int n_objects) {
    Dataset out;
    out.spec = ds.spec;
    for (const auto& s : ds.train)
        if (s.meta.n_objects == n_objects) out.train.push_back(s);
    for (const auto& s : ds.test)
        if (s.meta.n_objects == n_objects) out.test.push_back(s);
    out.spec.n_train = static_cast<int>(out.train.size());
    out.spec.n_test = static_cast<int>(out.test.size());
    return out;
}

Tensor<float> batch_images(const std::vector<LabeledScene>& scenes, const std::vector<int>& idx) {
    check(!idx.empty(), "batch_images: empty index list");
    const int res = scenes.at(0).width();
    Tensor<float> out({static_cast<int>(idx.size()), 3, res, res});
    const long per = 3L * res * res;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& img = scenes.at(static_cast<std::size_t>(idx[b])).image;
        check(img.size() == per, "batch_images: inconsistent scene size");
        std::copy(img.v.begin(), img.v.end(), out.v.begin() + static_cast<long>(b) * per);
    }
    return out;
}

}  // namespace synb
