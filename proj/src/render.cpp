#include "synb/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "synb/png_io.hpp"

namespace synb {
namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image8 rgb_canvas(int h, int w, std::uint8_t fill = 0) {
    return {w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3, fill)};
}

// [3,H,W] float planes -> interleaved 8-bit
Image8 planes_to_image(const Tensor<float>& t) {
    const int h = t.shape[1], w = t.shape[2];
    Image8 img = rgb_canvas(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = to_byte(t.at((static_cast<long>(c) * h + y) * w + x));
    return img;
}

Image8 labels_to_image(const std::vector<int>& labels, int h, int w) {
    Image8 img = rgb_canvas(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto col = label_color(labels[static_cast<std::size_t>(y) * w + x]);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[static_cast<std::size_t>(c)];
        }
    return img;
}

// hue wheel for phases: (-pi, pi] -> rgb
std::array<std::uint8_t, 3> phase_color(double phi) {
    const double h = (phi + std::numbers::pi) / (2 * std::numbers::pi) * 6.0;  // [0,6)
    const int i = std::min(5, static_cast<int>(h));
    const double f = h - i;
    const double q = 1 - f;
    double r = 0, g = 0, b = 0;
    switch (i) {
        case 0: r = 1; g = f; break;
        case 1: r = q; g = 1; break;
        case 2: g = 1; b = f; break;
        case 3: g = q; b = 1; break;
        case 4: r = f; b = 1; break;
        default: r = 1; b = q; break;
    }
    return {to_byte(r), to_byte(g), to_byte(b)};
}

double mean_channel(const Tensor<float>& t, int y, int x) {
    const int h = t.shape[1], w = t.shape[2];
    double s = 0;
    for (int c = 0; c < 3; ++c) s += t.at((static_cast<long>(c) * h + y) * w + x);
    return s / 3.0;
}

// circular mean of the three channel phases at one pixel
double mean_phase(const Tensor<float>& phase, int y, int x) {
    const int h = phase.shape[1], w = phase.shape[2];
    double sc = 0, ss = 0;
    for (int c = 0; c < 3; ++c) {
        const double p = phase.at((static_cast<long>(c) * h + y) * w + x);
        sc += std::cos(p);
        ss += std::sin(p);
    }
    return std::atan2(ss, sc);
}

}  // namespace

std::array<std::uint8_t, 3> label_color(int label) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 10> kColors = {{
        {60, 60, 60},     // background
        {230, 60, 60},
        {60, 200, 60},
        {70, 90, 240},
        {240, 220, 60},
        {220, 60, 220},
        {60, 220, 220},
        {240, 140, 40},
        {150, 80, 220},
        {160, 220, 120},
    }};
    return kColors[static_cast<std::size_t>(label) % kColors.size()];
}

void render_scene(const LabeledScene& scene, const ImageOutput& output,
                  const std::vector<int>& pred_labels, const std::string& out_dir,
                  const std::string& scene_name) {
    const int res = scene.width();
    check(static_cast<int>(pred_labels.size()) == res * res,
          "render_scene: pred label count mismatch");
    auto path = [&](const std::string& panel) {
        return out_dir + "/" + scene_name + "_" + panel + ".png";
    };

    png_write(path("input"), planes_to_image(scene.image));
    png_write(path("gt"), labels_to_image(scene.mask, res, res));
    png_write(path("recon"), planes_to_image(output.reconstruction));
    png_write(path("grouping"), labels_to_image(pred_labels, res, res));

    // averaged-phase heatmap and magnitude panel
    Image8 phase_img = rgb_canvas(res, res);
    Image8 mag_img = rgb_canvas(res, res);
    double max_mag = 1e-9;
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) max_mag = std::max(max_mag, mean_channel(output.magnitude, y, x));
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const auto col = phase_color(mean_phase(output.phase, y, x));
            const std::uint8_t m = to_byte(mean_channel(output.magnitude, y, x) / max_mag);
            for (int c = 0; c < 3; ++c) {
                phase_img.at(y, x, c) = col[static_cast<std::size_t>(c)];
                mag_img.at(y, x, c) = m;
            }
        }
    png_write(path("phase_mean"), phase_img);
    png_write(path("magnitude"), mag_img);

    // radial scatter: each pixel plotted at angle = mean phase, radius
    // proportional to mean magnitude, colored by its gt label
    const int side = 128;
    Image8 scatter = rgb_canvas(side, side, 15);
    const double cx = side / 2.0, cy = side / 2.0, radius = side / 2.0 - 2;
    // faint unit circle
    for (int a = 0; a < 720; ++a) {
        const double t = a * std::numbers::pi / 360.0;
        const int x = static_cast<int>(cx + radius * std::cos(t));
        const int y = static_cast<int>(cy + radius * std::sin(t));
        if (x >= 0 && x < side && y >= 0 && y < side)
            for (int c = 0; c < 3; ++c) scatter.at(y, x, c) = 80;
    }
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const double phi = mean_phase(output.phase, y, x);
            const double r = std::clamp(mean_channel(output.magnitude, y, x) / max_mag, 0.0, 1.0);
            const int px = static_cast<int>(cx + r * radius * std::cos(phi));
            const int py = static_cast<int>(cy - r * radius * std::sin(phi));
            if (px < 0 || px >= side || py < 0 || py >= side) continue;
            const auto col = label_color(scene.mask[static_cast<std::size_t>(y) * res + x]);
            for (int c = 0; c < 3; ++c) scatter.at(py, px, c) = col[static_cast<std::size_t>(c)];
        }
    png_write(path("phase_scatter"), scatter);
}

}  // namespace synb
