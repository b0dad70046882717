#include "synb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

namespace synb {
namespace {

using json = nlohmann::json;

constexpr int kDim = 6;

double sqdist(const double* a, const double* b) {
    double s = 0;
    for (int i = 0; i < kDim; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// one Lloyd run from a k-means++ start; returns inertia
double kmeans_run(const std::vector<const double*>& rows, int k, Rng& rng, int max_iters,
                  double tol, std::vector<double>& centroids) {
    const int n = static_cast<int>(rows.size());
    centroids.assign(static_cast<std::size_t>(k) * kDim, 0.0);

    // k-means++ seeding
    std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
    int first = rng.uniform_int(n);
    std::copy(rows[static_cast<std::size_t>(first)], rows[static_cast<std::size_t>(first)] + kDim,
              centroids.begin());
    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int j = 0; j < c; ++j)
                best = std::min(best, sqdist(rows[static_cast<std::size_t>(i)],
                                             centroids.data() + static_cast<std::size_t>(j) * kDim));
            d2[static_cast<std::size_t>(i)] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0) {
            double r = rng.uniform01() * total, acc = 0;
            for (int i = 0; i < n; ++i) {
                acc += d2[static_cast<std::size_t>(i)];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(n);
        }
        std::copy(rows[static_cast<std::size_t>(pick)], rows[static_cast<std::size_t>(pick)] + kDim,
                  centroids.begin() + static_cast<std::size_t>(c) * kDim);
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    double prev_inertia = std::numeric_limits<double>::max();
    double inertia = prev_inertia;
    for (int iter = 0; iter < max_iters; ++iter) {
        inertia = 0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int bj = 0;
            for (int j = 0; j < k; ++j) {
                const double d = sqdist(rows[static_cast<std::size_t>(i)],
                                        centroids.data() + static_cast<std::size_t>(j) * kDim);
                if (d < best) {
                    best = d;
                    bj = j;
                }
            }
            assign[static_cast<std::size_t>(i)] = bj;
            inertia += best;
        }
        std::vector<double> sum(static_cast<std::size_t>(k) * kDim, 0.0);
        std::vector<int> cnt(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            const int j = assign[static_cast<std::size_t>(i)];
            ++cnt[static_cast<std::size_t>(j)];
            for (int d = 0; d < kDim; ++d)
                sum[static_cast<std::size_t>(j) * kDim + d] += rows[static_cast<std::size_t>(i)][d];
        }
        for (int j = 0; j < k; ++j) {
            if (cnt[static_cast<std::size_t>(j)] == 0) {
                // empty cluster: reseed at the point farthest from its centroid
                int far = 0;
                double far_d = -1;
                for (int i = 0; i < n; ++i) {
                    const int ji = assign[static_cast<std::size_t>(i)];
                    const double d = sqdist(rows[static_cast<std::size_t>(i)],
                                            centroids.data() + static_cast<std::size_t>(ji) * kDim);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                std::copy(rows[static_cast<std::size_t>(far)],
                          rows[static_cast<std::size_t>(far)] + kDim,
                          centroids.begin() + static_cast<std::size_t>(j) * kDim);
            } else {
                for (int d = 0; d < kDim; ++d)
                    centroids[static_cast<std::size_t>(j) * kDim + d] =
                        sum[static_cast<std::size_t>(j) * kDim + d] / cnt[static_cast<std::size_t>(j)];
            }
        }
        if (prev_inertia - inertia < tol) break;
        prev_inertia = inertia;
    }
    return inertia;
}

double comb2(double n) { return n * (n - 1.0) / 2.0; }

json agg_json(const Aggregate& a) {
    return {{"mean", a.mean}, {"std", a.stddev}, {"n", a.n}};
}

}  // namespace

PhaseFeatures phase_features(const Tensor<float>& magnitude, const Tensor<float>& phase,
                             const EvalConfig& cfg) {
    check(magnitude.shape.size() == 3 && magnitude.shape[0] == 3,
          "phase_features: magnitude must be [3,H,W]");
    check(magnitude.shape == phase.shape, "phase_features: magnitude/phase shape mismatch");
    const int h = magnitude.shape[1], w = magnitude.shape[2];
    const long hw = static_cast<long>(h) * w;

    PhaseFeatures out;
    out.features = Tensor<double>({static_cast<int>(hw), kDim});
    out.valid.assign(static_cast<std::size_t>(hw), 1);
    for (long p = 0; p < hw; ++p) {
        double mean_mag = 0;
        bool any_above = false;
        for (int c = 0; c < 3; ++c) {
            const double m = magnitude.at(c * hw + p);
            const double ph = phase.at(c * hw + p);
            mean_mag += m / 3.0;
            if (cfg.threshold && m > *cfg.threshold) any_above = true;
            out.features.at(p * kDim + 2 * c) = std::cos(ph);
            out.features.at(p * kDim + 2 * c + 1) = std::sin(ph);
        }
        if (cfg.threshold) {
            const bool ok = cfg.valid_any_channel ? any_above : mean_mag > *cfg.threshold;
            out.valid[static_cast<std::size_t>(p)] = ok ? 1 : 0;
        }
    }
    return out;
}

KmeansResult kmeans(const Tensor<double>& features, const std::vector<char>& valid, int k,
                    Rng& rng, int restarts, int max_iters, double tol) {
    check(features.shape.size() == 2 && features.shape[1] == kDim, "kmeans: features must be [R,6]");
    check(k >= 1, "kmeans: K must be >= 1");
    const int n = features.shape[0];
    check(static_cast<int>(valid.size()) == n, "kmeans: valid mask size mismatch");

    KmeansResult res;
    std::vector<const double*> fit_rows;
    for (int i = 0; i < n; ++i)
        if (valid[static_cast<std::size_t>(i)])
            fit_rows.push_back(features.data() + static_cast<long>(i) * kDim);
    if (static_cast<int>(fit_rows.size()) < k) {
        res.fallback_all_rows = true;
        fit_rows.clear();
        for (int i = 0; i < n; ++i) fit_rows.push_back(features.data() + static_cast<long>(i) * kDim);
        check(n >= k, "kmeans: fewer rows than clusters");
    }

    std::vector<double> best_centroids;
    double best_inertia = std::numeric_limits<double>::max();
    for (int r = 0; r < restarts; ++r) {
        Rng run_rng = rng.child(static_cast<std::uint64_t>(r));
        std::vector<double> centroids;
        const double inertia = kmeans_run(fit_rows, k, run_rng, max_iters, tol, centroids);
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_centroids = std::move(centroids);
        }
    }

    res.inertia = best_inertia;
    res.labels.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        int bj = 0;
        for (int j = 0; j < k; ++j) {
            const double d = sqdist(features.data() + static_cast<long>(i) * kDim,
                                    best_centroids.data() + static_cast<std::size_t>(j) * kDim);
            if (d < best) {
                best = d;
                bj = j;
            }
        }
        res.labels[static_cast<std::size_t>(i)] = bj;
    }
    return res;
}

std::optional<double> ari(const std::vector<int>& pred, const std::vector<int>& gt, AriMode mode) {
    check(pred.size() == gt.size(), "ari: partition size mismatch");
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mode == AriMode::FULL || gt[i] != 0) pairs.emplace_back(pred[i], gt[i]);
    if (pairs.size() < 2) return std::nullopt;

    std::map<std::pair<int, int>, long> cell;
    std::map<int, long> row, col;
    for (const auto& [p, g] : pairs) {
        ++cell[{p, g}];
        ++row[p];
        ++col[g];
    }
    const double n = static_cast<double>(pairs.size());
    double sum_cells = 0, sum_rows = 0, sum_cols = 0;
    for (const auto& [k, v] : cell) sum_cells += comb2(static_cast<double>(v));
    for (const auto& [k, v] : row) sum_rows += comb2(static_cast<double>(v));
    for (const auto& [k, v] : col) sum_cols += comb2(static_cast<double>(v));
    const double total = comb2(n);
    const double expected = sum_rows * sum_cols / total;
    const double max_index = 0.5 * (sum_rows + sum_cols);
    if (std::abs(max_index - expected) < 1e-12) return 1.0;  // both partitions trivial
    return (sum_cells - expected) / (max_index - expected);
}

Separability separability(const Tensor<double>& features, const std::vector<int>& segments) {
    check(features.shape.size() == 2 && features.shape[1] == kDim,
          "separability: features must be [R,6]");
    check(static_cast<int>(segments.size()) == features.shape[0],
          "separability: segment size mismatch");

    std::map<int, std::vector<long>> members;
    for (long i = 0; i < static_cast<long>(segments.size()); ++i)
        if (segments[static_cast<std::size_t>(i)] >= 1)
            members[segments[static_cast<std::size_t>(i)]].push_back(i);

    Separability out;
    if (members.size() < 2) {
        out.skipped = true;
        return out;
    }

    std::vector<std::array<double, kDim>> centroids;
    std::vector<double> spreads;
    for (const auto& [label, idx] : members) {
        std::array<double, kDim> c{};
        for (long i : idx)
            for (int d = 0; d < kDim; ++d) c[static_cast<std::size_t>(d)] += features.at(i * kDim + d);
        for (auto& v : c) v /= static_cast<double>(idx.size());
        double spread = 0;
        for (long i : idx) {
            double s = 0;
            for (int d = 0; d < kDim; ++d) {
                const double diff = features.at(i * kDim + d) - c[static_cast<std::size_t>(d)];
                s += diff * diff;
            }
            spread += std::sqrt(s);
        }
        centroids.push_back(c);
        spreads.push_back(spread / static_cast<double>(idx.size()));
    }

    double inter_sum = 0;
    double inter_min = std::numeric_limits<double>::max();
    int pairs = 0;
    for (std::size_t a = 0; a < centroids.size(); ++a)
        for (std::size_t b = a + 1; b < centroids.size(); ++b) {
            const double d = std::sqrt(sqdist(centroids[a].data(), centroids[b].data()));
            inter_sum += d;
            inter_min = std::min(inter_min, d);
            ++pairs;
        }
    out.inter_mean = inter_sum / pairs;
    out.inter_min = inter_min;
    double intra = 0;
    for (double s : spreads) intra += s;
    out.intra = intra / static_cast<double>(spreads.size());
    return out;
}

ImageEval evaluate_image(const Tensor<float>& reconstruction, const Tensor<float>& magnitude,
                         const Tensor<float>& phase, const LabeledScene& scene,
                         const EvalConfig& cfg, Rng& rng, std::vector<int>* pred_labels_out) {
    check(reconstruction.shape == scene.image.shape, "evaluate_image: reconstruction shape mismatch");
    ImageEval out;
    out.n_objects = scene.meta.n_objects;

    double mse = 0;
    for (long i = 0; i < reconstruction.size(); ++i) {
        const double d = static_cast<double>(reconstruction.at(i)) - scene.image.at(i);
        mse += d * d;
    }
    out.mse = mse / static_cast<double>(reconstruction.size());

    auto pf = phase_features(magnitude, phase, cfg);
    // Below-threshold pixels are masked: their phase is zeroed, pinning them to
    // the common point (cos 0, sin 0) per channel so they form one coherent
    // cluster instead of scattering by ill-defined phase noise. All pixels
    // (masked included) participate in the K-means fit.
    Tensor<double> cluster_features = pf.features;
    if (cfg.threshold) {
        const long rows = cluster_features.shape[0];
        for (long p = 0; p < rows; ++p)
            if (!pf.valid[static_cast<std::size_t>(p)])
                for (int c = 0; c < 3; ++c) {
                    cluster_features.at(p * 6 + 2 * c) = 1.0;
                    cluster_features.at(p * 6 + 2 * c + 1) = 0.0;
                }
    }
    const std::vector<char> all_rows(static_cast<std::size_t>(cluster_features.shape[0]), 1);
    // K from the ground-truth mask: objects + background cluster
    const int k = scene.meta.n_objects + 1;
    auto km = kmeans(cluster_features, all_rows, k, rng, cfg.kmeans_restarts, cfg.kmeans_iters,
                     cfg.kmeans_tol);
    out.kmeans_fallback = km.fallback_all_rows;
    out.ari_fg = ari(km.labels, scene.mask, AriMode::FG);
    out.ari_full = ari(km.labels, scene.mask, AriMode::FULL);
    out.sep = separability(pf.features,
                           cfg.separability_on_predicted ? km.labels : scene.mask);
    if (pred_labels_out) *pred_labels_out = km.labels;
    return out;
}

Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    a.n = static_cast<int>(xs.size());
    if (a.n == 0) return a;
    for (double x : xs) a.mean += x;
    a.mean /= a.n;
    if (a.n > 1) {
        double s = 0;
        for (double x : xs) s += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(s / (a.n - 1));
    }
    return a;
}

EvalReport EvalReport::from_images(std::vector<ImageEval> imgs, const EvalConfig& cfg) {
    EvalReport r;
    r.cfg = cfg;
    r.per_image = std::move(imgs);
    std::vector<double> mse, afg, afull, imin, imean, intra;
    for (const auto& e : r.per_image) {
        mse.push_back(e.mse);
        if (e.ari_fg)
            afg.push_back(*e.ari_fg);
        else
            ++r.ari_fg_skipped;
        if (e.ari_full) afull.push_back(*e.ari_full);
        if (!e.sep.skipped) {
            imin.push_back(e.sep.inter_min);
            imean.push_back(e.sep.inter_mean);
            intra.push_back(e.sep.intra);
        } else {
            ++r.sep_skipped;
        }
        if (e.kmeans_fallback) ++r.kmeans_fallbacks;
    }
    r.mse = aggregate(mse);
    r.ari_fg = aggregate(afg);
    r.ari_full = aggregate(afull);
    r.inter_min = aggregate(imin);
    r.inter_mean = aggregate(imean);
    r.intra = aggregate(intra);
    return r;
}

std::vector<std::pair<int, EvalReport>> EvalReport::by_count() const {
    std::map<int, std::vector<ImageEval>> groups;
    for (const auto& e : per_image) groups[e.n_objects].push_back(e);
    std::vector<std::pair<int, EvalReport>> out;
    for (auto& [count, imgs] : groups)
        out.emplace_back(count, EvalReport::from_images(std::move(imgs), cfg));
    return out;
}

std::string EvalReport::to_json(bool include_per_image) const {
    json j = {{"threshold", cfg.threshold ? json(*cfg.threshold) : json("none")},
              {"n_images", static_cast<int>(per_image.size())},
              {"mse", agg_json(mse)},
              {"ari_fg", agg_json(ari_fg)},
              {"ari_full", agg_json(ari_full)},
              {"inter_min", agg_json(inter_min)},
              {"inter_mean", agg_json(inter_mean)},
              {"intra", agg_json(intra)},
              {"kmeans_fallbacks", kmeans_fallbacks},
              {"ari_fg_skipped", ari_fg_skipped},
              {"sep_skipped", sep_skipped}};
    if (include_per_image) {
        json arr = json::array();
        for (const auto& e : per_image)
            arr.push_back({{"objects", e.n_objects},
                           {"mse", e.mse},
                           {"ari_fg", e.ari_fg ? json(*e.ari_fg) : json()},
                           {"ari_full", e.ari_full ? json(*e.ari_full) : json()},
                           {"inter_min", e.sep.skipped ? json() : json(e.sep.inter_min)},
                           {"inter_mean", e.sep.skipped ? json() : json(e.sep.inter_mean)},
                           {"intra", e.sep.skipped ? json() : json(e.sep.intra)}});
        j["per_image"] = std::move(arr);
    }
    return j.dump(2);
}

EvalReport evaluate(const std::vector<ImageOutput>& outputs,
                    const std::vector<LabeledScene>& scenes, const EvalConfig& cfg) {
    check(outputs.size() == scenes.size(), "evaluate: outputs/scenes size mismatch");
    Rng root(cfg.seed);
    std::vector<ImageEval> imgs;
    imgs.reserve(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        Rng img_rng = root.child(static_cast<std::uint64_t>(i));
        imgs.push_back(evaluate_image(outputs[i].reconstruction, outputs[i].magnitude,
                                      outputs[i].phase, scenes[i], cfg, img_rng));
    }
    return EvalReport::from_images(std::move(imgs), cfg);
}

}  // namespace synb
