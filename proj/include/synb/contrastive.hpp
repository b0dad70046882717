#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "synb/complex.hpp"
#include "synb/ops.hpp"
#include "synb/rng.hpp"

namespace synb {

enum class Role { Magnitude, Phase };
enum class ContrastSite { Enc, Dec, EncDec };

struct SiteConfig {
    int n_anchors = 4;
    int k_top = 1;
    int m_bottom = 2;
    int n_negatives = 2;  // M - 1
    int patch_size = 1;
    Role address_role = Role::Magnitude;
    Role feature_role = Role::Phase;
};

struct ContrastiveConfig {
    double tau = 0.05;
    double beta = 1e-4;
    ContrastSite site = ContrastSite::EncDec;
    SiteConfig enc{4, 1, 2, 2, 1, Role::Magnitude, Role::Phase};
    SiteConfig dec{100, 5, 500, 100, 1, Role::Magnitude, Role::Phase};
    bool exclude_self = false;  // Alg. 1 keeps the anchor's own row; optional override

    void validate(int enc_rows, int dec_rows) const {
        auto site_ok = [](const SiteConfig& s, int rows) {
            check(s.k_top >= 1 && s.k_top <= s.m_bottom, "contrastive: need 1 <= k_top <= m_bottom");
            check(s.m_bottom <= rows, "contrastive: m_bottom exceeds datapoints");
            check(s.n_negatives <= s.m_bottom, "contrastive: M-1 exceeds m_bottom");
            check(s.n_anchors <= rows, "contrastive: more anchors than datapoints");
            check(s.address_role != s.feature_role, "contrastive: address and feature roles must differ");
        };
        if (site != ContrastSite::Dec) site_ok(enc, enc_rows);
        if (site != ContrastSite::Enc) site_ok(dec, dec_rows);
    }
};

// Non-overlapping p x p tiling of a [C, h, w] map. Row r = (pr, pc) in
// row-major patch order; within a row the layout is channel-major then the
// p x p block row-major. Returns flat source indices per row.
inline std::vector<long> patch_grid_indices(int c, int h, int w, int p) {
    check(p >= 1 && h % p == 0 && w % p == 0, "patch size must tile the spatial extent");
    const int gh = h / p, gw = w / p;
    std::vector<long> idx;
    idx.reserve(static_cast<std::size_t>(gh) * gw * c * p * p);
    for (int pr = 0; pr < gh; ++pr)
        for (int pc = 0; pc < gw; ++pc)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < p; ++j)
                        idx.push_back((static_cast<long>(ch) * h + pr * p + i) * w + pc * p + j);
    return idx;
}

// [R, C*p*p] matrix of patch rows from one view of a single-image map.
template <typename T>
Var<T> extract_patch_rows(const ComplexMap<T>& map, Role role, int p) {
    const auto& s = role == Role::Magnitude ? map.mag.shape() : map.phase.shape();
    check(s.size() == 3, "extract_patch_rows wants a single-image [C,h,w] map");
    const int c = s[0], h = s[1], w = s[2];
    auto idx = patch_grid_indices(c, h, w, p);
    const int rows = (h / p) * (w / p);
    const Var<T>& src = role == Role::Magnitude ? map.mag : map.phase;
    return index_select_flat(src, std::move(idx), {rows, c * p * p});
}

// Uniform sample without replacement, deterministic under the rng stream.
inline std::vector<int> sample_anchors(int rows, int n_anchors, Rng& rng) {
    check(n_anchors <= rows, "sample_anchors: N_A exceeds datapoints");
    return rng.sample_without_replacement(rows, n_anchors);
}

struct MinedPair {
    int anchor = 0;
    int positive = 0;
    std::vector<int> negatives;
    // candidate sets, exposed for oracle comparison
    std::vector<int> top_k;
    std::vector<int> bottom_m;
};

// Mining for one anchor. Distances are cosine distances between address
// rows; ties break by stable ascending index. The anchor's own row stays in
// the candidate pool unless exclude_self is set.
template <typename T>
MinedPair mine_pairs(int anchor_row, const Tensor<T>& addresses, int k_top, int m_bottom,
                     int n_negatives, Rng& rng, bool exclude_self = false) {
    check(addresses.shape.size() == 2, "mine_pairs wants [R,D] addresses");
    const int rows = addresses.shape[0];
    const long d = addresses.shape[1];
    check(k_top >= 1 && k_top <= m_bottom, "mine_pairs: need 1 <= k_top <= m_bottom");
    check(n_negatives <= m_bottom, "mine_pairs: M-1 exceeds m_bottom");

    const T* anchor = addresses.data() + static_cast<long>(anchor_row) * d;
    std::vector<std::pair<double, int>> dist;
    dist.reserve(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        if (exclude_self && r == anchor_row) continue;
        dist.emplace_back(cosine_distance_value(anchor, addresses.data() + static_cast<long>(r) * d, d), r);
    }
    check(m_bottom <= static_cast<int>(dist.size()), "mine_pairs: m_bottom exceeds candidates");
    std::stable_sort(dist.begin(), dist.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    MinedPair out;
    out.anchor = anchor_row;
    for (int i = 0; i < k_top; ++i) out.top_k.push_back(dist[static_cast<std::size_t>(i)].second);
    for (int i = 0; i < m_bottom; ++i)
        out.bottom_m.push_back(dist[dist.size() - 1 - static_cast<std::size_t>(i)].second);
    out.positive = out.top_k[static_cast<std::size_t>(rng.uniform_int(k_top))];
    for (int pick : rng.sample_without_replacement(m_bottom, n_negatives))
        out.negatives.push_back(out.bottom_m[static_cast<std::size_t>(pick)]);
    return out;
}

// Eq-style InfoNCE over mined pairs:
//   L = (1/N_A) sum_k [ d(A_k, P^k_1)/tau - logsumexp_j d(A_k, P^k_j)/tau ]
// Minimizing pulls the positive distance down and pushes negatives up.
// features: [R, D] differentiable rows; mining indices carry no gradient.
template <typename T>
Var<T> info_nce(const Var<T>& features, const std::vector<MinedPair>& mined, double tau) {
    check(tau > 0, "info_nce: tau must be positive");
    std::vector<Var<T>> per_anchor;
    per_anchor.reserve(mined.size());
    for (const auto& m : mined) {
        std::vector<int> anchor_row = {m.anchor};
        auto a = gather_rows(features, anchor_row);
        std::vector<Var<T>> logits;
        logits.reserve(m.negatives.size() + 1);
        auto pos = cosine_distance(a, gather_rows(features, {m.positive}));
        logits.push_back(mul_scalar(pos, static_cast<T>(1.0 / tau)));
        for (int neg : m.negatives)
            logits.push_back(mul_scalar(cosine_distance(a, gather_rows(features, {neg})),
                                        static_cast<T>(1.0 / tau)));
        per_anchor.push_back(sub(logits[0], logsumexp(stack_scalars(logits))));
    }
    return mean_all(stack_scalars(per_anchor));
}

// One site of one image: build rows, sample anchors, mine, score.
template <typename T>
Var<T> site_loss(const ComplexMap<T>& map, const SiteConfig& cfg, double tau, Rng& rng,
                 bool exclude_self) {
    auto addresses = extract_patch_rows(map, cfg.address_role, cfg.patch_size).detach();
    auto features = extract_patch_rows(map, cfg.feature_role, cfg.patch_size);
    const int rows = addresses.shape()[0];
    auto anchors = sample_anchors(rows, cfg.n_anchors, rng);
    std::vector<MinedPair> mined;
    mined.reserve(anchors.size());
    for (int a : anchors)
        mined.push_back(mine_pairs(a, addresses.val(), cfg.k_top, cfg.m_bottom, cfg.n_negatives,
                                   rng, exclude_self));
    return info_nce(features, mined, tau);
}

// Slice image b from a batched [N,C,...] complex map.
template <typename T>
ComplexMap<T> batch_slice(const ComplexMap<T>& map, int b) {
    const auto& s = map.mag.shape();
    Shape sub(s.begin() + 1, s.end());
    const long stride = numel(sub);
    std::vector<long> idx(static_cast<std::size_t>(stride));
    std::iota(idx.begin(), idx.end(), static_cast<long>(b) * stride);
    auto idx2 = idx;
    return {index_select_flat(map.mag, std::move(idx), sub),
            index_select_flat(map.phase, std::move(idx2), sub)};
}

// Mining runs per image; site losses average within an image, then over the
// batch. enc+dec combines the two site losses with equal weight.
template <typename T>
Var<T> contrastive_loss(const ComplexMap<T>& enc_feat, const ComplexMap<T>& dec_out,
                        const ContrastiveConfig& cfg, Rng& rng) {
    const int n = enc_feat.mag.shape()[0];
    check(dec_out.mag.shape()[0] == n, "contrastive_loss: batch mismatch");
    std::vector<Var<T>> per_image;
    per_image.reserve(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
        Rng enc_rng = rng.child(static_cast<std::uint64_t>(b), 0);
        Rng dec_rng = rng.child(static_cast<std::uint64_t>(b), 1);
        std::vector<Var<T>> sites;
        if (cfg.site != ContrastSite::Dec)
            sites.push_back(site_loss(batch_slice(enc_feat, b), cfg.enc, cfg.tau, enc_rng,
                                      cfg.exclude_self));
        if (cfg.site != ContrastSite::Enc)
            sites.push_back(site_loss(batch_slice(dec_out, b), cfg.dec, cfg.tau, dec_rng,
                                      cfg.exclude_self));
        per_image.push_back(mean_all(stack_scalars(sites)));
    }
    return mean_all(stack_scalars(per_image));
}

}  // namespace synb
