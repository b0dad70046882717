#pragma once

#include <string>
#include <utility>
#include <vector>

#include "synb/complex.hpp"
#include "synb/contrastive.hpp"

namespace synb {

enum class Variant { CAE, CAEpp, CtCAE };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::CAE: return "cae";
        case Variant::CAEpp: return "cae++";
        case Variant::CtCAE: return "ctcae";
    }
    return "?";
}

struct ModelConfig {
    Variant variant = Variant::CAEpp;
    int resolution = 32;  // 32 | 64 | 96
    int c1 = 128;         // first conv width (paper 128, desk preset 32)
    int c2 = 256;         // deep conv width / bottleneck (paper 256, desk 64)
    std::uint64_t seed = 0;

    // architecture switches behind the variant names; each one can also be
    // toggled individually for the ablation grid
    bool use_fout_conv = false;     // 1x1 conv output layer
    bool use_fout_sigmoid = false;  // sigmoid on the output magnitude
    bool use_transposed_conv = false;

    ContrastiveConfig contrastive;  // beta forced to 0 unless CtCAE

    static ModelConfig for_variant(Variant v) {
        ModelConfig c;
        c.variant = v;
        if (v == Variant::CAE) {
            c.use_fout_conv = true;
            c.use_fout_sigmoid = true;
            c.use_transposed_conv = true;
        }
        if (v != Variant::CtCAE) c.contrastive.beta = 0.0;
        return c;
    }

    int code_dim() const { return c2; }
    int enc_spatial() const { return resolution == 96 ? 6 : 4; }
    bool extra_blocks() const { return resolution >= 64; }
};

template <typename T>
struct LossBreakdown {
    Var<T> total;
    Var<T> mse;
    Var<T> contrastive;  // undefined Var when beta == 0
    double beta = 0.0;
};

template <typename T>
struct ForwardResult {
    Var<T> reconstruction;   // |y| (post-sigmoid for the CAE output layer)
    ComplexMap<T> enc_feat;  // last encoder conv output (contrastive site)
    ComplexMap<T> code;      // bottleneck
    ComplexMap<T> dec_out;   // y, decoder complex output
};

template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        check(cfg.resolution == 32 || cfg.resolution == 64 || cfg.resolution == 96,
              "unsupported resolution");
        Rng rng(cfg.seed);
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    ForwardResult<T> forward(const Tensor<T>& images, bool train) {
        check(images.shape.size() == 4 && images.shape[1] == 3 &&
                  images.shape[2] == cfg_.resolution && images.shape[3] == cfg_.resolution,
              "model: input must be [N,3," + std::to_string(cfg_.resolution) + "," +
                  std::to_string(cfg_.resolution) + "]");
        ForwardResult<T> out;
        ComplexMap<T> x = lift_to_complex(images);
        for (std::size_t i = 0; i < enc_convs_.size(); ++i) x = enc_convs_[i].forward(x, train);
        out.enc_feat = x;

        const int n = images.shape[0];
        const int flat = cfg_.c2 * cfg_.enc_spatial() * cfg_.enc_spatial();
        ComplexMap<T> flatx{reshape(x.mag, {n, flat}), reshape(x.phase, {n, flat})};
        out.code = enc_linear_.forward(flatx, train);

        ComplexMap<T> d = dec_linear_.forward(out.code, train);
        const int he = cfg_.enc_spatial();
        d = {reshape(d.mag, {n, cfg_.c2, he, he}), reshape(d.phase, {n, cfg_.c2, he, he})};
        for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
            if (upsample_before_[i]) d = {upsample_bilinear_x2(d.mag), upsample_bilinear_x2(d.phase)};
            d = dec_blocks_[i].forward(d, train);
        }
        if (cfg_.use_fout_conv) d = fout_.forward(d, train);
        out.dec_out = d;
        out.reconstruction = d.mag;
        return out;
    }

    // mean over batch, channels and pixels
    static Var<T> reconstruction_loss(const Var<T>& xhat, const Tensor<T>& target) {
        check(xhat.shape() == target.shape, "reconstruction_loss: shape mismatch");
        return mean_all(square(sub(xhat, Var<T>::leaf(target))));
    }

    LossBreakdown<T> total_loss(const Tensor<T>& images, bool train, Rng& step_rng) {
        auto fwd = forward(images, train);
        LossBreakdown<T> loss;
        loss.mse = reconstruction_loss(fwd.reconstruction, images);
        loss.beta = cfg_.variant == Variant::CtCAE ? cfg_.contrastive.beta : 0.0;
        if (loss.beta > 0.0) {
            loss.contrastive = contrastive_loss(fwd.enc_feat, fwd.dec_out, cfg_.contrastive,
                                                step_rng);
            loss.total = add(loss.mse, mul_scalar(loss.contrastive, static_cast<T>(loss.beta)));
        } else {
            loss.total = loss.mse;
        }
        return loss;
    }

    std::vector<std::pair<std::string, Var<T>>> named_params() {
        std::vector<std::pair<std::string, Var<T>>> out;
        auto add_layer = [&](const std::string& prefix, ComplexLayer<T>& l) {
            out.emplace_back(prefix + ".w", l.w);
            out.emplace_back(prefix + ".b_mag", l.b_mag);
            out.emplace_back(prefix + ".b_phase", l.b_phase);
            if (l.norm != NormKind::None) {
                out.emplace_back(prefix + ".gamma", l.gamma);
                out.emplace_back(prefix + ".beta", l.beta);
            }
        };
        for (std::size_t i = 0; i < enc_convs_.size(); ++i)
            add_layer("enc." + std::to_string(i), enc_convs_[i]);
        add_layer("enc_linear", enc_linear_);
        add_layer("dec_linear", dec_linear_);
        for (std::size_t i = 0; i < dec_blocks_.size(); ++i)
            add_layer("dec." + std::to_string(i), dec_blocks_[i]);
        if (cfg_.use_fout_conv) add_layer("fout", fout_);
        return out;
    }

    std::vector<Var<T>> params() {
        std::vector<Var<T>> out;
        for (auto& [name, v] : named_params()) out.push_back(v);
        return out;
    }

    // batch-norm running statistics, for checkpointing
    std::vector<std::pair<std::string, BatchNormState<T>*>> named_bn_states() {
        std::vector<std::pair<std::string, BatchNormState<T>*>> out;
        for (std::size_t i = 0; i < enc_convs_.size(); ++i)
            if (enc_convs_[i].norm == NormKind::Batch)
                out.emplace_back("enc." + std::to_string(i), &enc_convs_[i].bn);
        for (std::size_t i = 0; i < dec_blocks_.size(); ++i)
            if (dec_blocks_[i].norm == NormKind::Batch)
                out.emplace_back("dec." + std::to_string(i), &dec_blocks_[i].bn);
        if (cfg_.use_fout_conv && fout_.norm == NormKind::Batch) out.emplace_back("fout", &fout_.bn);
        return out;
    }

    // structural introspection for the ablation wiring tests
    bool has_fout_conv() const { return cfg_.use_fout_conv; }
    bool has_sigmoid_output() const {
        if (cfg_.use_fout_conv) return fout_.act == Activation::Sigmoid;
        return dec_blocks_.back().act == Activation::Sigmoid;
    }
    bool decoder_uses_transposed_conv() const {
        for (const auto& b : dec_blocks_)
            if (b.primitive == Primitive::ConvTranspose) return true;
        return false;
    }
    std::size_t decoder_block_count() const { return dec_blocks_.size(); }

private:
    void build(Rng& rng) {
        const int c1 = cfg_.c1, c2 = cfg_.c2;
        std::vector<std::pair<int, int>> enc = {{c1, 2}, {c1, 1}, {c2, 2}, {c2, 1}, {c2, 2}};
        if (cfg_.extra_blocks()) {
            enc.push_back({c2, 1});
            enc.push_back({c2, 2});
        }
        int cin = 3;
        for (auto [ch, stride] : enc) {
            enc_convs_.push_back(make_complex_layer<T>(Primitive::Conv, {ch, cin, 3, 3},
                                                       NormKind::Batch, Activation::Relu, stride, 1,
                                                       rng));
            cin = ch;
        }

        const int he = cfg_.enc_spatial();
        const int flat = c2 * he * he;
        enc_linear_ = make_complex_layer<T>(Primitive::Linear, {cfg_.code_dim(), flat},
                                            NormKind::Layer, Activation::Relu, 1, 0, rng);
        // unflatten step restoring a spatial map for the first upsample
        dec_linear_ = make_complex_layer<T>(Primitive::Linear, {flat, cfg_.code_dim()},
                                            NormKind::Layer, Activation::Relu, 1, 0, rng);

        // (channels, follows-an-upsample) per decoder conv, mirroring the
        // upsample+conv architecture; the transposed variant turns each
        // upsample+conv pair into a stride-2 transposed conv
        const int c_last = cfg_.use_fout_conv ? c1 : 3;
        std::vector<std::pair<int, bool>> dec;
        if (cfg_.extra_blocks()) {
            dec.push_back({c2, true});
            dec.push_back({c2, false});
        }
        dec.insert(dec.end(), {{c2, true}, {c2, false}, {c2, true}, {c1, false}, {c_last, true}});

        cin = c2;
        for (auto [ch, after_up] : dec) {
            const bool is_output_conv = !cfg_.use_fout_conv && ch == 3;
            const Activation act = is_output_conv && cfg_.use_fout_sigmoid ? Activation::Sigmoid
                                                                           : Activation::Relu;
            // the output conv produces the reconstruction magnitude directly;
            // normalizing it across the batch would distort the target scale
            const NormKind norm = is_output_conv ? NormKind::None : NormKind::Batch;
            if (cfg_.use_transposed_conv && after_up) {
                dec_blocks_.push_back(make_complex_layer<T>(Primitive::ConvTranspose,
                                                            {cin, ch, 3, 3}, norm, act, 2, 1, rng));
                upsample_before_.push_back(false);
            } else {
                dec_blocks_.push_back(make_complex_layer<T>(Primitive::Conv, {ch, cin, 3, 3}, norm,
                                                            act, 1, 1, rng));
                upsample_before_.push_back(after_up);
            }
            cin = ch;
        }

        if (cfg_.use_fout_conv) {
            const Activation act = cfg_.use_fout_sigmoid ? Activation::Sigmoid : Activation::Relu;
            fout_ = make_complex_layer<T>(Primitive::Conv, {3, c1, 1, 1}, NormKind::None, act, 1, 0,
                                          rng);
        }
    }

    ModelConfig cfg_;
    std::vector<ComplexLayer<T>> enc_convs_;
    ComplexLayer<T> enc_linear_;
    ComplexLayer<T> dec_linear_;
    std::vector<ComplexLayer<T>> dec_blocks_;
    std::vector<bool> upsample_before_;
    ComplexLayer<T> fout_;
};

}  // namespace synb
