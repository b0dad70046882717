#pragma once

#include <string>
#include <vector>

#include "synb/ops.hpp"
#include "synb/rng.hpp"

namespace synb {

// Complex activation map stored as (magnitude, phase). The linear transform
// runs on the (re, im) view, biases and gating run on (magnitude, phase);
// each step is natural in one coordinate system.
template <typename T>
struct ComplexMap {
    Var<T> mag;
    Var<T> phase;

    Var<T> re() const { return mul(mag, cos_(phase)); }
    Var<T> im() const { return mul(mag, sin_(phase)); }
};

// magnitude = image, phase = 0. Input values must be in [0, 1].
template <typename T>
ComplexMap<T> lift_to_complex(const Tensor<T>& image) {
    for (long i = 0; i < image.size(); ++i)
        check(image.at(i) >= T(0) && image.at(i) <= T(1),
              "lift_to_complex: pixel values must lie in [0,1]");
    return {Var<T>::leaf(image), Var<T>::leaf(Tensor<T>(image.shape))};
}

enum class Primitive { Conv, ConvTranspose, Linear };
enum class NormKind { None, Batch, Layer };
enum class Activation { Relu, Sigmoid };

// Intermediate values of the gating path, exposed for invariant checks.
template <typename T>
struct GatingIntermediates {
    Var<T> m_psi;    // biased magnitude of the complex transform
    Var<T> phi_psi;  // biased (wrapped) phase
    Var<T> chi;      // magnitude-only classic term
    Var<T> m_z;      // gated magnitude, exactly (m_psi + chi) / 2
};

// One layer: real-weight primitive applied to re/im and |x| separately,
// magnitude/phase biases, 1/2-1/2 gating, then activation(norm(.)) on the
// magnitude only. The phase passes through untouched apart from wrapping.
template <typename T>
struct ComplexLayer {
    Primitive primitive = Primitive::Conv;
    int stride = 1;
    int pad = 1;
    NormKind norm = NormKind::Batch;
    Activation act = Activation::Relu;

    Var<T> w;      // conv: [O,C,k,k] / conv_t: [Ci,Co,k,k] / linear: [Dout,Din]
    Var<T> b_mag;  // [out_channels]
    Var<T> b_phase;
    Var<T> gamma;  // norm affine, [out_channels] (unused when norm == None)
    Var<T> beta;
    BatchNormState<T> bn;

    int out_channels() const {
        switch (primitive) {
            case Primitive::Conv: return w.shape()[0];
            case Primitive::ConvTranspose: return w.shape()[1];
            case Primitive::Linear: return w.shape()[0];
        }
        return 0;
    }

    Var<T> apply_primitive(const Var<T>& x) const {
        switch (primitive) {
            case Primitive::Conv: return conv2d(x, w, stride, pad);
            case Primitive::ConvTranspose: return conv2d_transpose(x, w, stride, pad);
            case Primitive::Linear: return linear(x, w);
        }
        throw std::logic_error("bad primitive");
    }

    ComplexMap<T> forward(const ComplexMap<T>& x, bool train,
                          GatingIntermediates<T>* inter = nullptr) {
        auto psi_re = apply_primitive(x.re());
        auto psi_im = apply_primitive(x.im());
        auto m_psi = add_channel_bias(complex_magnitude(psi_re, psi_im), b_mag);
        auto phi_psi = wrap_phase(add_channel_bias(atan2_(psi_im, psi_re), b_phase));
        auto chi = add_channel_bias(apply_primitive(x.mag), b_mag);
        auto m_z = mul_scalar(add(m_psi, chi), T(0.5));

        Var<T> h = m_z;
        if (norm == NormKind::Batch)
            h = batch_norm(h, gamma, beta, bn, train);
        else if (norm == NormKind::Layer)
            h = layer_norm(h, gamma, beta);
        Var<T> out_mag = act == Activation::Relu ? relu(h) : sigmoid(h);

        if (inter) *inter = {m_psi, phi_psi, chi, m_z};
        return {out_mag, phi_psi};
    }

    std::vector<Var<T>> params() {
        std::vector<Var<T>> p = {w, b_mag, b_phase};
        if (norm != NormKind::None) {
            p.push_back(gamma);
            p.push_back(beta);
        }
        return p;
    }
};

// Kaiming-uniform (fan-in) weights, zero biases, identity norm affine.
template <typename T>
ComplexLayer<T> make_complex_layer(Primitive prim, Shape w_shape, NormKind norm, Activation act,
                                   int stride, int pad, Rng& rng) {
    ComplexLayer<T> layer;
    layer.primitive = prim;
    layer.stride = stride;
    layer.pad = pad;
    layer.norm = norm;
    layer.act = act;

    long fan_in = 1;
    if (prim == Primitive::Conv)
        fan_in = static_cast<long>(w_shape[1]) * w_shape[2] * w_shape[3];
    else if (prim == Primitive::ConvTranspose)
        fan_in = static_cast<long>(w_shape[0]) * w_shape[2] * w_shape[3];
    else
        fan_in = w_shape[1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<T> w(w_shape);
    for (auto& v : w.v) v = static_cast<T>(rng.uniform(-bound, bound));
    layer.w = Var<T>::leaf(std::move(w), true);

    const int oc = prim == Primitive::ConvTranspose ? w_shape[1] : w_shape[0];
    layer.b_mag = Var<T>::leaf(Tensor<T>({oc}), true);
    layer.b_phase = Var<T>::leaf(Tensor<T>({oc}), true);
    if (norm != NormKind::None) {
        layer.gamma = Var<T>::leaf(Tensor<T>::full({oc}, T(1)), true);
        layer.beta = Var<T>::leaf(Tensor<T>({oc}), true);
        layer.bn = BatchNormState<T>(oc);
    }
    return layer;
}

}  // namespace synb
