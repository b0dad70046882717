#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synb/adam.hpp"
#include "synb/ops.hpp"
#include "synb/rng.hpp"

using namespace synb;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel") {
    auto x = Var<double>::leaf(Tensor<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    auto k = Var<double>::leaf(Tensor<double>({1, 1, 1, 1}, {1.0}));
    auto y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (long i = 0; i < 9; ++i) CHECK(y.val().at(i) == doctest::Approx(x.val().at(i)));
}

TEST_CASE("conv2d ones 4x4 stride 2 against hand convolution") {
    // all-ones input/kernel: output value = number of in-bounds taps
    auto x = Var<double>::leaf(Tensor<double>::full({1, 1, 4, 4}, 1.0));
    auto k = Var<double>::leaf(Tensor<double>::full({1, 1, 3, 3}, 1.0));
    auto y = conv2d(x, k, 2, 1);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    // direct oracle: sum over kernel window with zero padding
    auto window = [&](int oy, int ox) {
        double s = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                int iy = oy * 2 - 1 + i, ix = ox * 2 - 1 + j;
                if (iy >= 0 && iy < 4 && ix >= 0 && ix < 4) s += 1.0;
            }
        return s;
    };
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox)
            CHECK(y.val().at(oy * 2 + ox) == doctest::Approx(window(oy, ox)));
}

TEST_CASE("conv2d spatial law through encoder stride sequence") {
    // strides 2,1,2,1,2 on 32x32 -> 4x4
    Rng rng(7);
    auto x = Var<double>::leaf(random_tensor({1, 3, 32, 32}, rng));
    int strides[5] = {2, 1, 2, 1, 2};
    int chans[5] = {4, 4, 8, 8, 8};
    int cin = 3;
    Var<double> cur = x;
    for (int l = 0; l < 5; ++l) {
        auto k = Var<double>::leaf(random_tensor({chans[l], cin, 3, 3}, rng, -0.1, 0.1));
        cur = conv2d(cur, k, strides[l], 1);
        cin = chans[l];
    }
    CHECK(cur.shape() == Shape{1, 8, 4, 4});
}

TEST_CASE("conv2d rejects bad arguments") {
    auto x = Var<double>::leaf(Tensor<double>::full({1, 2, 4, 4}, 1.0));
    auto k = Var<double>::leaf(Tensor<double>::full({1, 3, 3, 3}, 1.0));
    CHECK_THROWS(conv2d(x, k, 1, 1));  // channel mismatch
    auto k2 = Var<double>::leaf(Tensor<double>::full({1, 2, 3, 3}, 1.0));
    CHECK_THROWS(conv2d(x, k2, 0, 1));  // non-positive stride
}

TEST_CASE("conv2d_transpose stride 1 identity kernel") {
    auto x = Var<double>::leaf(Tensor<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    auto k = Var<double>::leaf(Tensor<double>({1, 1, 1, 1}, {1.0}));
    auto y = conv2d_transpose(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (long i = 0; i < 9; ++i) CHECK(y.val().at(i) == doctest::Approx(x.val().at(i)));
}

TEST_CASE("conv2d_transpose shape law: 4x4 stride 2 -> 8x8") {
    auto x = Var<double>::leaf(Tensor<double>::full({1, 2, 4, 4}, 1.0));
    auto k = Var<double>::leaf(Tensor<double>::full({2, 3, 3, 3}, 0.5));
    auto y = conv2d_transpose(x, k, 2, 1);
    CHECK(y.shape() == Shape{1, 3, 8, 8});
}

TEST_CASE("conv and transpose satisfy the adjoint identity") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor({1, 2, 8, 8}, rng);
        auto k = random_tensor({3, 2, 3, 3}, rng);
        auto y = random_tensor({1, 3, 4, 4}, rng);
        auto vx = Var<double>::leaf(x);
        auto vk = Var<double>::leaf(k);
        auto vy = Var<double>::leaf(y);
        auto cx = conv2d(vx, vk, 2, 1);  // 8 -> 4
        // adjoint direction: kernel [O,C,k,k] reinterpreted as [Ci=O, Co=C]
        auto vkt = Var<double>::leaf(Tensor<double>({3, 2, 3, 3}, k.v));
        auto cty = conv2d_transpose(vy, vkt, 2, 1);  // 4 -> 8
        double lhs = 0, rhs = 0;
        for (long i = 0; i < cx.val().size(); ++i) lhs += cx.val().at(i) * y.at(i);
        for (long i = 0; i < cty.val().size(); ++i) rhs += cty.val().at(i) * x.at(i);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
    }
}

TEST_CASE("upsample preserves constants") {
    auto x = Var<double>::leaf(Tensor<double>::full({1, 2, 4, 4}, 5.0));
    auto y = upsample_bilinear_x2(x);
    CHECK(y.shape() == Shape{1, 2, 8, 8});
    for (long i = 0; i < y.val().size(); ++i) CHECK(y.val().at(i) == doctest::Approx(5.0));
}

TEST_CASE("upsample 2x2 against the direct bilinear rule") {
    auto x = Var<double>::leaf(Tensor<double>({1, 1, 2, 2}, {0, 1, 2, 3}));
    auto y = upsample_bilinear_x2(x);
    // align-corners=false: sample position (o + 0.5)/2 - 0.5, edge clamped
    auto sample1d = [](double a, double b, int o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        src = std::max(0.0, std::min(src, 1.0));
        int i0 = static_cast<int>(std::floor(src));
        double w = src - i0;
        double v0 = i0 == 0 ? a : b;
        double v1 = (i0 + 1 <= 1) ? (i0 + 1 == 0 ? a : b) : b;
        return (1 - w) * v0 + w * v1;
    };
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
            double top = sample1d(0, 1, ox);
            double bot = sample1d(2, 3, ox);
            double expect = sample1d(top, bot, oy);
            CHECK(y.val().at(oy * 4 + ox) == doctest::Approx(expect));
        }
}

TEST_CASE("upsample gradient of sum is 4 everywhere") {
    auto x = Var<double>::leaf(Tensor<double>({1, 1, 4, 4},
                                              {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}),
                               true);
    auto s = sum_all(upsample_bilinear_x2(x));
    backward(s);
    for (long i = 0; i < 16; ++i) CHECK(x.grad().at(i) == doctest::Approx(4.0));
}

TEST_CASE("linear identity and ones") {
    auto eye = Tensor<double>({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i * 3 + i) = 1.0;
    auto x = Var<double>::leaf(Tensor<double>({1, 3}, {1, 2, 3}));
    CHECK(linear(x, Var<double>::leaf(eye)).val().v == std::vector<double>{1, 2, 3});
    auto ones = Var<double>::leaf(Tensor<double>::full({2, 3}, 1.0));
    auto y = linear(x, ones);
    CHECK(y.val().at(0) == doctest::Approx(6.0));
    CHECK(y.val().at(1) == doctest::Approx(6.0));
}

TEST_CASE("linear random case against explicit dot products") {
    Rng rng(3);
    auto x = random_tensor({3, 5}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto y = linear(Var<double>::leaf(x), Var<double>::leaf(w));
    for (int r = 0; r < 3; ++r)
        for (int o = 0; o < 4; ++o) {
            double s = 0;
            for (int j = 0; j < 5; ++j) s += x.at(r * 5 + j) * w.at(o * 5 + j);
            CHECK(y.val().at(r * 4 + o) == doctest::Approx(s));
        }
}

TEST_CASE("batch_norm train-mode moments") {
    Rng rng(5);
    auto x = random_tensor({8, 4, 3, 3}, rng, -2, 3);
    BatchNormState<double> st(4);
    auto g = Var<double>::leaf(Tensor<double>::full({4}, 1.0));
    auto b = Var<double>::leaf(Tensor<double>({4}));
    auto y = batch_norm(Var<double>::leaf(x), g, b, st, true);
    for (int ch = 0; ch < 4; ++ch) {
        double mu = 0, var = 0;
        long m = 0;
        for (int n = 0; n < 8; ++n)
            for (int i = 0; i < 9; ++i) {
                mu += y.val().at((n * 4 + ch) * 9 + i);
                ++m;
            }
        mu /= m;
        for (int n = 0; n < 8; ++n)
            for (int i = 0; i < 9; ++i) {
                double d = y.val().at((n * 4 + ch) * 9 + i) - mu;
                var += d * d;
            }
        var /= m;
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("batch_norm passthrough on standardized input and constant channel") {
    // standardized input, identity affine -> output ~ input
    Tensor<double> x({4, 1, 1, 2});
    double vals[8] = {-1.5, -0.5, 0.5, 1.5, -1.5, -0.5, 0.5, 1.5};
    for (int i = 0; i < 8; ++i) x.at(i) = vals[i] / std::sqrt(1.25);  // unit variance
    BatchNormState<double> st(1);
    auto g = Var<double>::leaf(Tensor<double>::full({1}, 1.0));
    auto b = Var<double>::leaf(Tensor<double>({1}));
    auto y = batch_norm(Var<double>::leaf(x), g, b, st, true);
    for (int i = 0; i < 8; ++i) CHECK(std::abs(y.val().at(i) - x.at(i)) < 1e-5);

    // constant channel -> ~0 output
    BatchNormState<double> st2(1);
    auto y2 = batch_norm(Var<double>::leaf(Tensor<double>::full({4, 1, 2, 2}, 3.0)), g, b, st2, true);
    for (long i = 0; i < y2.val().size(); ++i) CHECK(std::abs(y2.val().at(i)) < 1e-2);
}

TEST_CASE("elementwise basics") {
    auto x = Var<double>::leaf(Tensor<double>({3}, {-1, 0, 2}));
    auto r = relu(x);
    CHECK(r.val().v == std::vector<double>{0, 0, 2});
    auto s = sigmoid(Var<double>::leaf(Tensor<double>({1}, {0.0})));
    CHECK(s.val().at(0) == doctest::Approx(0.5));
}

TEST_CASE("logsumexp is overflow safe") {
    auto x = Var<double>::leaf(Tensor<double>({2}, {1000.0, 1000.0}));
    auto y = logsumexp(x);
    CHECK(y.val().at(0) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("wrap_phase lands in (-pi, pi]") {
    auto x = Var<double>::leaf(Tensor<double>({4}, {4.0, -4.0, 3.14159265358979, 10.0}));
    auto y = wrap_phase(x);
    for (long i = 0; i < 4; ++i) {
        CHECK(y.val().at(i) > -std::numbers::pi - 1e-12);
        CHECK(y.val().at(i) <= std::numbers::pi + 1e-12);
    }
    CHECK(y.val().at(0) == doctest::Approx(4.0 - 2 * std::numbers::pi));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, first step moves by ~lr") {
    auto p = Var<double>::leaf(Tensor<double>({1}, {0.0}), true);
    Adam<double> opt;
    opt.lr = 0.1;
    opt.attach({p});
    p.grad();  // zeros
    opt.step();
    CHECK(p.val().at(0) == doctest::Approx(0.0));

    auto q = Var<double>::leaf(Tensor<double>({1}, {0.0}), true);
    Adam<double> opt2;
    opt2.lr = 0.1;
    opt2.attach({q});
    q.grad().at(0) = 1.0;
    opt2.step();
    CHECK(q.val().at(0) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: identical params with identical grads stay identical; NaN aborts") {
    auto a = Var<double>::leaf(Tensor<double>({2}, {0.3, -0.7}), true);
    auto b = Var<double>::leaf(Tensor<double>({2}, {0.3, -0.7}), true);
    Adam<double> opt;
    opt.attach({a, b});
    for (int s = 0; s < 5; ++s) {
        a.grad().at(0) = 0.2;
        a.grad().at(1) = -0.4;
        b.grad().at(0) = 0.2;
        b.grad().at(1) = -0.4;
        opt.step();
        opt.zero_grad();
    }
    CHECK(a.val().v == b.val().v);

    a.grad().at(0) = std::nan("");
    CHECK_THROWS_AS(opt.step(), NanGradient);
}
