#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synb/adam.hpp"
#include "synb/network.hpp"

using namespace synb;

namespace {

ModelConfig tiny_config(Variant v, int resolution = 32) {
    ModelConfig cfg = ModelConfig::for_variant(v);
    cfg.resolution = resolution;
    cfg.c1 = 4;
    cfg.c2 = 8;
    cfg.seed = 1;
    // shrink mining so tiny decoders satisfy the candidate-count preconditions
    cfg.contrastive.dec = {8, 2, 16, 4, 1, Role::Magnitude, Role::Phase};
    return cfg;
}

Tensor<float> random_images(int n, int res, Rng& rng) {
    Tensor<float> t({n, 3, res, res});
    for (auto& v : t.v) v = static_cast<float>(rng.uniform01());
    return t;
}

}  // namespace

TEST_CASE("forward shape law at 32, 64 and 96") {
    Rng rng(1);
    for (int res : {32, 64, 96}) {
        for (auto variant : {Variant::CAE, Variant::CAEpp}) {
            auto model = Model<float>(tiny_config(variant, res));
            auto imgs = random_images(2, res, rng);
            auto fwd = model.forward(imgs, false);
            CHECK(fwd.reconstruction.shape() == Shape{2, 3, res, res});
            CHECK(fwd.dec_out.phase.shape() == Shape{2, 3, res, res});
            const int he = res == 96 ? 6 : 4;
            CHECK(fwd.enc_feat.mag.shape() == Shape{2, 8, he, he});
            CHECK(fwd.code.mag.shape() == Shape{2, 8});
            // reconstruction values are magnitudes: non-negative
            for (long i = 0; i < fwd.reconstruction.val().size(); ++i)
                CHECK(fwd.reconstruction.val().at(i) >= 0.0f);
        }
    }
    CHECK_THROWS(Model<float>(ModelConfig{.variant = Variant::CAEpp, .resolution = 48}));
}

TEST_CASE("variant wiring (ablation reachability)") {
    // CAE: f_out 1x1 conv with sigmoid, transposed convs
    auto cae = Model<float>(tiny_config(Variant::CAE));
    CHECK(cae.has_fout_conv());
    CHECK(cae.has_sigmoid_output());
    CHECK(cae.decoder_uses_transposed_conv());

    // CAE++: none of the above
    auto caepp = Model<float>(tiny_config(Variant::CAEpp));
    CHECK(!caepp.has_fout_conv());
    CHECK(!caepp.has_sigmoid_output());
    CHECK(!caepp.decoder_uses_transposed_conv());
    CHECK(caepp.config().contrastive.beta == 0.0);

    // CtCAE: CAE++ architecture with beta > 0
    auto ctcae = Model<float>(tiny_config(Variant::CtCAE));
    CHECK(!ctcae.has_fout_conv());
    CHECK(ctcae.config().contrastive.beta > 0.0);

    // architecture-grid single toggles on the CAE++ base
    for (int bit = 0; bit < 3; ++bit) {
        auto cfg = tiny_config(Variant::CAEpp);
        cfg.use_fout_conv = bit == 0;
        cfg.use_fout_sigmoid = bit == 1;
        cfg.use_transposed_conv = bit == 2;
        auto m = Model<float>(cfg);
        CHECK(m.has_fout_conv() == (bit == 0));
        CHECK(m.has_sigmoid_output() == (bit == 1));
        CHECK(m.decoder_uses_transposed_conv() == (bit == 2));
        Rng rng(3);
        auto fwd = m.forward(random_images(1, 32, rng), false);
        CHECK(fwd.reconstruction.shape() == Shape{1, 3, 32, 32});
    }

    // contrast-site and role-grid variants are constructible and runnable
    for (auto site : {ContrastSite::Enc, ContrastSite::Dec, ContrastSite::EncDec}) {
        for (bool swap : {false, true}) {
            auto cfg = tiny_config(Variant::CtCAE);
            cfg.contrastive.site = site;
            if (swap) {
                for (auto* s : {&cfg.contrastive.enc, &cfg.contrastive.dec}) {
                    s->address_role = Role::Phase;
                    s->feature_role = Role::Magnitude;
                }
            }
            auto m = Model<float>(cfg);
            Rng rng(4), step_rng(5);
            auto loss = m.total_loss(random_images(2, 32, rng), true, step_rng);
            CHECK(std::isfinite(loss.total.val().at(0)));
            CHECK(loss.beta > 0.0);
        }
    }
}

TEST_CASE("beta 0 means total equals mse exactly") {
    auto model = Model<float>(tiny_config(Variant::CAEpp));
    Rng rng(6), step_rng(7);
    auto loss = model.total_loss(random_images(2, 32, rng), true, step_rng);
    CHECK(loss.beta == 0.0);
    CHECK(loss.total.val().at(0) == loss.mse.val().at(0));

    auto ct = Model<float>(tiny_config(Variant::CtCAE));
    Rng rng2(6), step_rng2(7);
    auto loss2 = ct.total_loss(random_images(2, 32, rng2), true, step_rng2);
    const float expected = loss2.mse.val().at(0) +
                           static_cast<float>(loss2.beta) * loss2.contrastive.val().at(0);
    CHECK(loss2.total.val().at(0) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("short training run decreases the loss") {
    auto model = Model<float>(tiny_config(Variant::CAEpp));
    Rng data_rng(8);
    auto imgs = random_images(4, 32, data_rng);
    // structured target: batch of smooth images is easier than noise
    for (long i = 0; i < imgs.size(); ++i) imgs.at(i) = 0.25f + 0.5f * (i % 7) / 7.0f;

    Adam<float> opt;
    opt.lr = 4e-4f;
    opt.attach(model.params());
    float first = 0, last = 0;
    for (int step = 0; step < 30; ++step) {
        Rng step_rng(100 + static_cast<std::uint64_t>(step));
        auto loss = model.total_loss(imgs, true, step_rng);
        if (step == 0) first = loss.total.val().at(0);
        last = loss.total.val().at(0);
        opt.zero_grad();
        backward(loss.total);
        opt.step();
    }
    CHECK(last < first);
}

TEST_CASE("eval mode is deterministic and uses running statistics") {
    auto model = Model<float>(tiny_config(Variant::CAEpp));
    Rng rng(9);
    auto imgs = random_images(2, 32, rng);
    // train once so running stats move off their init
    Rng step_rng(1);
    auto loss = model.total_loss(imgs, true, step_rng);
    backward(loss.total);

    auto a = model.forward(imgs, false);
    auto b = model.forward(imgs, false);
    CHECK(a.reconstruction.val().v == b.reconstruction.val().v);
    CHECK(a.dec_out.phase.val().v == b.dec_out.phase.val().v);

    // eval-mode output on a batch of n copies equals the single-image output
    Tensor<float> one({1, 3, 32, 32});
    std::copy(imgs.v.begin(), imgs.v.begin() + one.size(), one.v.begin());
    auto single = model.forward(one, false);
    for (long i = 0; i < single.reconstruction.val().size(); ++i)
        CHECK(single.reconstruction.val().at(i) ==
              doctest::Approx(a.reconstruction.val().at(i)).epsilon(1e-5));
}

TEST_CASE("two identically-seeded models agree bitwise") {
    auto m1 = Model<float>(tiny_config(Variant::CAEpp));
    auto m2 = Model<float>(tiny_config(Variant::CAEpp));
    auto p1 = m1.named_params(), p2 = m2.named_params();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].first == p2[i].first);
        CHECK(p1[i].second.val().v == p2[i].second.val().v);
    }
    Rng rng(11);
    auto imgs = random_images(1, 32, rng);
    CHECK(m1.forward(imgs, false).reconstruction.val().v ==
          m2.forward(imgs, false).reconstruction.val().v);
}
