#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "synb/checkpoint.hpp"
#include "synb/render.hpp"
#include "synb/trainer.hpp"

using namespace synb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ModelConfig tiny_config(Variant v) {
    ModelConfig cfg = ModelConfig::for_variant(v);
    cfg.c1 = 4;
    cfg.c2 = 8;
    cfg.seed = 2;
    cfg.contrastive.dec = {8, 2, 16, 4, 1, Role::Magnitude, Role::Phase};
    return cfg;
}

Dataset tiny_dataset(int train = 8, int test = 2) {
    DatasetSpec spec = DatasetSpec::defaults(DatasetStyle::Tetrominoes);
    spec.n_train = train;
    spec.n_test = test;
    spec.seed = 3;
    return generate(spec);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("model config json round trip") {
    auto cfg = tiny_config(Variant::CtCAE);
    cfg.contrastive.site = ContrastSite::Enc;
    cfg.contrastive.enc.address_role = Role::Phase;
    cfg.contrastive.enc.feature_role = Role::Magnitude;
    cfg.use_transposed_conv = true;
    auto back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.variant == cfg.variant);
    CHECK(back.c1 == cfg.c1);
    CHECK(back.c2 == cfg.c2);
    CHECK(back.use_transposed_conv);
    CHECK(back.contrastive.site == ContrastSite::Enc);
    CHECK(back.contrastive.enc.address_role == Role::Phase);
    CHECK(back.contrastive.dec.m_bottom == 16);
    CHECK(back.contrastive.beta == cfg.contrastive.beta);
}

TEST_CASE("checkpoint round trip preserves eval outputs bitwise") {
    TempDir dir("synb_ckpt");
    auto ds = tiny_dataset();
    auto model = Model<float>(tiny_config(Variant::CAEpp));

    // a few training steps so params, Adam moments and bn stats are nontrivial
    TrainConfig tc;
    tc.model = model.config();
    tc.steps = 6;
    tc.batch = 2;
    tc.log_every = 2;
    tc.seed = 5;
    auto result = train(model, tc, ds.train);
    CHECK(result.steps_done == 6);
    CHECK(!result.aborted_nan);

    Adam<float> opt;
    opt.attach(model.params());
    Rng train_rng(7);
    const std::string path = (dir.path / "ckpt.synb").string();
    save_checkpoint(path, model, &opt, train_rng, 6);

    auto ckpt = load_checkpoint(path);
    CHECK(ckpt.step == 6);
    CHECK(ckpt.has_optimizer);
    CHECK(ckpt.config.variant == Variant::CAEpp);
    CHECK(ckpt.train_rng.serialize() == train_rng.serialize());

    auto imgs = batch_images(ds.test, {0, 1});
    auto a = model.forward(imgs, false);
    auto b = ckpt.model->forward(imgs, false);
    CHECK(a.reconstruction.val().v == b.reconstruction.val().v);
    CHECK(a.dec_out.phase.val().v == b.dec_out.phase.val().v);

    // save -> load -> save is byte-identical
    const std::string path2 = (dir.path / "ckpt2.synb").string();
    Adam<float> opt2;
    restore_adam(opt2, *ckpt.model, ckpt);
    save_checkpoint(path2, *ckpt.model, &opt2, ckpt.train_rng, ckpt.step);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint error handling") {
    TempDir dir("synb_ckpt_bad");
    CHECK_THROWS(load_checkpoint((dir.path / "missing.synb").string()));
    std::ofstream(dir.path / "junk.synb") << "NOTSYNB garbage";
    CHECK_THROWS(load_checkpoint((dir.path / "junk.synb").string()));
}

TEST_CASE("training is reproducible: identical metrics and checkpoints") {
    auto ds = tiny_dataset();
    TempDir d1("synb_run1"), d2("synb_run2");
    for (const auto& dir : {d1.path, d2.path}) {
        auto model = Model<float>(tiny_config(Variant::CtCAE));
        TrainConfig tc;
        tc.model = model.config();
        tc.steps = 8;
        tc.batch = 2;
        tc.log_every = 2;
        tc.ckpt_every = 4;
        tc.seed = 9;
        tc.out_dir = dir.string();
        auto result = train(model, tc, ds.train);
        CHECK(result.steps_done == 8);
        CHECK(!result.logged.empty());
        CHECK(result.logged.front().has_ct);  // CtCAE logs l_ct
    }
    CHECK(slurp(d1.path / "metrics.jsonl") == slurp(d2.path / "metrics.jsonl"));
    CHECK(slurp(d1.path / "final.synb") == slurp(d2.path / "final.synb"));
    CHECK(slurp(d1.path / "ckpt_4.synb") == slurp(d2.path / "ckpt_4.synb"));
    CHECK(!slurp(d1.path / "metrics.jsonl").empty());

    // CAE++ run logs no l_ct
    auto model = Model<float>(tiny_config(Variant::CAEpp));
    TrainConfig tc;
    tc.model = model.config();
    tc.steps = 2;
    tc.batch = 2;
    tc.log_every = 1;
    auto r = train(model, tc, ds.train);
    CHECK(!r.logged.front().has_ct);
}

TEST_CASE("evaluate_model runs end to end on an untrained model") {
    auto ds = tiny_dataset(4, 3);
    auto model = Model<float>(tiny_config(Variant::CAEpp));
    EvalConfig cfg;
    cfg.kmeans_restarts = 2;
    auto report = evaluate_model(model, ds.test, cfg, 2);
    CHECK(report.per_image.size() == 3);
    CHECK(report.mse.n == 3);
    for (const auto& e : report.per_image) {
        CHECK(e.mse >= 0.0);
        if (e.ari_full) {
            CHECK(*e.ari_full >= -1.0);
            CHECK(*e.ari_full <= 1.0);
        }
    }
}

TEST_CASE("render emits the seven panels with contract filenames") {
    TempDir dir("synb_render");
    auto ds = tiny_dataset(1, 1);
    auto model = Model<float>(tiny_config(Variant::CAEpp));
    auto outs = model_outputs(model, ds.test, 1);
    EvalConfig cfg;
    cfg.kmeans_restarts = 2;
    Rng rng(1);
    std::vector<int> pred;
    evaluate_image(outs[0].reconstruction, outs[0].magnitude, outs[0].phase, ds.test[0], cfg, rng,
                   &pred);
    render_scene(ds.test[0], outs[0], pred, dir.path.string(), "00000");
    for (const char* panel : {"input", "gt", "recon", "grouping", "phase_scatter", "phase_mean",
                              "magnitude"})
        CHECK(fs::exists(dir.path / ("00000_" + std::string(panel) + ".png")));
}
