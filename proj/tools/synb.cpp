// synb: synchrony-based object-binding models on the command line.
// Subcommands: generate | train | eval | render.
// Exit codes: 0 success, 2 validation error, 3 numerical abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "synb/checkpoint.hpp"
#include "synb/render.hpp"
#include "synb/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

using json = nlohmann::json;
using namespace synb;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

void apply_thread_cap() {
    int threads = 1;
    if (const char* env = std::getenv("SYNB_THREADS")) {
        threads = std::atoi(env);
        if (threads < 1) threads = 1;
    }
    openblas_set_num_threads(threads);
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config file " + path);
    json j;
    f >> j;
    return j;
}

// config file value unless the flag was given on the command line
template <typename T>
void merge(const CLI::Option* opt, const json& cfg, const char* key, T& value) {
    if (opt->count() == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

struct GenerateArgs {
    std::string style = "tetrominoes";
    int resolution = 32;
    std::string objects;  // "K" or "LO-HI"
    int train = 5000;
    int test = 320;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_generate(const GenerateArgs& a) {
    DatasetSpec spec = DatasetSpec::defaults(
        a.style == "dsprites" ? DatasetStyle::Dsprites : DatasetStyle::Tetrominoes);
    if (a.style != "tetrominoes" && a.style != "dsprites")
        throw std::invalid_argument("unknown style " + a.style);
    spec.resolution = a.resolution;
    spec.n_train = a.train;
    spec.n_test = a.test;
    spec.seed = a.seed;
    if (!a.objects.empty()) {
        const auto dash = a.objects.find('-');
        spec.min_objects = std::stoi(a.objects.substr(0, dash));
        spec.max_objects =
            dash == std::string::npos ? spec.min_objects : std::stoi(a.objects.substr(dash + 1));
    }
    spec.validate();

    auto ds = generate(spec);
    write_dataset(ds, a.out);
    std::cout << "wrote " << ds.train.size() << " train + " << ds.test.size() << " test "
              << style_name(spec.style) << " scenes at " << spec.resolution << "x"
              << spec.resolution << " to " << a.out << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config_file;
    std::string variant = "cae++";
    std::string data;
    std::string out;
    int steps = 5000;
    int batch = 16;
    double lr = 4e-4;
    int c1 = 32;
    int c2 = 64;
    std::uint64_t seed = 0;
    int log_every = 50;
    int ckpt_every = 1000;
    std::string contrast_site = "enc+dec";
    double beta = -1;  // <0: variant default
    double tau = 0.05;
};

ModelConfig build_model_config(const TrainArgs& a, int resolution) {
    Variant v;
    if (a.variant == "cae")
        v = Variant::CAE;
    else if (a.variant == "cae++")
        v = Variant::CAEpp;
    else if (a.variant == "ctcae")
        v = Variant::CtCAE;
    else
        throw std::invalid_argument("unknown variant " + a.variant);
    ModelConfig cfg = ModelConfig::for_variant(v);
    cfg.resolution = resolution;
    cfg.c1 = a.c1;
    cfg.c2 = a.c2;
    cfg.seed = a.seed;
    cfg.contrastive.tau = a.tau;
    if (a.beta >= 0 && v == Variant::CtCAE) cfg.contrastive.beta = a.beta;
    if (a.contrast_site == "enc")
        cfg.contrastive.site = ContrastSite::Enc;
    else if (a.contrast_site == "dec")
        cfg.contrastive.site = ContrastSite::Dec;
    else if (a.contrast_site == "enc+dec")
        cfg.contrastive.site = ContrastSite::EncDec;
    else
        throw std::invalid_argument("unknown contrast site " + a.contrast_site);
    return cfg;
}

int cmd_train(const TrainArgs& a) {
    auto ds = read_dataset(a.data);
    ModelConfig mc = build_model_config(a, ds.spec.resolution);

    TrainConfig tc;
    tc.model = mc;
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.lr = a.lr;
    tc.log_every = a.log_every;
    tc.ckpt_every = a.ckpt_every;
    tc.seed = a.seed;
    tc.out_dir = a.out;

    fs::create_directories(a.out);
    // reproducibility record: the fully-resolved run config
    json run_cfg = {{"command", "train"},
                    {"data", a.data},
                    {"steps", tc.steps},
                    {"batch", tc.batch},
                    {"lr", tc.lr},
                    {"seed", tc.seed},
                    {"log_every", tc.log_every},
                    {"ckpt_every", tc.ckpt_every},
                    {"model", model_config_to_json(mc)}};
    std::ofstream(a.out + "/run_config.json") << run_cfg.dump(2) << "\n";

    Model<float> model(mc);
    auto result = train(model, tc, ds.train, [](const StepMetrics& m) {
        std::cout << "step " << m.step << " loss " << m.loss << " mse " << m.mse;
        if (m.has_ct) std::cout << " l_ct " << m.l_ct;
        std::cout << "\n";
    });
    if (result.aborted_nan) {
        std::cerr << "numerical abort: non-finite gradient at step " << result.nan_step
                  << "; batch indices:";
        for (int i : result.nan_batch) std::cerr << " " << i;
        std::cerr << "\n";
        return kExitNumerical;
    }
    std::cout << "finished " << result.steps_done << " steps; final checkpoint "
              << result.final_checkpoint << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;  // empty: stdout only
    std::string threshold = "0.1";
    bool by_count = false;
    bool threshold_sweep = false;
    bool per_image = false;
    int batch = 16;
    std::uint64_t seed = 0;
};

EvalConfig threshold_config(const std::string& text, std::uint64_t seed) {
    EvalConfig cfg;
    cfg.seed = seed;
    if (text == "none")
        cfg.threshold.reset();
    else
        cfg.threshold = std::stod(text);
    return cfg;
}

json report_json(const EvalReport& report, bool by_count, bool per_image) {
    json j = json::parse(report.to_json(per_image));
    if (by_count) {
        json groups = json::object();
        for (const auto& [count, sub] : report.by_count())
            groups[std::to_string(count)] = json::parse(sub.to_json(false));
        j["by_count"] = std::move(groups);
    }
    return j;
}

int cmd_eval(const EvalArgs& a) {
    auto ckpt = load_checkpoint(a.checkpoint);
    auto ds = read_dataset(a.data);
    auto outputs = model_outputs(*ckpt.model, ds.test, a.batch);

    json result;
    if (a.threshold_sweep) {
        json sweep = json::object();
        for (const std::string t : {"0.1", "0.0", "none"}) {
            auto report = evaluate(outputs, ds.test, threshold_config(t, a.seed));
            sweep[t] = report_json(report, a.by_count, a.per_image);
        }
        result = {{"threshold_sweep", std::move(sweep)}};
    } else {
        auto report = evaluate(outputs, ds.test, threshold_config(a.threshold, a.seed));
        result = report_json(report, a.by_count, a.per_image);
    }
    result["checkpoint"] = a.checkpoint;
    result["data"] = a.data;
    result["step"] = ckpt.step;

    const std::string text = result.dump(2);
    std::cout << text << "\n";
    if (!a.out.empty()) {
        fs::create_directories(fs::path(a.out).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(a.out).parent_path());
        std::ofstream(a.out) << text << "\n";
    }
    return kExitOk;
}

struct RenderArgs {
    std::string checkpoint;
    std::string data;
    std::string out = "renders";
    std::vector<int> indices;
    std::string threshold = "0.1";
    std::uint64_t seed = 0;
};

int cmd_render(const RenderArgs& a) {
    auto ckpt = load_checkpoint(a.checkpoint);
    auto ds = read_dataset(a.data);
    fs::create_directories(a.out);
    EvalConfig cfg = threshold_config(a.threshold, a.seed);

    std::vector<int> indices = a.indices;
    if (indices.empty()) indices = {0};
    for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(ds.test.size()))
            throw std::invalid_argument("render: test index " + std::to_string(idx) +
                                        " out of range");
        const auto& scene = ds.test[static_cast<std::size_t>(idx)];
        auto outputs = model_outputs(*ckpt.model, {scene}, 1);
        Rng rng = Rng(cfg.seed).child(static_cast<std::uint64_t>(idx));
        std::vector<int> pred;
        evaluate_image(outputs[0].reconstruction, outputs[0].magnitude, outputs[0].phase, scene,
                       cfg, rng, &pred);
        char name[16];
        std::snprintf(name, sizeof name, "%05d", idx);
        render_scene(scene, outputs[0], pred, a.out, name);
        std::cout << "rendered scene " << name << " to " << a.out << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"synchrony-based object binding: complex autoencoders (CAE / CAE++ / CtCAE)"};
    app.require_subcommand(1);

    GenerateArgs g;
    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
    gen->add_option("--style", g.style, "tetrominoes | dsprites");
    gen->add_option("--resolution", g.resolution);
    gen->add_option("--objects", g.objects, "object count K or range LO-HI");
    gen->add_option("--train", g.train);
    gen->add_option("--test", g.test);
    gen->add_option("--seed", g.seed);
    gen->add_option("--out", g.out)->required();

    TrainArgs t;
    auto* tr = app.add_subcommand("train", "train a model");
    auto* t_cfg = tr->add_option("--config", t.config_file, "JSON config file");
    auto* t_variant = tr->add_option("--variant", t.variant, "cae | cae++ | ctcae");
    auto* t_data = tr->add_option("--data", t.data, "dataset directory");
    auto* t_out = tr->add_option("--out", t.out, "run directory");
    auto* t_steps = tr->add_option("--steps", t.steps);
    auto* t_batch = tr->add_option("--batch", t.batch);
    auto* t_lr = tr->add_option("--lr", t.lr);
    auto* t_c1 = tr->add_option("--c1", t.c1, "first conv width");
    auto* t_c2 = tr->add_option("--c2", t.c2, "deep conv width / code dim");
    auto* t_seed = tr->add_option("--seed", t.seed);
    auto* t_log = tr->add_option("--log-every", t.log_every);
    auto* t_ckpt = tr->add_option("--ckpt-every", t.ckpt_every);
    auto* t_site = tr->add_option("--contrast-site", t.contrast_site, "enc | dec | enc+dec");
    auto* t_beta = tr->add_option("--beta", t.beta, "contrastive weight (ctcae)");
    auto* t_tau = tr->add_option("--tau", t.tau, "contrastive temperature");

    EvalArgs e;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset's test split");
    ev->add_option("checkpoint", e.checkpoint)->required();
    ev->add_option("--data", e.data)->required();
    ev->add_option("--out", e.out, "write the JSON report here too");
    ev->add_option("--threshold", e.threshold, "0.1 | 0.0 | none | <value>");
    ev->add_flag("--by-count", e.by_count, "per-object-count sub-tables");
    ev->add_flag("--threshold-sweep", e.threshold_sweep, "report for 0.1, 0.0 and none");
    ev->add_flag("--per-image", e.per_image, "include per-image rows");
    ev->add_option("--batch", e.batch);
    ev->add_option("--seed", e.seed);

    RenderArgs r;
    auto* re = app.add_subcommand("render", "render figure panels for test scenes");
    re->add_option("checkpoint", r.checkpoint)->required();
    re->add_option("--data", r.data)->required();
    re->add_option("--out", r.out);
    re->add_option("--index", r.indices, "test scene indices");
    re->add_option("--threshold", r.threshold);
    re->add_option("--seed", r.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(g);
        if (tr->parsed()) {
            const json cfg = load_config_file(t.config_file);
            (void)t_cfg;
            merge(t_variant, cfg, "variant", t.variant);
            merge(t_data, cfg, "data", t.data);
            merge(t_out, cfg, "out", t.out);
            merge(t_steps, cfg, "steps", t.steps);
            merge(t_batch, cfg, "batch", t.batch);
            merge(t_lr, cfg, "lr", t.lr);
            merge(t_c1, cfg, "c1", t.c1);
            merge(t_c2, cfg, "c2", t.c2);
            merge(t_seed, cfg, "seed", t.seed);
            merge(t_log, cfg, "log_every", t.log_every);
            merge(t_ckpt, cfg, "ckpt_every", t.ckpt_every);
            merge(t_site, cfg, "contrast_site", t.contrast_site);
            merge(t_beta, cfg, "beta", t.beta);
            merge(t_tau, cfg, "tau", t.tau);
            if (t.data.empty() || t.out.empty())
                throw std::invalid_argument("train: --data and --out are required");
            return cmd_train(t);
        }
        if (ev->parsed()) return cmd_eval(e);
        if (re->parsed()) return cmd_render(r);
    } catch (const NanGradient& ex) {
        std::cerr << "numerical abort: " << ex.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}
