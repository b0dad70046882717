#include "synb/trainer.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "synb/adam.hpp"

namespace synb {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

json metrics_json(const StepMetrics& m) {
    json j = {{"step", m.step}, {"loss", m.loss}, {"mse", m.mse}};
    if (m.has_ct) j["l_ct"] = m.l_ct;
    return j;
}

}  // namespace

TrainResult train(Model<float>& model, const TrainConfig& cfg,
                  const std::vector<LabeledScene>& train_scenes,
                  const std::function<void(const StepMetrics&)>& on_log) {
    check(!train_scenes.empty(), "train: empty training set");
    check(cfg.steps >= 1 && cfg.batch >= 1, "train: steps and batch must be positive");

    const bool to_disk = !cfg.out_dir.empty();
    std::ofstream metrics;
    if (to_disk) {
        fs::create_directories(cfg.out_dir);
        metrics.open(cfg.out_dir + "/metrics.jsonl");
        check(static_cast<bool>(metrics), "train: cannot open metrics.jsonl");
    }

    Adam<float> opt;
    opt.lr = static_cast<float>(cfg.lr);
    opt.attach(model.params());

    Rng root(cfg.seed);
    const int n = static_cast<int>(train_scenes.size());

    TrainResult result;
    for (long step = 1; step <= cfg.steps; ++step) {
        Rng batch_rng = root.child(0, static_cast<std::uint64_t>(step));
        Rng mine_rng = root.child(1, static_cast<std::uint64_t>(step));
        std::vector<int> idx(static_cast<std::size_t>(cfg.batch));
        for (auto& i : idx) i = batch_rng.uniform_int(n);
        auto images = batch_images(train_scenes, idx);

        auto loss = model.total_loss(images, true, mine_rng);
        opt.zero_grad();
        backward(loss.total);
        try {
            opt.step();
        } catch (const NanGradient&) {
            result.aborted_nan = true;
            result.nan_step = step;
            result.nan_batch = idx;
            if (to_disk) {
                json dump = {{"event", "nan_abort"}, {"step", step}, {"batch_indices", idx}};
                metrics << dump.dump() << "\n";
                metrics.flush();
            }
            break;
        }
        result.steps_done = step;

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            StepMetrics m;
            m.step = step;
            m.loss = static_cast<double>(loss.total.val().at(0));
            m.mse = static_cast<double>(loss.mse.val().at(0));
            m.has_ct = loss.beta > 0.0;
            if (m.has_ct) m.l_ct = static_cast<double>(loss.contrastive.val().at(0));
            result.logged.push_back(m);
            if (to_disk) metrics << metrics_json(m).dump() << "\n";
            if (on_log) on_log(m);
        }

        if (to_disk && cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 && step != cfg.steps)
            save_checkpoint(cfg.out_dir + "/ckpt_" + std::to_string(step) + ".synb", model, &opt,
                            root, step);
    }

    if (to_disk) {
        metrics.flush();
        result.final_checkpoint = cfg.out_dir + "/final.synb";
        save_checkpoint(result.final_checkpoint, model, &opt, root, result.steps_done);
    }
    return result;
}

std::vector<ImageOutput> model_outputs(Model<float>& model,
                                       const std::vector<LabeledScene>& scenes, int batch) {
    check(batch >= 1, "model_outputs: batch must be positive");
    std::vector<ImageOutput> out;
    out.reserve(scenes.size());
    const int n = static_cast<int>(scenes.size());
    for (int start = 0; start < n; start += batch) {
        const int count = std::min(batch, n - start);
        std::vector<int> idx(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        auto images = batch_images(scenes, idx);
        auto fwd = model.forward(images, false);
        const auto& rec = fwd.reconstruction.val();
        const auto& mag = fwd.dec_out.mag.val();
        const auto& phase = fwd.dec_out.phase.val();
        const int res = scenes[static_cast<std::size_t>(start)].width();
        const long per = 3L * res * res;
        const long mag_per = mag.size() / count;
        for (int b = 0; b < count; ++b) {
            ImageOutput o;
            o.reconstruction = Tensor<float>({3, res, res});
            std::copy(rec.v.begin() + b * per, rec.v.begin() + (b + 1) * per,
                      o.reconstruction.v.begin());
            // dec_out matches the reconstruction shape for every variant: the
            // final complex layer (or f_out) emits 3 channels
            check(mag_per == per, "model_outputs: decoder output is not [3,H,W]");
            o.magnitude = Tensor<float>({3, res, res});
            std::copy(mag.v.begin() + b * per, mag.v.begin() + (b + 1) * per, o.magnitude.v.begin());
            o.phase = Tensor<float>({3, res, res});
            std::copy(phase.v.begin() + b * per, phase.v.begin() + (b + 1) * per, o.phase.v.begin());
            out.push_back(std::move(o));
        }
    }
    return out;
}

EvalReport evaluate_model(Model<float>& model, const std::vector<LabeledScene>& scenes,
                          const EvalConfig& cfg, int batch) {
    return evaluate(model_outputs(model, scenes, batch), scenes, cfg);
}

}  // namespace synb
