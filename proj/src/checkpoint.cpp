#include "synb/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace synb {
namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'S', 'Y', 'N', 'B'};
constexpr std::uint32_t kVersion = 1;

json site_to_json(const SiteConfig& s) {
    return {{"n_anchors", s.n_anchors},
            {"k_top", s.k_top},
            {"m_bottom", s.m_bottom},
            {"n_negatives", s.n_negatives},
            {"patch_size", s.patch_size},
            {"address_role", s.address_role == Role::Magnitude ? "magnitude" : "phase"},
            {"feature_role", s.feature_role == Role::Magnitude ? "magnitude" : "phase"}};
}

SiteConfig site_from_json(const json& j) {
    SiteConfig s;
    s.n_anchors = j.at("n_anchors").get<int>();
    s.k_top = j.at("k_top").get<int>();
    s.m_bottom = j.at("m_bottom").get<int>();
    s.n_negatives = j.at("n_negatives").get<int>();
    s.patch_size = j.at("patch_size").get<int>();
    s.address_role = j.at("address_role").get<std::string>() == "phase" ? Role::Phase
                                                                        : Role::Magnitude;
    s.feature_role = j.at("feature_role").get<std::string>() == "phase" ? Role::Phase
                                                                        : Role::Magnitude;
    return s;
}

struct ManifestEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;  // bytes from payload start
};

// every tensor a checkpoint carries, in a fixed order
template <typename Fn>
void for_each_tensor(Model<float>& model, std::vector<Tensor<float>>* adam_m,
                     std::vector<Tensor<float>>* adam_v, Fn&& fn) {
    auto named = model.named_params();
    for (auto& [name, var] : named) fn("param/" + name, var.val());
    if (adam_m) {
        for (std::size_t i = 0; i < named.size(); ++i) {
            fn("adam_m/" + named[i].first, (*adam_m)[i]);
            fn("adam_v/" + named[i].first, (*adam_v)[i]);
        }
    }
    for (auto& [name, bn] : model.named_bn_states()) {
        Tensor<float> mean({static_cast<int>(bn->running_mean.size())});
        mean.v = bn->running_mean;
        Tensor<float> var({static_cast<int>(bn->running_var.size())});
        var.v = bn->running_var;
        fn("bn/" + name + "/mean", mean);
        fn("bn/" + name + "/var", var);
    }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    const auto& ct = cfg.contrastive;
    std::string site = ct.site == ContrastSite::Enc   ? "enc"
                       : ct.site == ContrastSite::Dec ? "dec"
                                                      : "enc+dec";
    return {{"variant", variant_name(cfg.variant)},
            {"resolution", cfg.resolution},
            {"c1", cfg.c1},
            {"c2", cfg.c2},
            {"seed", cfg.seed},
            {"use_fout_conv", cfg.use_fout_conv},
            {"use_fout_sigmoid", cfg.use_fout_sigmoid},
            {"use_transposed_conv", cfg.use_transposed_conv},
            {"contrastive",
             {{"tau", ct.tau},
              {"beta", ct.beta},
              {"site", site},
              {"exclude_self", ct.exclude_self},
              {"enc", site_to_json(ct.enc)},
              {"dec", site_to_json(ct.dec)}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    const std::string v = j.at("variant").get<std::string>();
    if (v == "cae")
        cfg.variant = Variant::CAE;
    else if (v == "cae++")
        cfg.variant = Variant::CAEpp;
    else if (v == "ctcae")
        cfg.variant = Variant::CtCAE;
    else
        throw std::invalid_argument("model config: unknown variant " + v);
    cfg.resolution = j.at("resolution").get<int>();
    cfg.c1 = j.at("c1").get<int>();
    cfg.c2 = j.at("c2").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.use_fout_conv = j.at("use_fout_conv").get<bool>();
    cfg.use_fout_sigmoid = j.at("use_fout_sigmoid").get<bool>();
    cfg.use_transposed_conv = j.at("use_transposed_conv").get<bool>();
    const auto& ct = j.at("contrastive");
    cfg.contrastive.tau = ct.at("tau").get<double>();
    cfg.contrastive.beta = ct.at("beta").get<double>();
    const std::string site = ct.at("site").get<std::string>();
    cfg.contrastive.site = site == "enc"   ? ContrastSite::Enc
                           : site == "dec" ? ContrastSite::Dec
                                           : ContrastSite::EncDec;
    cfg.contrastive.exclude_self = ct.at("exclude_self").get<bool>();
    cfg.contrastive.enc = site_from_json(ct.at("enc"));
    cfg.contrastive.dec = site_from_json(ct.at("dec"));
    return cfg;
}

void save_checkpoint(const std::string& path, Model<float>& model, Adam<float>* opt,
                     const Rng& train_rng, long step) {
    std::vector<Tensor<float>>* m = opt ? &opt->first_moments() : nullptr;
    std::vector<Tensor<float>>* v = opt ? &opt->second_moments() : nullptr;

    json manifest = json::array();
    std::uint64_t offset = 0;
    std::vector<Tensor<float>> owned;  // bn tensors are temporaries; copy all
    for_each_tensor(model, m, v, [&](const std::string& name, Tensor<float>& t) {
        manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
        owned.push_back(t);
    });

    json header = {{"config", model_config_to_json(model.config())},
                   {"step", step},
                   {"rng", train_rng.serialize()},
                   {"has_optimizer", opt != nullptr},
                   {"adam_steps", opt ? opt->step_count : 0},
                   {"manifest", std::move(manifest)}};
    const std::string header_text = header.dump();

    std::ofstream f(path, std::ios::binary);
    check(static_cast<bool>(f), "save_checkpoint: cannot open " + path);
    f.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t header_len = header_text.size();
    f.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& t : owned)
        f.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    check(static_cast<bool>(f), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(static_cast<bool>(f), "load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    check(static_cast<bool>(f) && std::memcmp(magic, kMagic, 4) == 0,
          "load_checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    check(version == kVersion, "load_checkpoint: unsupported version");
    std::uint64_t header_len = 0;
    f.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    std::string header_text(header_len, '\0');
    f.read(header_text.data(), static_cast<std::streamsize>(header_len));
    check(static_cast<bool>(f), "load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("load_checkpoint: malformed header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<long>();
    ckpt.train_rng = Rng::deserialize(header.at("rng").get<std::string>());
    ckpt.has_optimizer = header.at("has_optimizer").get<bool>();
    ckpt.adam_steps = header.at("adam_steps").get<long>();
    ckpt.model = std::make_unique<Model<float>>(ckpt.config);

    // read every manifest tensor into a name-keyed map
    std::map<std::string, Tensor<float>> tensors;
    for (const auto& entry : header.at("manifest")) {
        Shape shape = entry.at("shape").get<Shape>();
        Tensor<float> t(shape);
        f.seekg(static_cast<std::streamoff>(4 + sizeof(std::uint32_t) + sizeof(std::uint64_t) +
                                            header_len + entry.at("offset").get<std::uint64_t>()));
        f.read(reinterpret_cast<char*>(t.v.data()),
               static_cast<std::streamsize>(t.v.size() * sizeof(float)));
        check(static_cast<bool>(f), "load_checkpoint: truncated payload");
        tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    auto take = [&](const std::string& name) -> Tensor<float> {
        auto it = tensors.find(name);
        check(it != tensors.end(), "load_checkpoint: missing tensor " + name);
        return std::move(it->second);
    };

    for (auto& [name, var] : ckpt.model->named_params()) {
        Tensor<float> t = take("param/" + name);
        check(t.shape == var.shape(), "load_checkpoint: shape mismatch for " + name);
        var.val() = std::move(t);
    }
    if (ckpt.has_optimizer) {
        for (auto& [name, var] : ckpt.model->named_params()) {
            ckpt.adam_m.push_back(take("adam_m/" + name));
            ckpt.adam_v.push_back(take("adam_v/" + name));
        }
    }
    for (auto& [name, bn] : ckpt.model->named_bn_states()) {
        bn->running_mean = take("bn/" + name + "/mean").v;
        bn->running_var = take("bn/" + name + "/var").v;
    }
    return ckpt;
}

void restore_adam(Adam<float>& opt, Model<float>& model, const Checkpoint& ckpt) {
    check(ckpt.has_optimizer, "restore_adam: checkpoint has no optimizer state");
    opt.attach(model.params());
    opt.step_count = ckpt.adam_steps;
    check(opt.first_moments().size() == ckpt.adam_m.size(), "restore_adam: moment count mismatch");
    opt.first_moments() = ckpt.adam_m;
    opt.second_moments() = ckpt.adam_v;
}

}  // namespace synb
