#pragma once

// Trained-model directory: model.json (config, layout, channel names, subject
// map) and params.bin (float32 LE, parameters in store order, then centers).

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "catnet/training.hpp"

namespace catnet::checkpoint {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kMagic = "CATNETMODEL";

inline json to_json(const ModelConfig& c) {
    return json{{"eeg_channels", c.eeg_channels}, {"emg_channels", c.emg_channels}, {"conv1", c.conv1},
                {"conv2", c.conv2},               {"attn_hidden", c.attn_hidden},   {"lstm_hidden", c.lstm_hidden},
                {"heads", c.heads},               {"fused", c.fused},               {"domain_hidden", c.domain_hidden},
                {"n_domains", c.n_domains},       {"n_classes", c.n_classes},       {"dropout", c.dropout},
                {"ablation", c.ablation.name()}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    j.at("eeg_channels").get_to(c.eeg_channels);
    j.at("emg_channels").get_to(c.emg_channels);
    j.at("conv1").get_to(c.conv1);
    j.at("conv2").get_to(c.conv2);
    j.at("attn_hidden").get_to(c.attn_hidden);
    j.at("lstm_hidden").get_to(c.lstm_hidden);
    j.at("heads").get_to(c.heads);
    j.at("fused").get_to(c.fused);
    j.at("domain_hidden").get_to(c.domain_hidden);
    j.at("n_domains").get_to(c.n_domains);
    j.at("n_classes").get_to(c.n_classes);
    j.at("dropout").get_to(c.dropout);
    c.ablation = Ablation::parse(j.at("ablation").get<std::string>());
    c.validate();
    return c;
}

struct Checkpoint {
    CatNet<float> model;
    training::DomainMap domains;
    std::vector<std::string> eeg_names, emg_names;
    std::size_t t_prime = 0;
    heads::LossConfig loss;
};

inline void save(const Checkpoint& ck, const fs::path& dir) {
    fs::create_directories(dir);
    const auto& ps = ck.model.params();
    json layout = json::array();
    for (std::size_t i = 0; i < ps.size(); ++i) layout.push_back({{"name", ps[i].name}, {"shape", ps[i].value.shape}});
    json domains = json::array();
    for (const auto& [subject, label] : ck.domains.index) domains.push_back({subject, label});
    json j{{"magic", kMagic},
           {"version", 1},
           {"config", to_json(ck.model.config())},
           {"parameters", layout},
           {"centers_shape", ck.model.centers().shape},
           {"eeg_channel_names", ck.eeg_names},
           {"emg_channel_names", ck.emg_names},
           {"t_prime", ck.t_prime},
           {"domains", domains},
           {"loss",
            {{"gamma", ck.loss.gamma},
             {"alpha", ck.loss.alpha},
             {"lambda_dom", ck.loss.lambda_dom},
             {"center_weights", ck.loss.center_weights},
             {"center_ema", ck.loss.center_ema},
             {"use_center", ck.loss.use_center}}}};
    dataio::detail::write_json(dir / "model.json", j);
    std::ofstream out(dir / "params.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
    for (std::size_t i = 0; i < ps.size(); ++i) dataio::detail::write_floats(out, ps[i].value.data);
    dataio::detail::write_floats(out, ck.model.centers().data);
    if (!out) throw std::runtime_error("write failed: " + (dir / "params.bin").string());
}

inline Checkpoint load(const fs::path& dir) {
    const fs::path mp = dir / "model.json";
    std::ifstream in(mp);
    if (!in) throw std::runtime_error("cannot open " + mp.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(mp.string() + ": " + e.what());
    }
    if (j.value("magic", "") != kMagic) throw std::runtime_error(mp.string() + ": not a CAT-Net model");
    Checkpoint ck;
    try {
        ck.model.init(model_config_from_json(j.at("config")), 0);
        j.at("eeg_channel_names").get_to(ck.eeg_names);
        j.at("emg_channel_names").get_to(ck.emg_names);
        j.at("t_prime").get_to(ck.t_prime);
        for (const auto& d : j.at("domains")) ck.domains.index[d.at(0).get<int>()] = d.at(1).get<int>();
        const auto& l = j.at("loss");
        l.at("gamma").get_to(ck.loss.gamma);
        l.at("alpha").get_to(ck.loss.alpha);
        l.at("lambda_dom").get_to(ck.loss.lambda_dom);
        l.at("center_weights").get_to(ck.loss.center_weights);
        l.at("center_ema").get_to(ck.loss.center_ema);
        l.at("use_center").get_to(ck.loss.use_center);
    } catch (const json::exception& e) {
        throw std::runtime_error(mp.string() + ": " + e.what());
    }
    auto& ps = ck.model.params();
    const auto& layout = j.at("parameters");
    if (layout.size() != ps.size())
        throw std::runtime_error(mp.string() + ": parameter count does not match the configuration");
    std::uint64_t expected = ck.model.centers().size() * sizeof(float);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (layout[i].at("name") != ps[i].name || layout[i].at("shape").get<Shape>() != ps[i].value.shape)
            throw std::runtime_error(mp.string() + ": layout mismatch at '" + ps[i].name + "'");
        expected += ps[i].value.size() * sizeof(float);
    }
    const fs::path bp = dir / "params.bin";
    std::ifstream bin(bp, std::ios::binary | std::ios::ate);
    if (!bin) throw std::runtime_error("cannot open " + bp.string());
    const auto size = static_cast<std::uint64_t>(bin.tellg());
    if (size != expected)
        throw std::runtime_error(bp.string() + ": " + std::to_string(size) + " bytes, expected " +
                                 std::to_string(expected));
    bin.seekg(0);
    auto read = [&](Tensor<float>& t) {
        bin.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        for (float v : t.data)
            if (!std::isfinite(v)) throw std::runtime_error(bp.string() + ": non-finite weight");
    };
    for (std::size_t i = 0; i < ps.size(); ++i) read(ps[i].value);
    read(ck.model.centers());
    return ck;
}

}  // namespace catnet::checkpoint
