#pragma once

// Full CAT-Net: two modality encoders, bidirectional cross-attention, fusion,
// tone head and subject discriminator, plus ablation variants.

#include <random>
#include <set>
#include <string>
#include <tuple>

#include "catnet/encoder.hpp"
#include "catnet/fusion.hpp"
#include "catnet/heads.hpp"
#include "catnet/params.hpp"

namespace catnet {

struct Ablation {
    bool no_cross_attention = false;
    bool no_bilstm = false;
    bool no_fusion_eeg = false;  // drop the attended EEG stream from fuse
    bool no_fusion_emg = false;
    bool no_domain_discriminator = false;

    void validate() const {
        if (no_fusion_eeg && no_fusion_emg)
            throw std::invalid_argument("ablation: no_fusion_eeg and no_fusion_emg together leave nothing to fuse");
    }

    std::string name() const {
        std::string s;
        auto add = [&](bool on, const char* n) {
            if (!on) return;
            if (!s.empty()) s += "+";
            s += n;
        };
        add(no_cross_attention, "no_cross_attention");
        add(no_bilstm, "no_bilstm");
        add(no_fusion_eeg, "no_fusion_eeg");
        add(no_fusion_emg, "no_fusion_emg");
        add(no_domain_discriminator, "no_domain_discriminator");
        return s.empty() ? "full" : s;
    }

    static Ablation parse(const std::string& name) {
        Ablation a;
        if (name.empty() || name == "full") return a;
        std::size_t pos = 0;
        while (pos <= name.size()) {
            auto end = name.find_first_of("+,", pos);
            if (end == std::string::npos) end = name.size();
            const std::string tok = name.substr(pos, end - pos);
            if (tok == "no_cross_attention") a.no_cross_attention = true;
            else if (tok == "no_bilstm") a.no_bilstm = true;
            else if (tok == "no_fusion_eeg") a.no_fusion_eeg = true;
            else if (tok == "no_fusion_emg") a.no_fusion_emg = true;
            else if (tok == "no_domain_discriminator" || tok == "no_dd") a.no_domain_discriminator = true;
            else throw std::invalid_argument("unknown ablation '" + tok + "'");
            pos = end + 1;
        }
        a.validate();
        return a;
    }
};

struct ModelConfig {
    std::size_t eeg_channels = 20;  // C_e (input block has 2*C_e rows)
    std::size_t emg_channels = 5;
    std::size_t conv1 = 64;
    std::size_t conv2 = 128;
    std::size_t attn_hidden = 16;
    std::size_t lstm_hidden = 64;
    std::size_t heads = 4;
    std::size_t fused = 128;
    std::size_t domain_hidden = 64;
    std::size_t n_domains = 10;
    std::size_t n_classes = 4;
    double dropout = 0.4;
    Ablation ablation;

    std::size_t stream_width() const { return ablation.no_bilstm ? conv2 : 2 * lstm_hidden; }

    void validate() const {
        ablation.validate();
        if (!eeg_channels || !emg_channels) throw std::invalid_argument("model: channel counts must be positive");
        if (!conv1 || !conv2 || !attn_hidden || !lstm_hidden || !fused || !domain_hidden || !n_classes)
            throw std::invalid_argument("model: layer widths must be positive");
        if (!heads || stream_width() % heads)
            throw std::invalid_argument("model: stream width " + std::to_string(stream_width()) +
                                        " not divisible into " + std::to_string(heads) + " heads");
        if (!ablation.no_domain_discriminator && n_domains < 2)
            throw std::invalid_argument("model: domain discriminator needs at least 2 subjects");
        if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("model: dropout must be in [0, 1)");
    }
};

template <class S>
struct ForwardOutput {
    ad::Var<S> f;           // fused features [B x fused]
    ad::Var<S> tone;        // [B x n_classes]
    ad::Var<S> domain;      // [B x n_domains], invalid without discriminator
    ad::Var<S> eeg_gate;    // channel-attention gates [B x conv2]
    ad::Var<S> emg_gate;
};

template <class S>
class CatNet {
public:
    CatNet() = default;
    CatNet(const ModelConfig& cfg, std::uint64_t seed) { init(cfg, seed); }

    void init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        cfg_ = cfg;
        params_ = ParamStore<S>();
        std::mt19937_64 rng(seed);
        const bool lstm = !cfg.ablation.no_bilstm;
        encoder::EncoderDims de{2 * cfg.eeg_channels, cfg.conv1, cfg.conv2, cfg.attn_hidden, cfg.lstm_hidden};
        encoder::EncoderDims dm{2 * cfg.emg_channels, cfg.conv1, cfg.conv2, cfg.attn_hidden, cfg.lstm_hidden};
        encoder::add_params(params_, "eeg", de, rng, lstm);
        encoder::add_params(params_, "emg", dm, rng, lstm);

        const std::size_t D = cfg.stream_width();
        if (!cfg.ablation.no_cross_attention) {
            // query side q needs q.wq, other.wk, other.wv and q's projection/norm
            std::set<std::string> need;
            for (auto [q, o] : {std::pair{"eeg", "emg"}, std::pair{"emg", "eeg"}}) {
                if (!keeps_stream(q)) continue;
                need.insert(std::string(q) + ".wq");
                need.insert(std::string(o) + ".wk");
                need.insert(std::string(o) + ".wv");
                need.insert(std::string(q) + ".out");
            }
            for (const char* m : {"eeg", "emg"}) {
                const std::string p = std::string("attn.") + m;
                for (const char* k : {".wq", ".wk", ".wv"})
                    if (need.count(std::string(m) + k)) params_.add(p + k, init::glorot<S>(D, D, rng));
                if (need.count(std::string(m) + ".out")) {
                    params_.add(p + ".wo", init::glorot<S>(D, D, rng));
                    params_.add(p + ".bo", init::zeros<S>({D}));
                    params_.add(p + ".ln_g", init::ones<S>({D}));
                    params_.add(p + ".ln_b", init::zeros<S>({D}));
                }
            }
        }
        params_.add("fuse.w", init::glorot<S>(2 * D, cfg.fused, rng));
        params_.add("fuse.b", init::zeros<S>({cfg.fused}));
        params_.add("tone.w", init::glorot<S>(cfg.fused, cfg.n_classes, rng));
        params_.add("tone.b", init::zeros<S>({cfg.n_classes}));
        if (!cfg.ablation.no_domain_discriminator) {
            params_.add("domain.w1", init::glorot<S>(cfg.fused, cfg.domain_hidden, rng));
            params_.add("domain.b1", init::zeros<S>({cfg.domain_hidden}));
            params_.add("domain.w2", init::glorot<S>(cfg.domain_hidden, cfg.n_domains, rng));
            params_.add("domain.b2", init::zeros<S>({cfg.n_domains}));
        }
        centers_ = Tensor<S>(Shape{cfg.n_classes, cfg.fused});
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }
    Tensor<S>& centers() { return centers_; }
    const Tensor<S>& centers() const { return centers_; }

    bool keeps_stream(const std::string& modality) const {
        return modality == "eeg" ? !cfg_.ablation.no_fusion_eeg : !cfg_.ablation.no_fusion_emg;
    }

    /// x_eeg [B x T' x 2C_e], x_emg [B x T' x 2C_m].
    template <class Rng>
    ForwardOutput<S> forward(ad::Graph<S>& g, ad::Var<S> x_eeg, ad::Var<S> x_emg, bool training, Rng& rng,
                             S grl_lambda = S(1)) {
        check_input(x_eeg, cfg_.eeg_channels, "EEG");
        check_input(x_emg, cfg_.emg_channels, "EMG");
        const S p = static_cast<S>(cfg_.dropout);
        auto we = encoder::bind(g, params_, "eeg");
        auto wm = encoder::bind(g, params_, "emg");
        auto ze = encoder::encode(x_eeg, we, p, training, rng);
        auto zm = encoder::encode(x_emg, wm, p, training, rng);

        std::vector<ad::Var<S>> streams;
        for (auto [q, zq, zo, o] : {std::tuple{"eeg", ze.z, zm.z, "emg"}, std::tuple{"emg", zm.z, ze.z, "eeg"}}) {
            if (!keeps_stream(q)) continue;
            if (cfg_.ablation.no_cross_attention) {
                streams.push_back(zq);
                continue;
            }
            const std::string pq = std::string("attn.") + q, po = std::string("attn.") + o;
            fusion::StreamWeights<S> w{g.param(params_.get(pq + ".wq")), g.param(params_.get(po + ".wk")),
                                       g.param(params_.get(po + ".wv")), g.param(params_.get(pq + ".wo")),
                                       g.param(params_.get(pq + ".bo")), g.param(params_.get(pq + ".ln_g")),
                                       g.param(params_.get(pq + ".ln_b"))};
            streams.push_back(fusion::cross_attention(zq, zo, w, cfg_.heads));
        }
        ForwardOutput<S> out;
        out.f = fusion::fuse(streams, g.param(params_.get("fuse.w")), g.param(params_.get("fuse.b")));
        out.tone = heads::tone_logits(out.f, g.param(params_.get("tone.w")), g.param(params_.get("tone.b")));
        if (!cfg_.ablation.no_domain_discriminator)
            out.domain = heads::domain_logits(out.f, g.param(params_.get("domain.w1")),
                                              g.param(params_.get("domain.b1")), g.param(params_.get("domain.w2")),
                                              g.param(params_.get("domain.b2")), grl_lambda);
        out.eeg_gate = ze.gate;
        out.emg_gate = zm.gate;
        return out;
    }

private:
    static void check_input(const ad::Var<S>& x, std::size_t channels, const char* what) {
        const auto& s = x.shape();
        if (s.empty() || s.back() != 2 * channels)
            throw std::invalid_argument(std::string(what) + " input " + shape_str(s) + " does not match " +
                                        std::to_string(2 * channels) + " feature rows");
    }

    ModelConfig cfg_;
    ParamStore<S> params_;
    Tensor<S> centers_;
};

}  // namespace catnet
