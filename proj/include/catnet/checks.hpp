#pragma once

// Finite-difference gradient checks for every layer of the network, run by
// the `gradcheck` command and the test suite.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "catnet/gradcheck.hpp"
#include "catnet/model.hpp"

namespace catnet::checks {

struct CheckResult {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return error < tolerance; }
};

inline Tensor<double> randn(Shape s, std::mt19937& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = nd(rng);
    return t;
}

/// |x| in [margin, 1] with random sign.
inline Tensor<double> away_from_zero(Shape s, std::mt19937& rng, double margin = 0.05) {
    std::uniform_real_distribution<double> mag(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

/// Random-weighted sum of y so that each output coordinate gets its own upstream gradient.
inline ad::Var<double> probe(ad::Graph<double>& g, ad::Var<double> y, unsigned seed = 99) {
    std::mt19937 rng(seed);
    return ad::sum(ad::mul(y, g.constant(randn(y.shape(), rng))));
}

/// Smallest model that still exercises every component.
inline ModelConfig micro_config() {
    ModelConfig c;
    c.eeg_channels = 2;
    c.emg_channels = 1;
    c.conv1 = 4;
    c.conv2 = 4;
    c.attn_hidden = 2;
    c.lstm_hidden = 2;
    c.heads = 2;
    c.fused = 4;
    c.domain_hidden = 3;
    c.n_domains = 3;
    c.dropout = 0.0;
    return c;
}

/// Domain head applied to the reflection 2*f0 - f of the features: equal in value
/// to the head on f at f = f0, with the derivative wrt f negated. Differencing
/// an objective built this way gives the gradient a reversal layer should produce.
template <class S>
ad::Var<S> reflected_domain_logits(ad::Graph<S>& g, ad::Var<S> f, const Tensor<S>& f0, ad::Var<S> w1, ad::Var<S> b1,
                                   ad::Var<S> w2, ad::Var<S> b2) {
    auto two_f0 = f0;
    for (auto& v : two_f0.data) v *= S(2);
    auto r = ad::sub(g.constant(two_f0), f);
    return ad::linear(ad::relu(ad::linear(r, w1, b1)), w2, b2);
}

/// Gradient check of the full objective (all parameters) on a random batch of
/// B trials with T' samples. Numeric derivatives use the reflected domain branch.
inline double model_grad_check(const ModelConfig& cfg, std::size_t T, std::size_t B, unsigned seed,
                               const heads::LossConfig& loss = {}) {
    std::mt19937 rng(seed);
    CatNet<double> model(cfg, seed);
    model.centers() = randn(model.centers().shape, rng, 0.5);
    auto xe = randn({B, T, 2 * cfg.eeg_channels}, rng);
    auto xm = randn({B, T, 2 * cfg.emg_channels}, rng);
    std::vector<int> tones(B), doms(B);
    for (std::size_t i = 0; i < B; ++i) {
        tones[i] = static_cast<int>(i % cfg.n_classes) + 1;
        doms[i] = static_cast<int>(i % cfg.n_domains) + 1;
    }
    std::vector<Tensor<double>> values;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        // biases start at zero; perturb them so no unit sits on a kink by construction
        auto v = model.params()[i].value;
        for (auto& x : v.data) x += 0.1 * std::normal_distribution<double>()(rng);
        values.push_back(v);
    }
    auto run_forward = [&](ad::Graph<double>& g, const std::vector<ad::Var<double>>& leaves) {
        for (std::size_t i = 0; i < leaves.size(); ++i) g.bind_param(model.params()[i], leaves[i]);
        std::mt19937 drop(0);
        return model.forward(g, g.constant(xe), g.constant(xm), false, drop);
    };
    Tensor<double> f0;
    {
        ad::Graph<double> g(false);
        std::vector<ad::Var<double>> leaves;
        for (const auto& v : values) leaves.push_back(g.constant(v));
        f0 = run_forward(g, leaves).f.value();
    }
    auto analytic = [&](ad::Graph<double>& g, const std::vector<ad::Var<double>>& leaves) {
        auto out = run_forward(g, leaves);
        return heads::compute_losses(out.tone, out.domain, out.f, tones, doms, model.centers(), loss).total;
    };
    auto numeric = [&](ad::Graph<double>& g, const std::vector<ad::Var<double>>& leaves) {
        auto out = run_forward(g, leaves);
        ad::Var<double> dom;
        if (out.domain.valid())
            dom = reflected_domain_logits(g, out.f, f0, g.param(model.params().get("domain.w1")),
                                          g.param(model.params().get("domain.b1")),
                                          g.param(model.params().get("domain.w2")),
                                          g.param(model.params().get("domain.b2")));
        return heads::compute_losses(out.tone, dom, out.f, tones, doms, model.centers(), loss).total;
    };
    ad::GradCheckOptions opt;
    opt.max_coords_per_tensor = 64;
    return ad::grad_check(analytic, numeric, values, opt);
}

/// One named check per layer and loss, plus the end-to-end micro model.
inline std::vector<CheckResult> run_suite(unsigned seed = 1) {
    using ad::Graph;
    using ad::Var;
    using VarList = std::vector<Var<double>>;
    std::vector<CheckResult> res;
    std::mt19937 rng(seed);
    constexpr double tol = 1e-4;
    auto run = [&](const std::string& name, const ad::GraphBuilder& f, std::vector<Tensor<double>> p,
                   double t = 1e-4) { res.push_back({name, ad::grad_check(f, std::move(p)), t}); };

    run("linear",
        [](Graph<double>& g, const VarList& v) { return probe(g, ad::linear(v[0], v[1], v[2])); },
        {randn({3, 4}, rng), randn({4, 2}, rng), randn({2}, rng)});
    for (const char* kind : {"relu", "sigmoid", "tanh"})
        run(std::string("activation_") + kind,
            [kind](Graph<double>& g, const VarList& v) { return probe(g, ad::activation(v[0], kind)); },
            {away_from_zero({4, 5}, rng)});
    run("softmax", [](Graph<double>& g, const VarList& v) { return probe(g, ad::softmax(v[0])); },
        {randn({3, 4}, rng)});
    run("layer_norm",
        [](Graph<double>& g, const VarList& v) { return probe(g, ad::layer_norm(v[0], v[1], v[2])); },
        {randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)});
    for (auto kind : {ad::Pool::max, ad::Pool::avg})
        run(kind == ad::Pool::max ? "pool_max" : "pool_avg",
            [kind](Graph<double>& g, const VarList& v) { return probe(g, ad::pool_time(v[0], kind, 2, 2)); },
            {randn({2, 9, 3}, rng)});
    run("concat_slice_composite",
        [](Graph<double>& g, const VarList& v) {
            auto c = ad::concat<double>({v[0], v[1]});
            auto s = ad::slice_last(c, 1, 4);
            return probe(g, ad::mul(ad::add(s, ad::scale(s, 0.5)), s));
        },
        {randn({3, 2}, rng), randn({3, 3}, rng)});

    const std::size_t C2 = 4, F1 = 5, F = 6;
    run("pointwise_conv_stack",
        [](Graph<double>& g, const VarList& v) {
            encoder::EncoderWeights<double> w;
            w.conv1_w = v[1], w.conv1_b = v[2], w.conv2_w = v[3], w.conv2_b = v[4];
            return probe(g, encoder::pointwise_conv_stack(v[0], w));
        },
        {randn({2, 8, C2}, rng), randn({C2, F1}, rng), randn({F1}, rng, 0.3), randn({F1, F}, rng),
         randn({F}, rng, 0.3)});
    run("channel_attention",
        [](Graph<double>& g, const VarList& v) {
            auto a = encoder::channel_attention(v[0], v[1], v[2]);
            return ad::add(probe(g, a.gated), probe(g, a.gate, 7));
        },
        {randn({2, 5, F}, rng), randn({F, 3}, rng), randn({3, F}, rng)});
    run("lstm_cell_bidirectional",
        [](Graph<double>& g, const VarList& v) {
            encoder::EncoderWeights<double> w;
            w.fw_wx = v[1], w.fw_wh = v[2], w.fw_b = v[3], w.bw_wx = v[4], w.bw_wh = v[5], w.bw_b = v[6];
            return probe(g, encoder::bilstm(v[0], w));
        },
        {randn({2, 6, 4}, rng), randn({4, 12}, rng, 0.5), randn({3, 12}, rng, 0.5), randn({12}, rng, 0.5),
         randn({4, 12}, rng, 0.5), randn({3, 12}, rng, 0.5), randn({12}, rng, 0.5)});
    run("cross_attention",
        [](Graph<double>& g, const VarList& v) {
            fusion::StreamWeights<double> w{v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
            return probe(g, fusion::cross_attention(v[0], v[1], w, 2));
        },
        {randn({2, 5, 4}, rng), randn({2, 5, 4}, rng), randn({4, 4}, rng), randn({4, 4}, rng),
         randn({4, 4}, rng), randn({4, 4}, rng), randn({4}, rng), randn({4}, rng), randn({4}, rng)});
    run("fuse",
        [](Graph<double>& g, const VarList& v) { return probe(g, fusion::fuse<double>({v[0], v[1]}, v[2], v[3])); },
        {randn({2, 5, 4}, rng), randn({2, 5, 4}, rng), randn({8, 3}, rng), randn({3}, rng)});

    std::vector<int> tones{1, 2, 3, 4, 2}, subjects{1, 3, 2, 3, 1};
    run("focal_loss",
        [tones](Graph<double>&, const VarList& v) {
            return ad::focal_loss(v[0], tones, 2.0, std::vector<double>{0.2, 0.3, 0.2, 0.3});
        },
        {randn({5, 4}, rng)});
    run("domain_loss", [subjects](Graph<double>&, const VarList& v) { return ad::cross_entropy(v[0], subjects); },
        {randn({5, 3}, rng)});
    auto centers = randn({4, 3}, rng);
    run("center_loss",
        [tones, centers](Graph<double>&, const VarList& v) {
            return ad::center_loss(v[0], tones, centers, std::vector<double>{0.2, 0.3, 0.2, 0.3});
        },
        {randn({5, 3}, rng)});
    // trunk -> f -> {tone head, GRL -> domain head}; full weighted objective
    {
        auto trunk_x = randn({5, 4}, rng), trunk_w = randn({4, 3}, rng);
        Tensor<double> f0;
        {
            Graph<double> g(false);
            f0 = ad::tanh(ad::linear(g.constant(trunk_x), g.constant(trunk_w))).value();
        }
        auto objective = [tones, subjects, centers, f0](bool reflect) {
            return [=](Graph<double>& g, const VarList& v) {
                auto f = ad::tanh(ad::linear(v[0], v[1]));
                auto tone = heads::tone_logits(f, v[2], v[3]);
                auto dom = reflect ? reflected_domain_logits(g, f, f0, v[4], v[5], v[6], v[7])
                                   : heads::domain_logits(f, v[4], v[5], v[6], v[7]);
                return heads::compute_losses(tone, dom, f, tones, subjects, centers, heads::LossConfig{}).total;
            };
        };
        res.push_back({"grl_composite",
                       ad::grad_check(objective(false), objective(true),
                                      {trunk_x, trunk_w, randn({3, 4}, rng), randn({4}, rng), randn({3, 5}, rng),
                                       randn({5}, rng), randn({5, 3}, rng), randn({3}, rng)}),
                       tol});
    }

    res.push_back({"micro_model_end_to_end", model_grad_check(micro_config(), 8, 3, seed), 1e-3});
    return res;
}

}  // namespace catnet::checks
