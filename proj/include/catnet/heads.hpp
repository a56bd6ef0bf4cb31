#pragma once

// Tone classifier, adversarial subject discriminator and the training objective.

#include <vector>

#include "catnet/autodiff.hpp"

namespace catnet::heads {

struct LossConfig {
    double gamma = 2.0;
    std::vector<double> alpha{0.2, 0.3, 0.2, 0.3};
    double lambda_dom = 0.05;
    std::vector<double> center_weights{0.2, 0.3, 0.2, 0.3};
    double center_ema = 0.05;
    bool use_center = true;

    void validate() const {
        if (alpha.size() != 4) throw std::invalid_argument("alpha needs 4 values");
        if (center_weights.size() != 4) throw std::invalid_argument("center weights need 4 values");
        for (double a : alpha)
            if (!(a > 0)) throw std::invalid_argument("alpha values must be positive");
        for (double w : center_weights)
            if (!(w >= 0)) throw std::invalid_argument("center weights must be >= 0");
        if (!(gamma >= 0)) throw std::invalid_argument("gamma must be >= 0");
        if (!(lambda_dom >= 0)) throw std::invalid_argument("lambda_dom must be >= 0");
        if (!(center_ema >= 0 && center_ema <= 1)) throw std::invalid_argument("center_ema must be in [0, 1]");
    }
};

template <class S>
ad::Var<S> tone_logits(ad::Var<S> f, ad::Var<S> w, ad::Var<S> b) {
    return ad::linear(f, w, b);
}

/// GRL(lambda) -> dense ReLU -> subject logits.
template <class S>
ad::Var<S> domain_logits(ad::Var<S> f, ad::Var<S> w1, ad::Var<S> b1, ad::Var<S> w2, ad::Var<S> b2,
                         S grl_lambda = S(1)) {
    auto r = ad::gradient_reversal(f, grl_lambda);
    return ad::linear(ad::relu(ad::linear(r, w1, b1)), w2, b2);
}

template <class S>
struct Losses {
    ad::Var<S> focal, domain, center, total;
};

/// Plain scalar form of the objective.
inline double total_loss(double focal, double domain, double center, double lambda_dom = 0.05) {
    return focal + lambda_dom * domain + center;
}

/// Builds L = L_focal + lambda_dom * L_dom + L_cent on the graph. `dom_logits`
/// may be invalid (no discriminator); then L_dom is absent. The domain term is
/// left out of the total when lambda_dom is 0, so nothing reaches the trunk.
template <class S>
Losses<S> compute_losses(ad::Var<S> tone, ad::Var<S> dom_logits, ad::Var<S> f, const std::vector<int>& tones,
                         const std::vector<int>& domains, const Tensor<S>& centers, const LossConfig& cfg) {
    std::vector<S> alpha(cfg.alpha.begin(), cfg.alpha.end());
    std::vector<S> wc(cfg.center_weights.begin(), cfg.center_weights.end());
    Losses<S> l;
    l.focal = ad::focal_loss(tone, tones, static_cast<S>(cfg.gamma), alpha);
    l.total = l.focal;
    if (dom_logits.valid()) {
        l.domain = ad::cross_entropy(dom_logits, domains);
        if (cfg.lambda_dom > 0) l.total = ad::add(l.total, ad::scale(l.domain, static_cast<S>(cfg.lambda_dom)));
    }
    if (cfg.use_center) {
        l.center = ad::center_loss(f, tones, centers, wc);
        l.total = ad::add(l.total, l.center);
    }
    return l;
}

/// c_k <- (1 - rho) c_k + rho * mean{f_i : y_i = k}; classes absent from the batch are untouched.
template <class S>
void ema_update(Tensor<S>& centers, const Tensor<S>& f, const std::vector<int>& labels, double rho) {
    if (f.rank() != 2 || centers.rank() != 2 || f.dim(1) != centers.dim(1) || labels.size() != f.dim(0))
        throw std::invalid_argument("ema_update: shape mismatch");
    const std::size_t K = centers.dim(0), F = f.dim(1);
    std::vector<double> sum(K * F, 0.0);
    std::vector<std::size_t> count(K, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > K)
            throw std::invalid_argument("ema_update: label out of range");
        const std::size_t k = static_cast<std::size_t>(labels[i] - 1);
        ++count[k];
        for (std::size_t j = 0; j < F; ++j) sum[k * F + j] += static_cast<double>(f.data[i * F + j]);
    }
    for (std::size_t k = 0; k < K; ++k) {
        if (!count[k]) continue;
        for (std::size_t j = 0; j < F; ++j) {
            const double m = sum[k * F + j] / static_cast<double>(count[k]);
            S& c = centers.data[k * F + j];
            c = rho == 1.0 ? static_cast<S>(m) : static_cast<S>((1.0 - rho) * static_cast<double>(c) + rho * m);
        }
    }
}

}  // namespace catnet::heads
