#pragma once

// Training loop: batch assembly, one optimization step, evaluation and the
// epoch loop with plateau LR decay and early stopping.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "catnet/dataio.hpp"
#include "catnet/model.hpp"
#include "catnet/optim.hpp"

namespace catnet::training {

using dataio::Dataset;

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 50;
    std::size_t folds = 5;
    int early_stop_patience = 10;
    double plateau_factor = 0.5;
    int plateau_patience = 5;
    double min_lr = 1e-5;
    double dropout = 0.4;
    std::uint64_t seed = 1;
    double clip = 0.0;  // global grad-norm clip, 0 = off
    double grl_lambda = 1.0;
    /// Stop once validation accuracy reaches this value (0 = never).
    double stop_at_val_acc = 0.0;
    heads::LossConfig loss;
    Ablation ablation;

    void validate() const {
        if (!(lr >= 0) || !batch_size || !epochs || folds < 2 || early_stop_patience < 0 || plateau_patience < 0 ||
            !(plateau_factor > 0 && plateau_factor < 1) || !(min_lr >= 0) || !(dropout >= 0 && dropout < 1) ||
            clip < 0 || grl_lambda < 0 || stop_at_val_acc < 0 || stop_at_val_acc > 1)
            throw std::invalid_argument("train config: values out of range");
        loss.validate();
        ablation.validate();
    }
};

/// Maps subject ids seen in training to discriminator classes 1..S.
struct DomainMap {
    std::map<int, int> index;

    static DomainMap from(const Dataset& d) {
        DomainMap m;
        int k = 0;
        for (int s : d.subjects()) m.index[s] = ++k;
        return m;
    }
    std::size_t size() const { return index.size(); }
    /// Subjects outside the map (held-out) get label 1; they only matter when the domain loss is computed.
    int operator()(int subject) const {
        auto it = index.find(subject);
        return it == index.end() ? 1 : it->second;
    }
};

inline ModelConfig model_config_for(const Dataset& train, const TrainConfig& tc) {
    ModelConfig mc;
    mc.eeg_channels = train.eeg_channels();
    mc.emg_channels = train.emg_channels();
    mc.n_domains = std::max<std::size_t>(DomainMap::from(train).size(), 2);
    mc.dropout = tc.dropout;
    mc.ablation = tc.ablation;
    return mc;
}

template <class S>
struct Batch {
    Tensor<S> eeg;  // [B x T' x 2C_e]
    Tensor<S> emg;  // [B x T' x 2C_m]
    std::vector<int> tones;
    std::vector<int> domains;
};

namespace detail {
template <class S>
void transpose_into(const Tensor<float>& block, S* dst) {
    const std::size_t R = block.dim(0), T = block.dim(1);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t t = 0; t < T; ++t) dst[t * R + r] = static_cast<S>(block.data[r * T + t]);
}
}  // namespace detail

/// Stacks trials `idx` into time-major batches; EEG and EMG of a trial stay paired.
template <class S>
Batch<S> make_batch(const Dataset& d, const std::vector<std::size_t>& idx, const DomainMap& dom) {
    const std::size_t B = idx.size(), T = d.t_prime, Ce = 2 * d.eeg_channels(), Cm = 2 * d.emg_channels();
    Batch<S> b;
    b.eeg = Tensor<S>({B, T, Ce});
    b.emg = Tensor<S>({B, T, Cm});
    for (std::size_t i = 0; i < B; ++i) {
        const auto& tr = d.trials.at(idx[i]);
        detail::transpose_into(tr.eeg, b.eeg.data.data() + i * T * Ce);
        detail::transpose_into(tr.emg, b.emg.data.data() + i * T * Cm);
        b.tones.push_back(tr.tone);
        b.domains.push_back(dom(tr.subject));
    }
    return b;
}

/// Reshuffles `order` in place and cuts it into consecutive batches (the last may be short).
template <class Rng>
std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t>& order, std::size_t batch, Rng& rng) {
    if (!batch) throw std::invalid_argument("epoch_batches: batch size must be positive");
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch)
        out.emplace_back(order.begin() + start, order.begin() + std::min(order.size(), start + batch));
    return out;
}

struct StepResult {
    double focal = 0.0, domain = 0.0, center = 0.0, total = 0.0;
};

template <class S>
std::string grad_norm_report(const ParamStore<S>& store) {
    std::ostringstream os;
    for (std::size_t i = 0; i < store.size(); ++i) {
        double ss = 0.0;
        for (S g : store[i].grad) ss += static_cast<double>(g) * static_cast<double>(g);
        os << "\n  " << store[i].name << ": " << std::sqrt(ss);
    }
    return os.str();
}

/// Forward, losses, backward, Adam update, center EMA.
template <class S, class Rng>
StepResult train_step(CatNet<S>& model, optim::Adam<S>& adam, const Batch<S>& b, const TrainConfig& cfg, double lr,
                      Rng& rng) {
    model.params().zero_grad();
    ad::Graph<S> g(true);
    auto out = model.forward(g, g.constant(b.eeg), g.constant(b.emg), true, rng, static_cast<S>(cfg.grl_lambda));
    auto l = heads::compute_losses(out.tone, out.domain, out.f, b.tones, b.domains, model.centers(), cfg.loss);
    StepResult r;
    r.focal = l.focal.item();
    r.domain = l.domain.valid() ? l.domain.item() : 0.0;
    r.center = l.center.valid() ? l.center.item() : 0.0;
    r.total = l.total.item();
    if (!std::isfinite(r.total))
        throw std::runtime_error("non-finite loss (focal " + std::to_string(r.focal) + ", domain " +
                                 std::to_string(r.domain) + ", center " + std::to_string(r.center) + ")");
    g.backward(l.total);
    for (std::size_t i = 0; i < model.params().size(); ++i)
        for (S v : model.params()[i].grad)
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite gradient in '" + model.params()[i].name +
                                         "'; layer-wise gradient norms:" + grad_norm_report(model.params()));
    if (cfg.clip > 0) optim::clip_grad_norm(model.params(), cfg.clip);
    adam.step(model.params(), lr);
    if (cfg.loss.use_center) heads::ema_update(model.centers(), out.f.value(), b.tones, cfg.loss.center_ema);
    return r;
}

struct EvalResult {
    std::vector<int> truth, predicted;
    double focal_loss = 0.0;
    double accuracy = 0.0;
    Tensor<double> features;  // fused features [N x fused] (when requested)
    std::vector<double> mean_eeg_gate;
};

/// Inference in batches; dropout off. Loss is the focal term only.
template <class S>
EvalResult evaluate(CatNet<S>& model, const Dataset& d, const heads::LossConfig& loss, std::size_t batch = 64,
                    bool keep_features = false) {
    if (d.trials.empty()) throw std::invalid_argument("evaluate: empty dataset");
    EvalResult r;
    const std::size_t N = d.trials.size(), F = model.config().fused;
    if (keep_features) r.features = Tensor<double>({N, F});
    r.mean_eeg_gate.assign(model.config().conv2, 0.0);
    std::vector<S> alpha(loss.alpha.begin(), loss.alpha.end());
    std::mt19937_64 unused(0);
    DomainMap none;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < N; start += batch) {
        std::vector<std::size_t> idx(std::min(batch, N - start));
        std::iota(idx.begin(), idx.end(), start);
        auto b = make_batch<S>(d, idx, none);
        ad::Graph<S> g(false);
        auto out = model.forward(g, g.constant(b.eeg), g.constant(b.emg), false, unused);
        r.focal_loss += ad::focal_loss(out.tone, b.tones, static_cast<S>(loss.gamma), alpha).item() * idx.size();
        const std::size_t K = out.tone.shape()[1];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const S* z = out.tone.value().data.data() + i * K;
            const int pred = static_cast<int>(std::max_element(z, z + K) - z) + 1;
            r.truth.push_back(b.tones[i]);
            r.predicted.push_back(pred);
            correct += pred == b.tones[i];
            if (keep_features)
                for (std::size_t j = 0; j < F; ++j) r.features.data[(start + i) * F + j] = out.f.value().data[i * F + j];
            for (std::size_t j = 0; j < r.mean_eeg_gate.size(); ++j)
                r.mean_eeg_gate[j] += static_cast<double>(out.eeg_gate.value().data[i * r.mean_eeg_gate.size() + j]);
        }
    }
    r.focal_loss /= static_cast<double>(N);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(N);
    for (auto& v : r.mean_eeg_gate) v /= static_cast<double>(N);
    return r;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean total objective
    double train_focal = 0.0;
    double train_domain = 0.0;
    double train_center = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;  // rate used during this epoch
    double seconds = 0.0;
};

struct FitResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    double best_val_acc = 0.0;
    double max_val_acc = 0.0;
    bool stopped_early = false;
    bool reached_target = false;
    DomainMap domains;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch loop; on return the model holds the parameters (and centers) of the
/// epoch with the lowest validation loss.
template <class S>
FitResult fit(CatNet<S>& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train.trials.empty() || val.trials.empty()) throw std::invalid_argument("fit: empty train or validation split");
    FitResult res;
    res.domains = DomainMap::from(train);
    if (!model.config().ablation.no_domain_discriminator && model.config().n_domains < res.domains.size())
        throw std::invalid_argument("fit: model has " + std::to_string(model.config().n_domains) +
                                    " domain classes but training data has " +
                                    std::to_string(res.domains.size()) + " subjects");
    optim::Adam<S> adam(model.params());
    optim::PlateauScheduler sched(std::max(cfg.lr, 1e-300), cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    optim::EarlyStopper stopper(cfg.early_stop_patience);
    std::mt19937_64 rng(cfg.seed);
    double lr = cfg.lr;
    ParamStore<S> best = model.params();
    Tensor<S> best_centers = model.centers();
    res.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train.trials.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        std::size_t seen = 0;
        for (const auto& idx : epoch_batches(order, cfg.batch_size, rng)) {
            auto b = make_batch<S>(train, idx, res.domains);
            auto s = train_step(model, adam, b, cfg, lr, rng);
            const double n = static_cast<double>(idx.size());
            rec.train_loss += s.total * n;
            rec.train_focal += s.focal * n;
            rec.train_domain += s.domain * n;
            rec.train_center += s.center * n;
            seen += idx.size();
        }
        rec.train_loss /= seen;
        rec.train_focal /= seen;
        rec.train_domain /= seen;
        rec.train_center /= seen;
        auto ev = evaluate(model, val, cfg.loss, std::max<std::size_t>(cfg.batch_size, 64));
        rec.val_loss = ev.focal_loss;
        rec.val_acc = ev.accuracy;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.push_back(rec);
        res.max_val_acc = std::max(res.max_val_acc, ev.accuracy);
        if (on_epoch) on_epoch(rec);

        if (stopper.observe(rec.val_loss)) {
            best.assign_values(model.params());
            best_centers = model.centers();
            res.best_epoch = epoch;
            res.best_val_loss = rec.val_loss;
            res.best_val_acc = rec.val_acc;
        }
        if (cfg.lr > 0) lr = sched.observe(rec.val_loss);
        if (cfg.stop_at_val_acc > 0 && rec.val_acc >= cfg.stop_at_val_acc) {
            res.reached_target = true;
            break;
        }
        if (stopper.should_stop()) {
            res.stopped_early = true;
            break;
        }
    }
    model.params().assign_values(best);
    model.centers() = best_centers;
    return res;
}

}  // namespace catnet::training
