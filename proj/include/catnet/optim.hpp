#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "catnet/params.hpp"

namespace catnet::optim {

/// Adam with bias correction. Moments are kept per parameter, in store order.
template <class S>
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(const ParamStore<S>& store) {
        for (std::size_t i = 0; i < store.size(); ++i) {
            m_.emplace_back(store[i].value.size(), 0.0);
            v_.emplace_back(store[i].value.size(), 0.0);
        }
    }

    std::size_t steps() const { return t_; }

    void step(ParamStore<S>& store, double lr) {
        if (store.size() != m_.size()) throw std::invalid_argument("adam: parameter layout changed");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto& p = store[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                if (m[j] == 0.0) continue;
                const double upd = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
                p.value.data[j] = static_cast<S>(static_cast<double>(p.value.data[j]) - upd);
            }
        }
    }

private:
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Global L2 norm clip; returns the norm before clipping.
template <class S>
double clip_grad_norm(ParamStore<S>& store, double max_norm) {
    double ss = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i)
        for (S g : store[i].grad) ss += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(ss);
    if (max_norm > 0 && norm > max_norm) {
        const S s = static_cast<S>(max_norm / norm);
        for (std::size_t i = 0; i < store.size(); ++i)
            for (S& g : store[i].grad) g *= s;
    }
    return norm;
}

/// Halves (factor) the learning rate after `patience` epochs without strict
/// improvement of the monitored value, never going below min_lr.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor = 0.5, int patience = 5, double min_lr = 1e-5)
        : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {
        if (!(lr > 0) || !(factor > 0 && factor < 1) || patience < 0 || !(min_lr >= 0))
            throw std::invalid_argument("plateau scheduler: invalid settings");
    }

    double lr() const { return lr_; }

    /// Feed one epoch's monitored value; returns the learning rate for the next epoch.
    double observe(double value) {
        if (value < best_) {
            best_ = value;
            wait_ = 0;
        } else if (++wait_ >= patience_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            wait_ = 0;
        }
        return lr_;
    }

private:
    double lr_, factor_;
    int patience_;
    double min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int wait_ = 0;
};

/// Stops once `patience` consecutive epochs fail to improve on the best value.
/// patience 0 stops at the first non-improving epoch.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {
        if (patience < 0) throw std::invalid_argument("early stopping patience must be >= 0");
    }

    /// Returns true when `value` is a new best.
    bool observe(double value) {
        if (value < best_) {
            best_ = value;
            wait_ = 0;
            return true;
        }
        ++wait_;
        return false;
    }

    bool should_stop() const { return wait_ > 0 && wait_ >= std::max(patience_, 1); }
    double best() const { return best_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int wait_ = 0;
};

}  // namespace catnet::optim
