#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "catnet/autodiff.hpp"

namespace catnet {

/// Named, ordered collection of learnable tensors ("eeg.conv1.w", ...).
/// Parameters have stable addresses for the lifetime of the store.
template <class S>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& o) { *this = o; }
    ParamStore& operator=(const ParamStore& o) {
        if (this == &o) return *this;
        params_.clear();
        index_.clear();
        for (const auto& p : o.params_) add(p->name, p->value);
        return *this;
    }
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    ad::Parameter<S>& add(const std::string& name, Tensor<S> value) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        index_[name] = params_.size();
        params_.push_back(std::make_unique<ad::Parameter<S>>(name, std::move(value)));
        return *params_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    ad::Parameter<S>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return *params_[it->second];
    }
    const ad::Parameter<S>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return *params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    ad::Parameter<S>& operator[](std::size_t i) { return *params_[i]; }
    const ad::Parameter<S>& operator[](std::size_t i) const { return *params_[i]; }

    /// Total number of scalar weights.
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    /// Copy values (not gradients) from a store with identical layout.
    void assign_values(const ParamStore& o) {
        if (o.size() != size()) throw std::invalid_argument("assign_values: layout mismatch");
        for (std::size_t i = 0; i < size(); ++i) {
            if (o[i].name != params_[i]->name || o[i].value.shape != params_[i]->value.shape)
                throw std::invalid_argument("assign_values: layout mismatch at '" + o[i].name + "'");
            params_[i]->value.data = o[i].value.data;
        }
    }

private:
    std::vector<std::unique_ptr<ad::Parameter<S>>> params_;
    std::map<std::string, std::size_t> index_;
};

namespace init {

template <class S, class Rng>
Tensor<S> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor<S> t(Shape{fan_in, fan_out});
    for (auto& v : t.data) v = static_cast<S>(u(rng));
    return t;
}

template <class S>
Tensor<S> zeros(Shape s) {
    return Tensor<S>(std::move(s));
}

template <class S>
Tensor<S> ones(Shape s) {
    return Tensor<S>(std::move(s), S(1));
}

}  // namespace init
}  // namespace catnet
