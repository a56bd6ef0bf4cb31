#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "catnet/autodiff.hpp"

namespace catnet::ad {

/// Builds a scalar from leaves bound to the checked tensors (same order).
using GraphBuilder = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// Tensors larger than this are subsampled to this many coordinates (>= 50).
    std::size_t max_coords_per_tensor = 64;
    unsigned seed = 0;
};

/// Central-difference gradient check. Returns the max over checked
/// coordinates of |analytic - numeric| / max(1, |numeric|).
/// Analytic gradients come from `analytic`, numeric ones from differencing
/// `numeric`; the two builders must agree in value at the given point.
inline double grad_check(const GraphBuilder& analytic, const GraphBuilder& numeric, std::vector<Tensor<double>> params,
                         GradCheckOptions opt = {}) {
    if (!(opt.eps > 0.0 && opt.eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must be in (0, 1e-3]");
    opt.max_coords_per_tensor = std::max<std::size_t>(opt.max_coords_per_tensor, 50);

    auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
        Graph<double> g(with_grad);
        std::vector<Var<double>> leaves;
        leaves.reserve(params.size());
        for (const auto& p : params) leaves.push_back(g.variable(p));
        Var<double> out = with_grad ? analytic(g, leaves) : numeric(g, leaves);
        if (out.size() != 1) throw std::invalid_argument("grad_check: builder must return a scalar");
        const double v = out.item();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: function value is not finite");
        if (grads) {
            g.backward(out);
            for (const auto& l : leaves) grads->push_back(l.grad());
        }
        return v;
    };

    std::vector<Tensor<double>> exact;
    evaluate(true, &exact);

    std::mt19937 rng(opt.seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        std::vector<std::size_t> coords(params[t].size());
        std::iota(coords.begin(), coords.end(), 0);
        if (coords.size() > opt.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_tensor);
        }
        for (std::size_t i : coords) {
            const double orig = params[t].data[i];
            params[t].data[i] = orig + opt.eps;
            const double up = evaluate(false, nullptr);
            params[t].data[i] = orig - opt.eps;
            const double down = evaluate(false, nullptr);
            params[t].data[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.eps);
            const double err = std::abs(exact[t].data[i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline double grad_check(const GraphBuilder& f, std::vector<Tensor<double>> params, GradCheckOptions opt = {}) {
    return grad_check(f, f, std::move(params), opt);
}

}  // namespace catnet::ad
