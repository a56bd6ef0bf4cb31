#pragma once

// Cross-modal multi-head attention and pooled fusion of the attended streams.

#include <string>

#include "catnet/autodiff.hpp"
#include "catnet/params.hpp"

namespace catnet::fusion {

template <class S>
struct StreamWeights {
    ad::Var<S> wq, wk, wv;  // wq from the query modality, wk/wv from the other one
    ad::Var<S> wo, bo, ln_gain, ln_bias;
};

/// Q = Z_q W_Q, K = Z_kv W_K, V = Z_kv W_V; per-head softmax(Q K^T / sqrt(d)) V,
/// heads concatenated, projected with W_O and layer-normalized.
/// Z_q and Z_kv are [B x T x D] and must share T.
template <class S>
ad::Var<S> cross_attention(ad::Var<S> z_q, ad::Var<S> z_kv, const StreamWeights<S>& w, std::size_t heads,
                           Tensor<S>* attn_weights = nullptr) {
    const auto& a = z_q.shape();
    const auto& b = z_kv.shape();
    if (a.size() != b.size() || a.size() < 2 || a[a.size() - 2] != b[b.size() - 2])
        throw std::invalid_argument("cross_attention: time length mismatch " + shape_str(a) + " vs " + shape_str(b));
    auto q = ad::linear(z_q, w.wq);
    auto k = ad::linear(z_kv, w.wk);
    auto v = ad::linear(z_kv, w.wv);
    auto c = ad::attention(q, k, v, heads, attn_weights);
    c = ad::linear(c, w.wo, w.bo);
    return ad::layer_norm(c, w.ln_gain, w.ln_bias);
}

/// f = ReLU(concat(avg_t S, max_t S) W_f + b_f). `streams` holds one or two
/// attended streams [B x T x D]; two streams are summed elementwise first.
template <class S>
ad::Var<S> fuse(const std::vector<ad::Var<S>>& streams, ad::Var<S> w_f, ad::Var<S> b_f) {
    if (streams.empty() || streams.size() > 2) throw std::invalid_argument("fuse: expects one or two streams");
    auto s = streams[0];
    if (streams.size() == 2) s = ad::add(s, streams[1]);
    auto p = ad::concat<S>({ad::global_pool(s, ad::Pool::avg), ad::global_pool(s, ad::Pool::max)});
    return ad::relu(ad::linear(p, w_f, b_f));
}

}  // namespace catnet::fusion
