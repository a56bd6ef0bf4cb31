#pragma once

// Modality encoder: two pointwise (1x1) convolutions with ReLU, temporal
// max-pooling, CBAM-style channel attention and a bidirectional LSTM.

#include <random>
#include <string>

#include "catnet/autodiff.hpp"
#include "catnet/params.hpp"

namespace catnet::encoder {

struct EncoderDims {
    std::size_t in_channels = 40;  // 2*C (raw + difference rows)
    std::size_t conv1 = 64;
    std::size_t conv2 = 128;
    std::size_t attn_hidden = 16;
    std::size_t lstm_hidden = 64;  // per direction
};

template <class S>
struct EncoderWeights {
    ad::Var<S> conv1_w, conv1_b, conv2_w, conv2_b;
    ad::Var<S> att_w1, att_w2;
    ad::Var<S> fw_wx, fw_wh, fw_b;
    ad::Var<S> bw_wx, bw_wh, bw_b;
};

/// Registers one encoder's parameters under `prefix` ("eeg" / "emg").
template <class S, class Rng>
void add_params(ParamStore<S>& store, const std::string& prefix, const EncoderDims& d, Rng& rng, bool with_lstm) {
    store.add(prefix + ".conv1.w", init::glorot<S>(d.in_channels, d.conv1, rng));
    store.add(prefix + ".conv1.b", init::zeros<S>({d.conv1}));
    store.add(prefix + ".conv2.w", init::glorot<S>(d.conv1, d.conv2, rng));
    store.add(prefix + ".conv2.b", init::zeros<S>({d.conv2}));
    store.add(prefix + ".att.w1", init::glorot<S>(d.conv2, d.attn_hidden, rng));
    store.add(prefix + ".att.w2", init::glorot<S>(d.attn_hidden, d.conv2, rng));
    if (!with_lstm) return;
    const std::size_t H = d.lstm_hidden, G = 4 * H;
    for (const char* dir : {".lstm_fw", ".lstm_bw"}) {
        store.add(prefix + dir + ".wx", init::glorot<S>(d.conv2, G, rng));
        store.add(prefix + dir + ".wh", init::glorot<S>(H, G, rng));
        Tensor<S> b(Shape{G});
        for (std::size_t j = H; j < 2 * H; ++j) b.data[j] = S(1);  // forget-gate bias
        store.add(prefix + dir + ".b", std::move(b));
    }
}

template <class S>
EncoderWeights<S> bind(ad::Graph<S>& g, ParamStore<S>& store, const std::string& prefix) {
    EncoderWeights<S> w;
    w.conv1_w = g.param(store.get(prefix + ".conv1.w"));
    w.conv1_b = g.param(store.get(prefix + ".conv1.b"));
    w.conv2_w = g.param(store.get(prefix + ".conv2.w"));
    w.conv2_b = g.param(store.get(prefix + ".conv2.b"));
    w.att_w1 = g.param(store.get(prefix + ".att.w1"));
    w.att_w2 = g.param(store.get(prefix + ".att.w2"));
    if (store.contains(prefix + ".lstm_fw.wx")) {
        w.fw_wx = g.param(store.get(prefix + ".lstm_fw.wx"));
        w.fw_wh = g.param(store.get(prefix + ".lstm_fw.wh"));
        w.fw_b = g.param(store.get(prefix + ".lstm_fw.b"));
        w.bw_wx = g.param(store.get(prefix + ".lstm_bw.wx"));
        w.bw_wh = g.param(store.get(prefix + ".lstm_bw.wh"));
        w.bw_b = g.param(store.get(prefix + ".lstm_bw.b"));
    }
    return w;
}

/// H_t = ReLU(ReLU(x_t W1 + b1) W2 + b2), then max-pool k=2, s=2 over time.
/// x is [B x T' x 2C]; result [B x floor((T'-2)/2)+1 x conv2].
template <class S>
ad::Var<S> pointwise_conv_stack(ad::Var<S> x, const EncoderWeights<S>& w) {
    auto h = ad::relu(ad::linear(x, w.conv1_w, w.conv1_b));
    h = ad::relu(ad::linear(h, w.conv2_w, w.conv2_b));
    return ad::pool_time(h, ad::Pool::max, 2, 2);
}

template <class S>
struct AttentionOutput {
    ad::Var<S> gated;  // H~ = s' ⊙ H
    ad::Var<S> gate;   // s' [B x F], each entry in (0, 2)
};

/// s' = sigmoid(W2 ReLU(W1 avg_t H)) + sigmoid(W2 ReLU(W1 max_t H)), broadcast over time.
template <class S>
AttentionOutput<S> channel_attention(ad::Var<S> H, ad::Var<S> w1, ad::Var<S> w2) {
    auto s_avg = ad::global_pool(H, ad::Pool::avg);
    auto s_max = ad::global_pool(H, ad::Pool::max);
    auto branch = [&](ad::Var<S> s) { return ad::sigmoid(ad::linear(ad::relu(ad::linear(s, w1)), w2)); };
    auto gate = ad::add(branch(s_avg), branch(s_max));
    return {ad::gate_time(H, gate), gate};
}

/// Forward and backward LSTM passes concatenated per timestep: [B x T x 2H].
template <class S>
ad::Var<S> bilstm(ad::Var<S> x, const EncoderWeights<S>& w) {
    auto fw = ad::lstm(x, w.fw_wx, w.fw_wh, w.fw_b, false);
    auto bw = ad::lstm(x, w.bw_wx, w.bw_wh, w.bw_b, true);
    return ad::concat<S>({fw, bw});
}

template <class S>
struct EncoderOutput {
    ad::Var<S> z;
    ad::Var<S> gate;
};

/// conv stack -> dropout -> channel attention -> BiLSTM (skipped when the weights carry no LSTM).
template <class S, class Rng>
EncoderOutput<S> encode(ad::Var<S> x, const EncoderWeights<S>& w, S dropout_rate, bool training, Rng& rng) {
    auto h = pointwise_conv_stack(x, w);
    h = ad::dropout(h, dropout_rate, rng, training);
    auto att = channel_attention(h, w.att_w1, w.att_w2);
    if (!w.fw_wx.valid()) return {att.gated, att.gate};
    return {bilstm(att.gated, w), att.gate};
}

}  // namespace catnet::encoder
