#pragma once

// Preprocessing of continuous EEG/EMG recordings into fixed-shape trials:
// anti-aliased decimation, zero-phase Butterworth band-pass and notch
// filtering, common average referencing, stimulus-locked epoching with
// baseline correction, cropping and first-order difference augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "catnet/tensor.hpp"

namespace catnet::sigproc {

/// Continuous multichannel signal with stimulus events. samples is [channels x time].
struct ContinuousRecording {
    Tensor<double> samples;
    double rate_hz = 0.0;
    std::vector<std::string> channel_names;
    std::vector<std::size_t> onsets;
    std::vector<int> tones;
    std::vector<int> subjects;

    std::size_t channels() const { return samples.rank() == 2 ? samples.dim(0) : 0; }
    std::size_t length() const { return samples.rank() == 2 ? samples.dim(1) : 0; }

    void validate() const {
        if (samples.rank() != 2) throw std::invalid_argument("recording: samples must be [channels x time]");
        if (!(rate_hz > 0.0)) throw std::invalid_argument("recording: rate_hz must be positive");
        if (!channel_names.empty() && channel_names.size() != channels())
            throw std::invalid_argument("recording: " + std::to_string(channel_names.size()) + " channel names for " +
                                        std::to_string(channels()) + " channels");
        if (tones.size() != onsets.size() || subjects.size() != onsets.size())
            throw std::invalid_argument("recording: labels not aligned with onsets");
        for (std::size_t i = 1; i < onsets.size(); ++i)
            if (onsets[i] <= onsets[i - 1]) throw std::invalid_argument("recording: onsets must be strictly increasing");
        for (int t : tones)
            if (t < 1 || t > 4) throw std::invalid_argument("recording: tone label " + std::to_string(t) + " outside 1..4");
    }
};

/// One preprocessed trial: eeg [2*C_e x T'] and emg [2*C_m x T'], raw rows then difference rows.
struct TrialTensor {
    Tensor<float> eeg;
    Tensor<float> emg;
    int tone = 0;
    int subject = 0;
};

// ---------------------------------------------------------------------------
// Butterworth design

/// Second-order section in transposed direct form II, a0 = 1.
struct Biquad {
    double b0, b1, b2, a1, a2;
};
using Sos = std::vector<Biquad>;

enum class BandKind { lowpass, highpass, bandpass, bandstop };

namespace detail {

using cplx = std::complex<double>;

inline std::vector<cplx> pair_conjugates(std::vector<cplx> roots) {
    // Complex roots first (upper half-plane then its conjugate), real roots paired
    // from opposite ends of the sorted list so +1/-1 zeros share a section.
    std::vector<cplx> upper, real;
    for (const auto& r : roots) {
        if (std::abs(r.imag()) < 1e-12 * std::max(1.0, std::abs(r)))
            real.push_back({r.real(), 0.0});
        else if (r.imag() > 0)
            upper.push_back(r);
    }
    std::sort(upper.begin(), upper.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
    std::sort(real.begin(), real.end(), [](cplx a, cplx b) { return a.real() < b.real(); });
    std::vector<cplx> out;
    for (const auto& u : upper) {
        out.push_back(u);
        out.push_back(std::conj(u));
    }
    std::size_t lo = 0, hi = real.size();
    while (lo < hi) {
        out.push_back(real[lo++]);
        if (lo < hi) out.push_back(real[--hi]);
    }
    return out;
}

}  // namespace detail

/// Digital Butterworth filter by bilinear transform of the analog prototype.
/// `order` is the prototype order; band-pass and band-stop designs have
/// 2*order poles. Cutoffs are in Hz; f_high is ignored for low/high-pass.
inline Sos butterworth_design(BandKind kind, int order, double f_low, double f_high, double fs) {
    using detail::cplx;
    if (order < 1) throw std::invalid_argument("butterworth: order must be >= 1");
    const double nyq = fs / 2.0;
    const bool two_edges = kind == BandKind::bandpass || kind == BandKind::bandstop;
    if (!(f_low > 0.0) || f_low >= nyq || (two_edges && (f_high <= f_low || f_high >= nyq)))
        throw std::invalid_argument("butterworth: band edges must satisfy 0 < low < high < rate/2 (rate " +
                                    std::to_string(fs) + " Hz, edges " + std::to_string(f_low) + ", " +
                                    std::to_string(f_high) + ")");
    const double pi = std::numbers::pi;
    const double fs2 = 2.0 * fs;
    auto warp = [&](double f) { return fs2 * std::tan(pi * f / fs); };

    std::vector<cplx> proto;
    for (int k = 0; k < order; ++k)
        proto.push_back(std::polar(1.0, pi * (2.0 * k + order + 1) / (2.0 * order)));

    std::vector<cplx> z, p;
    double gain = 1.0;
    const double w1 = warp(f_low);
    switch (kind) {
        case BandKind::lowpass:
            for (auto q : proto) p.push_back(q * w1);
            gain = std::pow(w1, order);
            break;
        case BandKind::highpass:
            for (auto q : proto) p.push_back(w1 / q);
            z.assign(static_cast<std::size_t>(order), cplx(0.0));
            break;
        case BandKind::bandpass:
        case BandKind::bandstop: {
            const double w2 = warp(f_high);
            const double wo = std::sqrt(w1 * w2), bw = w2 - w1;
            for (auto q : proto) {
                const cplx base = kind == BandKind::bandpass ? q * (bw / 2.0) : (bw / 2.0) / q;
                const cplx disc = std::sqrt(base * base - wo * wo);
                p.push_back(base + disc);
                p.push_back(base - disc);
            }
            if (kind == BandKind::bandpass) {
                z.assign(static_cast<std::size_t>(order), cplx(0.0));
                gain = std::pow(bw, order);
            } else {
                for (int k = 0; k < order; ++k) {
                    z.push_back(cplx(0.0, wo));
                    z.push_back(cplx(0.0, -wo));
                }
            }
            break;
        }
    }

    // Bilinear transform.
    cplx num(1.0), den(1.0);
    for (auto& r : z) {
        num *= fs2 - r;
        r = (fs2 + r) / (fs2 - r);
    }
    for (auto& r : p) {
        den *= fs2 - r;
        r = (fs2 + r) / (fs2 - r);
    }
    while (z.size() < p.size()) z.push_back(cplx(-1.0));
    gain *= (num / den).real();

    const auto zp = detail::pair_conjugates(z);
    const auto pp = detail::pair_conjugates(p);
    if (zp.size() != pp.size() || pp.size() % 2 != 0)
        throw std::logic_error("butterworth: odd number of poles is not supported in second-order sections");
    Sos sos;
    for (std::size_t i = 0; i < pp.size(); i += 2) {
        Biquad s{};
        s.b0 = 1.0;
        s.b1 = -(zp[i] + zp[i + 1]).real();
        s.b2 = (zp[i] * zp[i + 1]).real();
        s.a1 = -(pp[i] + pp[i + 1]).real();
        s.a2 = (pp[i] * pp[i + 1]).real();
        sos.push_back(s);
    }
    sos.front().b0 *= gain;
    sos.front().b1 *= gain;
    sos.front().b2 *= gain;
    return sos;
}

/// Complex frequency response of the cascade at f Hz.
inline std::complex<double> frequency_response(const Sos& sos, double f, double fs) {
    const std::complex<double> zi = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
    std::complex<double> h(1.0);
    for (const auto& s : sos)
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    return h;
}

// ---------------------------------------------------------------------------
// Filtering

/// Steady-state section states for a unit step input.
inline std::vector<std::array<double, 2>> sos_step_state(const Sos& sos) {
    std::vector<std::array<double, 2>> zi;
    double scale = 1.0;
    for (const auto& s : sos) {
        const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        const double z1 = s.b2 - s.a2 * dc;
        const double z0 = s.b1 - s.a1 * dc + z1;
        zi.push_back({scale * z0, scale * z1});
        scale *= dc;
    }
    return zi;
}

/// Causal cascade filter. `state` (per section) is updated in place.
inline void sos_filter_inplace(const Sos& sos, std::vector<double>& x, std::vector<std::array<double, 2>>& state) {
    for (std::size_t k = 0; k < sos.size(); ++k) {
        const Biquad& s = sos[k];
        double z0 = state[k][0], z1 = state[k][1];
        for (double& v : x) {
            const double in = v;
            const double y = s.b0 * in + z0;
            z0 = s.b1 * in - s.a1 * y + z1;
            z1 = s.b2 * in - s.a2 * y;
            v = y;
        }
        state[k] = {z0, z1};
    }
}

/// Forward-backward (zero-phase) filtering with odd-extension padding and
/// step-response initial states at both passes.
inline std::vector<double> filtfilt(const Sos& sos, const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 2) return x;
    std::size_t pad = 3 * (2 * sos.size() + 1);
    pad = std::min(pad, n - 1);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    const auto zi = sos_step_state(sos);
    auto scaled = [&](double v) {
        auto s = zi;
        for (auto& a : s) a = {a[0] * v, a[1] * v};
        return s;
    };
    auto st = scaled(ext.front());
    sos_filter_inplace(sos, ext, st);
    std::reverse(ext.begin(), ext.end());
    st = scaled(ext.front());
    sos_filter_inplace(sos, ext, st);
    std::reverse(ext.begin(), ext.end());
    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                               ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

inline void filtfilt_rows(const Sos& sos, Tensor<double>& samples) {
    const std::size_t C = samples.dim(0), N = samples.dim(1);
    std::vector<double> row(N);
    for (std::size_t c = 0; c < C; ++c) {
        std::copy_n(samples.data.begin() + static_cast<std::ptrdiff_t>(c * N), N, row.begin());
        auto y = filtfilt(sos, row);
        std::copy(y.begin(), y.end(), samples.data.begin() + static_cast<std::ptrdiff_t>(c * N));
    }
}

struct FilterSpec {
    enum class Kind { bandpass, notch };
    Kind kind = Kind::bandpass;
    int order = 4;
    double low_hz = 1.0;
    double high_hz = 100.0;
    double notch_hz = 50.0;
    double notch_half_width_hz = 2.0;

    static FilterSpec bandpass(double lo, double hi, int order = 4) {
        FilterSpec s;
        s.kind = Kind::bandpass, s.low_hz = lo, s.high_hz = hi, s.order = order;
        return s;
    }
    static FilterSpec notch(double center = 50.0, int order = 4) {
        FilterSpec s;
        s.kind = Kind::notch, s.notch_hz = center, s.order = order;
        return s;
    }

    Sos design(double rate_hz) const {
        if (order < 2 || order % 2 != 0) throw std::invalid_argument("filter order must be even and >= 2");
        if (kind == Kind::bandpass) return butterworth_design(BandKind::bandpass, order, low_hz, high_hz, rate_hz);
        return butterworth_design(BandKind::bandstop, order, notch_hz - notch_half_width_hz,
                                  notch_hz + notch_half_width_hz, rate_hz);
    }
};

/// Zero-phase Butterworth filtering of every channel; shape preserved.
inline ContinuousRecording butterworth_filter(const ContinuousRecording& rec, const FilterSpec& spec) {
    rec.validate();
    const Sos sos = spec.design(rec.rate_hz);
    ContinuousRecording out = rec;
    filtfilt_rows(sos, out.samples);
    return out;
}

/// Decimate to target_hz after an 8th-order zero-phase low-pass at 0.45 * target_hz.
inline ContinuousRecording downsample(const ContinuousRecording& rec, double target_hz) {
    rec.validate();
    if (!(target_hz > 0.0)) throw std::invalid_argument("downsample: target rate must be positive");
    const double ratio_f = rec.rate_hz / target_hz;
    const double ratio_r = std::round(ratio_f);
    if (ratio_r < 1.0 || std::abs(ratio_f - ratio_r) > 1e-9)
        throw std::invalid_argument("downsample: target " + std::to_string(target_hz) + " Hz does not divide source " +
                                    std::to_string(rec.rate_hz) + " Hz into an integer ratio");
    const auto ratio = static_cast<std::size_t>(ratio_r);
    if (ratio == 1) return rec;
    Tensor<double> filtered = rec.samples;
    filtfilt_rows(butterworth_design(BandKind::lowpass, 8, 0.45 * target_hz, 0.0, rec.rate_hz), filtered);
    const std::size_t C = rec.channels(), N = rec.length(), M = (N + ratio - 1) / ratio;
    ContinuousRecording out = rec;
    out.rate_hz = target_hz;
    out.samples = Tensor<double>(Shape{C, M});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t m = 0; m < M; ++m) out.samples.at2(c, m) = filtered.at2(c, m * ratio);
    for (auto& o : out.onsets) o = static_cast<std::size_t>(std::llround(static_cast<double>(o) / ratio_r));
    return out;
}

/// Subtract the cross-channel mean at every time index.
inline ContinuousRecording common_average_reference(const ContinuousRecording& rec) {
    rec.validate();
    const std::size_t C = rec.channels(), N = rec.length();
    if (C < 2) throw std::invalid_argument("common_average_reference: needs at least 2 channels");
    ContinuousRecording out = rec;
    for (std::size_t t = 0; t < N; ++t) {
        double m = 0.0;
        for (std::size_t c = 0; c < C; ++c) m += rec.samples.at2(c, t);
        m /= static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) out.samples.at2(c, t) -= m;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Epoching

struct EpochOptions {
    double window_start_s = -2.0;
    double window_end_s = 2.0;
    double baseline_start_s = -2.0;
    double baseline_end_s = 0.0;
    /// Samples this close to either recording edge are not usable (filter transients).
    double edge_guard_s = 0.0;
};

struct EpochSet {
    std::vector<Tensor<double>> epochs;  // [channels x window samples]
    std::vector<std::size_t> kept;       // onset indices that produced an epoch
    std::vector<std::size_t> skipped;    // onset indices too close to an edge
};

inline EpochSet epoch_and_baseline(const ContinuousRecording& rec, const EpochOptions& opt = {}) {
    rec.validate();
    if (!(opt.window_end_s > opt.window_start_s) || opt.baseline_start_s < opt.window_start_s ||
        opt.baseline_end_s > opt.window_end_s || !(opt.baseline_end_s > opt.baseline_start_s))
        throw std::invalid_argument("epoch: baseline must be a non-empty interval inside the window");
    const double fs = rec.rate_hz;
    const auto off = [fs](double s) { return static_cast<std::ptrdiff_t>(std::llround(s * fs)); };
    const std::ptrdiff_t w0 = off(opt.window_start_s), len = off(opt.window_end_s) - w0;
    const std::ptrdiff_t b0 = off(opt.baseline_start_s) - w0, b1 = off(opt.baseline_end_s) - w0;
    const std::ptrdiff_t guard = off(opt.edge_guard_s);
    const auto N = static_cast<std::ptrdiff_t>(rec.length());
    const std::size_t C = rec.channels();

    EpochSet out;
    for (std::size_t i = 0; i < rec.onsets.size(); ++i) {
        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(rec.onsets[i]) + w0;
        if (start < guard || start + len > N - guard) {
            out.skipped.push_back(i);
            continue;
        }
        Tensor<double> ep(Shape{C, static_cast<std::size_t>(len)});
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = rec.samples.data.data() + c * rec.length() + start;
            double base = 0.0;
            for (std::ptrdiff_t t = b0; t < b1; ++t) base += src[t];
            base /= static_cast<double>(b1 - b0);
            for (std::ptrdiff_t t = 0; t < len; ++t) ep.at2(c, static_cast<std::size_t>(t)) = src[t] - base;
        }
        out.epochs.push_back(std::move(ep));
        out.kept.push_back(i);
    }
    return out;
}

/// Slice `length` samples starting `crop_start_s` after onset out of an epoch
/// that begins at `epoch_start_s` relative to onset.
inline Tensor<double> crop_to_T(const Tensor<double>& epoch, double rate_hz, double epoch_start_s = -2.0,
                                double crop_start_s = 0.0, std::size_t length = 500) {
    if (epoch.rank() != 2) throw std::invalid_argument("crop_to_T: epoch must be [channels x time]");
    const auto start = std::llround((crop_start_s - epoch_start_s) * rate_hz);
    if (start < 0 || static_cast<std::size_t>(start) + length > epoch.dim(1))
        throw std::invalid_argument("crop_to_T: epoch of " + std::to_string(epoch.dim(1)) +
                                    " samples too short for a " + std::to_string(length) + "-sample crop at offset " +
                                    std::to_string(start));
    const std::size_t C = epoch.dim(0);
    Tensor<double> out(Shape{C, length});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < length; ++t) out.at2(c, t) = epoch.at2(c, static_cast<std::size_t>(start) + t);
    return out;
}

/// [C x T] -> [2C x (T-1)]: rows 0..C-1 hold x_t for t >= 1, rows C..2C-1 hold x_t - x_{t-1}.
template <class S>
Tensor<S> difference_augment(const Tensor<S>& block) {
    if (block.rank() != 2) throw std::invalid_argument("difference_augment: block must be [channels x time]");
    const std::size_t C = block.dim(0), T = block.dim(1);
    if (T < 2) throw std::invalid_argument("difference_augment: need at least 2 samples");
    Tensor<S> out(Shape{2 * C, T - 1});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 1; t < T; ++t) {
            out.at2(c, t - 1) = block.at2(c, t);
            out.at2(C + c, t - 1) = block.at2(c, t) - block.at2(c, t - 1);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PreprocessConfig {
    double target_rate_hz = 500.0;
    double band_low_hz = 1.0;
    double band_high_hz = 100.0;
    double notch_hz = 50.0;  // <= 0 disables the notch
    int filter_order = 4;
    EpochOptions epoch{.edge_guard_s = 0.5};
    double crop_start_s = 0.0;
    double crop_end_s = 1.0;
    /// Artifact-removal stage (ICA in a full pipeline). Identity by default.
    std::function<ContinuousRecording(const ContinuousRecording&)> artifact_stage;
};

/// downsample -> band-pass -> notch -> CAR -> artifact stage.
inline ContinuousRecording clean_continuous(const ContinuousRecording& rec, const PreprocessConfig& cfg) {
    ContinuousRecording r = downsample(rec, cfg.target_rate_hz);
    r = butterworth_filter(r, FilterSpec::bandpass(cfg.band_low_hz, cfg.band_high_hz, cfg.filter_order));
    if (cfg.notch_hz > 0.0) r = butterworth_filter(r, FilterSpec::notch(cfg.notch_hz, cfg.filter_order));
    r = common_average_reference(r);
    if (cfg.artifact_stage) r = cfg.artifact_stage(r);
    return r;
}

struct PreprocessResult {
    std::vector<TrialTensor> trials;
    std::vector<std::size_t> skipped_onsets;
};

/// Full pipeline for a paired EEG/EMG recording sharing one event list.
/// CAR is applied per modality.
inline PreprocessResult preprocess_pair(const ContinuousRecording& eeg, const ContinuousRecording& emg,
                                        const PreprocessConfig& cfg) {
    if (eeg.onsets != emg.onsets || eeg.tones != emg.tones || std::abs(eeg.rate_hz - emg.rate_hz) > 1e-9)
        throw std::invalid_argument("preprocess: EEG and EMG recordings must share rate and events");
    const auto ce = clean_continuous(eeg, cfg);
    const auto cm = clean_continuous(emg, cfg);
    const auto ee = epoch_and_baseline(ce, cfg.epoch);
    const auto em = epoch_and_baseline(cm, cfg.epoch);
    if (ee.kept != em.kept) throw std::logic_error("preprocess: EEG/EMG epoch sets diverged");
    const auto T = static_cast<std::size_t>(std::llround((cfg.crop_end_s - cfg.crop_start_s) * cfg.target_rate_hz));
    PreprocessResult out;
    out.skipped_onsets = ee.skipped;
    for (std::size_t i = 0; i < ee.kept.size(); ++i) {
        const std::size_t k = ee.kept[i];
        TrialTensor tr;
        tr.eeg = difference_augment(
                     crop_to_T(ee.epochs[i], ce.rate_hz, cfg.epoch.window_start_s, cfg.crop_start_s, T))
                     .template cast<float>();
        tr.emg = difference_augment(
                     crop_to_T(em.epochs[i], cm.rate_hz, cfg.epoch.window_start_s, cfg.crop_start_s, T))
                     .template cast<float>();
        tr.tone = eeg.tones[k];
        tr.subject = eeg.subjects[k];
        out.trials.push_back(std::move(tr));
    }
    return out;
}

}  // namespace catnet::sigproc
