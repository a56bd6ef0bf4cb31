#pragma once

// Dataset container (manifest.json + trials.bin), synthetic tone data and
// channel-subset selection.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "catnet/sigproc.hpp"

namespace catnet::dataio {

namespace fs = std::filesystem;
using json = nlohmann::json;
using sigproc::TrialTensor;

inline constexpr const char* kMagic = "CATNETDS";
inline constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

/// Preprocessed trials with their metadata.
struct Dataset {
    std::string condition = "synthetic";
    double rate_hz = 500.0;
    std::vector<std::string> eeg_names;
    std::vector<std::string> emg_names;
    std::size_t t_prime = 499;
    std::vector<TrialTensor> trials;

    std::size_t eeg_channels() const { return eeg_names.size(); }
    std::size_t emg_channels() const { return emg_names.size(); }

    /// Distinct subject ids, ascending.
    std::vector<int> subjects() const {
        std::set<int> s;
        for (const auto& t : trials) s.insert(t.subject);
        return {s.begin(), s.end()};
    }

    std::vector<int> tones() const {
        std::vector<int> y;
        y.reserve(trials.size());
        for (const auto& t : trials) y.push_back(t.tone);
        return y;
    }

    /// Subject id of every trial, in trial order.
    std::vector<int> trial_subjects() const {
        std::vector<int> s;
        s.reserve(trials.size());
        for (const auto& t : trials) s.push_back(t.subject);
        return s;
    }

    void validate() const {
        static const std::set<std::string> conditions{"audible", "silent", "synthetic"};
        if (!conditions.count(condition)) throw std::invalid_argument("dataset: unknown condition '" + condition + "'");
        if (!(rate_hz > 0)) throw std::invalid_argument("dataset: rate_hz must be positive");
        if (eeg_names.empty() || emg_names.empty()) throw std::invalid_argument("dataset: channel name lists are empty");
        for (std::size_t i = 0; i < trials.size(); ++i) {
            const auto& t = trials[i];
            if (t.eeg.shape != Shape{2 * eeg_channels(), t_prime})
                throw std::invalid_argument("dataset: trial " + std::to_string(i) + " EEG block " +
                                            shape_str(t.eeg.shape) + " but manifest lists " +
                                            std::to_string(eeg_channels()) + " channels x " +
                                            std::to_string(t_prime) + " samples");
            if (t.emg.shape != Shape{2 * emg_channels(), t_prime})
                throw std::invalid_argument("dataset: trial " + std::to_string(i) + " EMG block " +
                                            shape_str(t.emg.shape) + " but manifest lists " +
                                            std::to_string(emg_channels()) + " channels x " +
                                            std::to_string(t_prime) + " samples");
            if (t.tone < 1 || t.tone > 4)
                throw std::invalid_argument("dataset: trial " + std::to_string(i) + " has tone " +
                                            std::to_string(t.tone));
        }
    }

    /// Subset of trials by index, metadata shared.
    Dataset subset(const std::vector<std::size_t>& idx) const {
        Dataset d = *this;
        d.trials.clear();
        d.trials.reserve(idx.size());
        for (std::size_t i : idx) d.trials.push_back(trials.at(i));
        return d;
    }
};

/// Continuous paired recordings, the input of the preprocessing pipeline.
struct RawSession {
    int subject = 0;
    sigproc::ContinuousRecording eeg;  // onsets/tones/subjects shared with emg
    sigproc::ContinuousRecording emg;
};

struct RawDataset {
    std::string condition = "synthetic";
    double rate_hz = 1000.0;
    std::vector<std::string> eeg_names;
    std::vector<std::string> emg_names;
    std::vector<RawSession> sessions;
};

namespace detail {

inline void write_floats(std::ofstream& out, const Buffer<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

inline json read_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(p.string() + ": " + e.what());
    }
    if (j.value("magic", "") != kMagic) throw std::runtime_error(p.string() + ": bad magic, not a CAT-Net dataset");
    if (j.value("version", -1) != kVersion)
        throw std::runtime_error(p.string() + ": unsupported version " + j.value("version", json(-1)).dump());
    if (j.value("endianness", "") != "little") throw std::runtime_error(p.string() + ": payload must be little-endian");
    return j;
}

inline std::vector<char> read_payload(const fs::path& dir, std::uint64_t expected_bytes) {
    const fs::path p = dir / "trials.bin";
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    const auto size = static_cast<std::uint64_t>(in.tellg());
    if (size != expected_bytes)
        throw std::runtime_error(p.string() + ": " + std::to_string(size) + " bytes but manifest requires " +
                                 std::to_string(expected_bytes) + " (" +
                                 (size < expected_bytes ? "truncated at offset " + std::to_string(size)
                                                        : "trailing data from offset " +
                                                              std::to_string(expected_bytes)) +
                                 ")");
    std::vector<char> buf(size);
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(size));
    return buf;
}

/// Copies n floats starting at byte `offset`, rejecting NaN/Inf with their position.
inline std::vector<float> take_floats(const std::vector<char>& buf, std::uint64_t offset, std::size_t n,
                                      const std::string& what) {
    std::vector<float> v(n);
    std::memcpy(v.data(), buf.data() + offset, n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(v[i]))
            throw std::runtime_error("trials.bin: non-finite value in " + what + " at byte offset " +
                                     std::to_string(offset + i * sizeof(float)));
    return v;
}

}  // namespace detail

/// Writes manifest.json and trials.bin (float32 LE, trial -> channel -> sample, EEG block then EMG block).
inline void save(const Dataset& d, const fs::path& dir) {
    d.validate();
    fs::create_directories(dir);
    json j;
    j["magic"] = kMagic;
    j["version"] = kVersion;
    j["layout"] = "trials";
    j["endianness"] = "little";
    j["condition"] = d.condition;
    j["rate_hz"] = d.rate_hz;
    j["t_prime"] = d.t_prime;
    j["eeg_channel_names"] = d.eeg_names;
    j["emg_channel_names"] = d.emg_names;
    j["subjects"] = d.subjects();
    json trials = json::array();
    std::ofstream out(dir / "trials.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "trials.bin").string());
    std::uint64_t offset = 0;
    for (const auto& t : d.trials) {
        trials.push_back({{"offset", offset}, {"tone", t.tone}, {"subject", t.subject}});
        detail::write_floats(out, t.eeg.data);
        detail::write_floats(out, t.emg.data);
        offset += (t.eeg.size() + t.emg.size()) * sizeof(float);
    }
    j["trials"] = std::move(trials);
    out.close();
    detail::write_json(dir / "manifest.json", j);
}

inline Dataset load(const fs::path& dir) {
    const json j = detail::read_manifest(dir);
    if (j.value("layout", "") != "trials")
        throw std::runtime_error("manifest.json: expected layout 'trials', found '" + j.value("layout", "") + "'");
    Dataset d;
    try {
        d.condition = j.at("condition").get<std::string>();
        d.rate_hz = j.at("rate_hz").get<double>();
        d.t_prime = j.at("t_prime").get<std::size_t>();
        d.eeg_names = j.at("eeg_channel_names").get<std::vector<std::string>>();
        d.emg_names = j.at("emg_channel_names").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("manifest.json: ") + e.what());
    }
    const std::size_t ne = 2 * d.eeg_channels() * d.t_prime, nm = 2 * d.emg_channels() * d.t_prime;
    const std::uint64_t stride = (ne + nm) * sizeof(float);
    const auto& tj = j.at("trials");
    const auto buf = detail::read_payload(dir, stride * tj.size());
    d.trials.reserve(tj.size());
    for (std::size_t i = 0; i < tj.size(); ++i) {
        const auto offset = tj[i].at("offset").get<std::uint64_t>();
        if (offset != i * stride)
            throw std::runtime_error("manifest.json: trial " + std::to_string(i) + " offset " +
                                     std::to_string(offset) + " does not match the channel layout (expected " +
                                     std::to_string(i * stride) + ")");
        TrialTensor t;
        t.tone = tj[i].at("tone").get<int>();
        t.subject = tj[i].at("subject").get<int>();
        t.eeg = Tensor<float>({2 * d.eeg_channels(), d.t_prime},
                              detail::take_floats(buf, offset, ne, "trial " + std::to_string(i) + " EEG"));
        t.emg = Tensor<float>({2 * d.emg_channels(), d.t_prime},
                              detail::take_floats(buf, offset + ne * sizeof(float), nm,
                                                  "trial " + std::to_string(i) + " EMG"));
        d.trials.push_back(std::move(t));
    }
    const auto listed = j.value("subjects", std::vector<int>{});
    if (listed != d.subjects()) throw std::runtime_error("manifest.json: subject list disagrees with trial labels");
    d.validate();
    return d;
}

/// Continuous layout: per session EEG [C_e x N] then EMG [C_m x N] float32.
inline void save_raw(const RawDataset& d, const fs::path& dir) {
    fs::create_directories(dir);
    json j;
    j["magic"] = kMagic;
    j["version"] = kVersion;
    j["layout"] = "continuous";
    j["endianness"] = "little";
    j["condition"] = d.condition;
    j["rate_hz"] = d.rate_hz;
    j["eeg_channel_names"] = d.eeg_names;
    j["emg_channel_names"] = d.emg_names;
    json sessions = json::array();
    std::ofstream out(dir / "trials.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "trials.bin").string());
    std::uint64_t offset = 0;
    for (const auto& s : d.sessions) {
        if (s.eeg.channels() != d.eeg_names.size() || s.emg.channels() != d.emg_names.size() ||
            s.eeg.length() != s.emg.length())
            throw std::invalid_argument("raw dataset: session block shapes disagree with channel lists");
        sessions.push_back({{"offset", offset},
                            {"subject", s.subject},
                            {"samples", s.eeg.length()},
                            {"onsets", s.eeg.onsets},
                            {"tones", s.eeg.tones}});
        detail::write_floats(out, s.eeg.samples.cast<float>().data);
        detail::write_floats(out, s.emg.samples.cast<float>().data);
        offset += (s.eeg.samples.size() + s.emg.samples.size()) * sizeof(float);
    }
    j["sessions"] = std::move(sessions);
    out.close();
    detail::write_json(dir / "manifest.json", j);
}

inline RawDataset load_raw(const fs::path& dir) {
    const json j = detail::read_manifest(dir);
    if (j.value("layout", "") != "continuous")
        throw std::runtime_error("manifest.json: expected layout 'continuous', found '" + j.value("layout", "") + "'");
    RawDataset d;
    d.condition = j.at("condition").get<std::string>();
    d.rate_hz = j.at("rate_hz").get<double>();
    d.eeg_names = j.at("eeg_channel_names").get<std::vector<std::string>>();
    d.emg_names = j.at("emg_channel_names").get<std::vector<std::string>>();
    const std::size_t ce = d.eeg_names.size(), cm = d.emg_names.size();
    std::uint64_t total = 0;
    for (const auto& s : j.at("sessions")) total += (ce + cm) * s.at("samples").get<std::uint64_t>() * sizeof(float);
    const auto buf = detail::read_payload(dir, total);
    std::uint64_t expect = 0;
    for (const auto& sj : j.at("sessions")) {
        const auto n = sj.at("samples").get<std::size_t>();
        const auto offset = sj.at("offset").get<std::uint64_t>();
        if (offset != expect) throw std::runtime_error("manifest.json: session offset " + std::to_string(offset) +
                                                       " does not match the channel layout");
        RawSession s;
        s.subject = sj.at("subject").get<int>();
        auto fill = [&](sigproc::ContinuousRecording& r, std::size_t C, std::uint64_t off,
                        const std::vector<std::string>& names, const char* what) {
            auto v = detail::take_floats(buf, off, C * n, what);
            r.samples = Tensor<double>({C, n}, std::vector<double>(v.begin(), v.end()));
            r.rate_hz = d.rate_hz;
            r.channel_names = names;
            r.onsets = sj.at("onsets").get<std::vector<std::size_t>>();
            r.tones = sj.at("tones").get<std::vector<int>>();
            r.subjects.assign(r.onsets.size(), s.subject);
            r.validate();
        };
        fill(s.eeg, ce, offset, d.eeg_names, "session EEG");
        fill(s.emg, cm, offset + ce * n * sizeof(float), d.emg_names, "session EMG");
        expect = offset + (ce + cm) * n * sizeof(float);
        d.sessions.push_back(std::move(s));
    }
    return d;
}

/// Layout tag of a container directory ("trials" or "continuous").
inline std::string layout_of(const fs::path& dir) { return detail::read_manifest(dir).value("layout", ""); }

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
    std::size_t n_subjects = 10;
    std::size_t trials_per_subject = 480;
    std::size_t eeg_channels = 20;
    std::size_t emg_channels = 5;
    std::size_t samples = 500;  // T before difference augmentation
    double rate_hz = 500.0;
    double snr = 0.5;  // signal power / noise power on informative channels
    double subject_shift_scale = 0.5;
    double amplitude_jitter = 0.2;
    std::vector<std::size_t> informative_eeg{2, 5, 9, 13, 17};
    std::vector<std::size_t> informative_emg{0, 2};
    std::uint64_t seed = 7;

    void validate() const {
        if (!n_subjects || !trials_per_subject || !eeg_channels || !emg_channels)
            throw std::invalid_argument("synth: counts must be positive");
        if (samples < 2) throw std::invalid_argument("synth: need at least 2 samples");
        if (!(snr > 0)) throw std::invalid_argument("synth: snr must be > 0");
        if (subject_shift_scale < 0 || amplitude_jitter < 0 || amplitude_jitter >= 1)
            throw std::invalid_argument("synth: invalid shift or jitter");
        for (auto c : informative_eeg)
            if (c >= eeg_channels) throw std::invalid_argument("synth: informative EEG channel out of range");
        for (auto c : informative_emg)
            if (c >= emg_channels) throw std::invalid_argument("synth: informative EMG channel out of range");
    }
};

/// Tone contour on t in [0, 1): level, rising, dipping, falling, each under a Hann envelope.
inline double tone_contour(int tone, double t) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t);
    switch (tone) {
        case 1: return hann;
        case 2: return hann * (2.0 * t - 1.0);
        case 3: return hann * (8.0 * (t - 0.5) * (t - 0.5) - 1.0);
        case 4: return hann * (1.0 - 2.0 * t);
        default: throw std::invalid_argument("tone must be in 1..4");
    }
}

/// Contour sampled at T points, scaled to unit RMS.
inline std::vector<double> tone_template(int tone, std::size_t T) {
    std::vector<double> v(T);
    double ss = 0.0;
    for (std::size_t i = 0; i < T; ++i) ss += (v[i] = tone_contour(tone, static_cast<double>(i) / T)) * v[i];
    const double rms = std::sqrt(ss / static_cast<double>(T));
    for (auto& x : v) x /= rms;
    return v;
}

inline std::vector<std::string> default_names(const char* prefix, std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(prefix + std::to_string(i + 1));
    return v;
}

namespace detail {

struct SubjectShift {
    std::vector<double> gain_e, off_e, gain_m, off_m;
};

template <class Rng>
SubjectShift draw_shift(const SynthConfig& c, Rng& rng) {
    std::normal_distribution<double> nd;
    SubjectShift s;
    auto fill = [&](std::vector<double>& gain, std::vector<double>& off, std::size_t C) {
        for (std::size_t i = 0; i < C; ++i) {
            gain.push_back(std::exp(c.subject_shift_scale * nd(rng)));
            off.push_back(c.subject_shift_scale * nd(rng));
        }
    };
    fill(s.gain_e, s.off_e, c.eeg_channels);
    fill(s.gain_m, s.off_m, c.emg_channels);
    return s;
}

/// Channel loadings of the latent contour: informative channels get a fixed
/// random sign and magnitude in [0.5, 1], others 0.
template <class Rng>
std::vector<double> loadings(std::size_t C, const std::vector<std::size_t>& informative, Rng& rng) {
    std::uniform_real_distribution<double> mag(0.5, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> w(C, 0.0);
    for (auto c : informative) w[c] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return w;
}

template <class Rng>
Tensor<double> synth_block(const std::vector<double>& contour, const std::vector<double>& load, double amp,
                           const std::vector<double>& gain, const std::vector<double>& off, double sigma, Rng& rng) {
    const std::size_t C = load.size(), T = contour.size();
    std::normal_distribution<double> nd(0.0, sigma);
    Tensor<double> x({C, T});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
            x.data[c * T + t] = gain[c] * (amp * load[c] * contour[t] + nd(rng)) + off[c];
    return x;
}

}  // namespace detail

/// Deterministic in cfg.seed. Trials are grouped by subject; tones balanced within each subject.
inline Dataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Dataset d;
    d.condition = "synthetic";
    d.rate_hz = cfg.rate_hz;
    d.t_prime = cfg.samples - 1;
    d.eeg_names = default_names("EEG", cfg.eeg_channels);
    d.emg_names = default_names("EMG", cfg.emg_channels);
    const auto load_e = detail::loadings(cfg.eeg_channels, cfg.informative_eeg, rng);
    const auto load_m = detail::loadings(cfg.emg_channels, cfg.informative_emg, rng);
    std::vector<std::vector<double>> templates;
    for (int k = 1; k <= 4; ++k) templates.push_back(tone_template(k, cfg.samples));
    const double sigma = 1.0 / std::sqrt(cfg.snr);
    std::uniform_real_distribution<double> jitter(1.0 - cfg.amplitude_jitter, 1.0 + cfg.amplitude_jitter);
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        const auto shift = detail::draw_shift(cfg, rng);
        std::vector<int> tones(cfg.trials_per_subject);
        for (std::size_t i = 0; i < tones.size(); ++i) tones[i] = static_cast<int>(i % 4) + 1;
        std::shuffle(tones.begin(), tones.end(), rng);
        for (int tone : tones) {
            const double amp = jitter(rng);
            const auto& tpl = templates[tone - 1];
            TrialTensor t;
            t.tone = tone;
            t.subject = static_cast<int>(s) + 1;
            t.eeg = sigproc::difference_augment(
                        detail::synth_block(tpl, load_e, amp, shift.gain_e, shift.off_e, sigma, rng))
                        .cast<float>();
            t.emg = sigproc::difference_augment(
                        detail::synth_block(tpl, load_m, amp, shift.gain_m, shift.off_m, sigma, rng))
                        .cast<float>();
            d.trials.push_back(std::move(t));
        }
    }
    return d;
}

struct ContinuousSynthConfig {
    SynthConfig base;
    double rate_hz = 1000.0;
    double gap_s = 4.5;  // onset spacing
    double lead_s = 3.0;  // silence before the first onset and after the last
};

/// Continuous recordings (one session per subject) whose epochs, once
/// preprocessed, carry the tone contour in [0, 1 s) after each onset.
inline RawDataset synth_continuous(const ContinuousSynthConfig& c) {
    const auto& cfg = c.base;
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    RawDataset d;
    d.rate_hz = c.rate_hz;
    d.eeg_names = default_names("EEG", cfg.eeg_channels);
    d.emg_names = default_names("EMG", cfg.emg_channels);
    const auto load_e = detail::loadings(cfg.eeg_channels, cfg.informative_eeg, rng);
    const auto load_m = detail::loadings(cfg.emg_channels, cfg.informative_emg, rng);
    const auto trial_len = static_cast<std::size_t>(std::llround(c.rate_hz));
    std::vector<std::vector<double>> templates;
    for (int k = 1; k <= 4; ++k) templates.push_back(tone_template(k, trial_len));
    const double sigma = 1.0 / std::sqrt(cfg.snr);
    const auto gap = static_cast<std::size_t>(std::llround(c.gap_s * c.rate_hz));
    const auto lead = static_cast<std::size_t>(std::llround(c.lead_s * c.rate_hz));
    std::uniform_real_distribution<double> jitter(1.0 - cfg.amplitude_jitter, 1.0 + cfg.amplitude_jitter);
    std::normal_distribution<double> nd(0.0, sigma);
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        const auto shift = detail::draw_shift(cfg, rng);
        const std::size_t n_tr = cfg.trials_per_subject;
        const std::size_t N = 2 * lead + (n_tr - 1) * gap + trial_len;
        RawSession sess;
        sess.subject = static_cast<int>(s) + 1;
        std::vector<double> latent(N, 0.0);
        std::vector<std::size_t> onsets;
        std::vector<int> tones(n_tr);
        for (std::size_t i = 0; i < n_tr; ++i) tones[i] = static_cast<int>(i % 4) + 1;
        std::shuffle(tones.begin(), tones.end(), rng);
        for (std::size_t i = 0; i < n_tr; ++i) {
            const std::size_t on = lead + i * gap;
            onsets.push_back(on);
            const double amp = jitter(rng);
            for (std::size_t t = 0; t < trial_len; ++t) latent[on + t] = amp * templates[tones[i] - 1][t];
        }
        auto make = [&](const std::vector<double>& load, const std::vector<double>& gain,
                        const std::vector<double>& off, const std::vector<std::string>& names) {
            sigproc::ContinuousRecording r;
            const std::size_t C = load.size();
            r.samples = Tensor<double>({C, N});
            for (std::size_t ch = 0; ch < C; ++ch)
                for (std::size_t t = 0; t < N; ++t)
                    r.samples.data[ch * N + t] = gain[ch] * (load[ch] * latent[t] + nd(rng)) + off[ch];
            r.rate_hz = c.rate_hz;
            r.channel_names = names;
            r.onsets = onsets;
            r.tones = tones;
            r.subjects.assign(n_tr, sess.subject);
            return r;
        };
        sess.eeg = make(load_e, shift.gain_e, shift.off_e, d.eeg_names);
        sess.emg = make(load_m, shift.gain_m, shift.off_m, d.emg_names);
        d.sessions.push_back(std::move(sess));
    }
    return d;
}

/// Runs the preprocessing pipeline on every session.
inline Dataset preprocess(const RawDataset& raw, const sigproc::PreprocessConfig& cfg,
                          std::vector<std::size_t>* skipped = nullptr) {
    Dataset d;
    d.condition = raw.condition;
    d.rate_hz = cfg.target_rate_hz;
    d.eeg_names = raw.eeg_names;
    d.emg_names = raw.emg_names;
    const auto T = static_cast<std::size_t>(std::llround((cfg.crop_end_s - cfg.crop_start_s) * cfg.target_rate_hz));
    if (T < 2) throw std::invalid_argument("preprocess: crop window shorter than 2 samples");
    d.t_prime = T - 1;
    for (const auto& s : raw.sessions) {
        auto res = sigproc::preprocess_pair(s.eeg, s.emg, cfg);
        if (skipped) skipped->insert(skipped->end(), res.skipped_onsets.begin(), res.skipped_onsets.end());
        for (auto& t : res.trials) d.trials.push_back(std::move(t));
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Channel selection

enum class Modality { eeg, emg };

/// Keeps the named channels (raw and difference rows) in the given order.
inline Dataset select_channels(const Dataset& d, const std::vector<std::string>& keep, Modality m = Modality::eeg) {
    const auto& names = m == Modality::eeg ? d.eeg_names : d.emg_names;
    std::vector<std::size_t> idx;
    std::set<std::string> seen;
    for (const auto& n : keep) {
        auto it = std::find(names.begin(), names.end(), n);
        if (it == names.end()) throw std::invalid_argument("select_channels: unknown channel '" + n + "'");
        if (!seen.insert(n).second) throw std::invalid_argument("select_channels: channel '" + n + "' listed twice");
        idx.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    if (idx.empty()) throw std::invalid_argument("select_channels: empty channel list");
    Dataset out = d;
    (m == Modality::eeg ? out.eeg_names : out.emg_names) = keep;
    const std::size_t C = names.size(), K = idx.size(), T = d.t_prime;
    for (auto& t : out.trials) {
        auto& block = m == Modality::eeg ? t.eeg : t.emg;
        Tensor<float> sel({2 * K, T});
        for (std::size_t k = 0; k < K; ++k) {
            std::copy_n(block.data.begin() + idx[k] * T, T, sel.data.begin() + k * T);
            std::copy_n(block.data.begin() + (C + idx[k]) * T, T, sel.data.begin() + (K + k) * T);
        }
        block = std::move(sel);
    }
    return out;
}

}  // namespace catnet::dataio
