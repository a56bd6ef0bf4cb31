#pragma once

// Splits, confusion-matrix metrics, channel ranking and report tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "catnet/model.hpp"

namespace catnet::evaluation {

// ---------------------------------------------------------------------------
// Confusion matrix and metrics

/// Rows are true classes, columns predictions; labels are 1-based.
struct ConfusionMatrix {
    std::size_t classes = 4;
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(std::size_t k = 4) : classes(k), counts(k * k, 0) {
        if (k < 2) throw std::invalid_argument("confusion matrix needs at least 2 classes");
    }

    static ConfusionMatrix from(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t k = 4) {
        if (truth.size() != predicted.size())
            throw std::invalid_argument("confusion matrix: " + std::to_string(truth.size()) + " labels vs " +
                                        std::to_string(predicted.size()) + " predictions");
        ConfusionMatrix cm(k);
        for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
        return cm;
    }

    void add(int truth, int predicted, std::int64_t n = 1) {
        auto ok = [&](int v) { return v >= 1 && static_cast<std::size_t>(v) <= classes; };
        if (!ok(truth) || !ok(predicted))
            throw std::invalid_argument("confusion matrix: label pair (" + std::to_string(truth) + ", " +
                                        std::to_string(predicted) + ") outside 1.." + std::to_string(classes));
        if (n < 0) throw std::invalid_argument("confusion matrix: negative count");
        at(truth - 1, predicted - 1) += n;
    }

    std::int64_t& at(std::size_t r, std::size_t c) { return counts[r * classes + c]; }
    std::int64_t at(std::size_t r, std::size_t c) const { return counts[r * classes + c]; }

    std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
    std::int64_t row_sum(std::size_t r) const {
        std::int64_t s = 0;
        for (std::size_t c = 0; c < classes; ++c) s += at(r, c);
        return s;
    }
    std::int64_t col_sum(std::size_t c) const {
        std::int64_t s = 0;
        for (std::size_t r = 0; r < classes; ++r) s += at(r, c);
        return s;
    }
    std::int64_t trace() const {
        std::int64_t s = 0;
        for (std::size_t c = 0; c < classes; ++c) s += at(c, c);
        return s;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (o.classes != classes) throw std::invalid_argument("confusion matrix: class count mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        return *this;
    }
};

struct Metrics {
    std::vector<double> precision, recall, f1;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double accuracy = 0.0;
    double kappa = 0.0;
    std::int64_t total = 0;
};

/// (p_o - p_e) / (1 - p_e). A matrix where chance agreement is already 1 has kappa 1 if it is also all-correct.
inline double cohen_kappa(const ConfusionMatrix& cm) {
    const double n = static_cast<double>(cm.total());
    if (n <= 0) throw std::invalid_argument("kappa: empty confusion matrix");
    const double po = static_cast<double>(cm.trace()) / n;
    double pe = 0.0;
    for (std::size_t c = 0; c < cm.classes; ++c)
        pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
    pe /= n * n;
    if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
    return (po - pe) / (1.0 - pe);
}

/// Per-class and macro precision/recall/F1, accuracy and kappa.
/// An unpredicted class has precision 0; an absent class has recall 0; F1 is 0 when both are 0.
inline Metrics metrics(const ConfusionMatrix& cm) {
    Metrics m;
    m.total = cm.total();
    if (m.total <= 0) throw std::invalid_argument("metrics: empty confusion matrix");
    const std::size_t K = cm.classes;
    for (std::size_t c = 0; c < K; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        const auto cs = cm.col_sum(c), rs = cm.row_sum(c);
        const double p = cs > 0 ? tp / static_cast<double>(cs) : 0.0;
        const double r = rs > 0 ? tp / static_cast<double>(rs) : 0.0;
        m.precision.push_back(p);
        m.recall.push_back(r);
        m.f1.push_back(p + r > 0 ? 2.0 * p * r / (p + r) : 0.0);
    }
    auto mean = [K](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / K; };
    m.macro_precision = mean(m.precision);
    m.macro_recall = mean(m.recall);
    m.macro_f1 = mean(m.f1);
    m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(m.total);
    m.kappa = cohen_kappa(cm);
    return m;
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
    std::string label;  // "fold1", "S3", ...
    std::vector<std::size_t> train, test;
};

/// Stratified k folds. Trials are ordered by tone, then subject, then a seeded
/// shuffle, and dealt round-robin, so each fold gets floor or ceil of every
/// tone's share and of every (subject, tone) cell.
inline std::vector<std::vector<std::size_t>> kfold_split(const std::vector<int>& tones, const std::vector<int>& subjects,
                                                         std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
    if (tones.size() != subjects.size()) throw std::invalid_argument("kfold: tones and subjects differ in length");
    std::map<int, std::map<int, std::vector<std::size_t>>> cells;  // tone -> subject -> trials
    std::map<int, std::size_t> per_tone;
    for (std::size_t i = 0; i < tones.size(); ++i) {
        cells[tones[i]][subjects[i]].push_back(i);
        ++per_tone[tones[i]];
    }
    for (auto [tone, n] : per_tone)
        if (n < k)
            throw std::invalid_argument("kfold: tone " + std::to_string(tone) + " has " + std::to_string(n) +
                                        " trials, fewer than k = " + std::to_string(k));
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t next = 0;
    for (auto& [tone, by_subject] : cells)
        for (auto& [subject, idx] : by_subject) {
            std::shuffle(idx.begin(), idx.end(), rng);
            for (auto i : idx) folds[next++ % k].push_back(i);
        }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

/// Train = all other folds, test = fold i.
inline std::vector<Split> kfold_splits(const std::vector<int>& tones, const std::vector<int>& subjects, std::size_t k,
                                       std::uint64_t seed) {
    auto folds = kfold_split(tones, subjects, k, seed);
    std::vector<Split> out;
    for (std::size_t i = 0; i < k; ++i) {
        Split s;
        s.label = "fold" + std::to_string(i + 1);
        s.test = folds[i];
        for (std::size_t j = 0; j < k; ++j)
            if (j != i) s.train.insert(s.train.end(), folds[j].begin(), folds[j].end());
        std::sort(s.train.begin(), s.train.end());
        out.push_back(std::move(s));
    }
    return out;
}

/// One split per subject (ascending id), holding that subject out.
inline std::vector<Split> loso_split(const std::vector<int>& subjects) {
    std::vector<int> ids(subjects.begin(), subjects.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 2) throw std::invalid_argument("loso: need at least 2 subjects, got " + std::to_string(ids.size()));
    std::vector<Split> out;
    for (int id : ids) {
        Split s;
        s.label = "S" + std::to_string(id);
        for (std::size_t i = 0; i < subjects.size(); ++i) (subjects[i] == id ? s.test : s.train).push_back(i);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Channel ranking

/// Input-channel weights from feature gates: w_ch = sum_f gate_f |(W1 W2)[row, f]|,
/// summed over the raw row ch and the difference row C + ch, then scaled to mean 1.
/// W1 is [2C x F1], W2 [F1 x F2], gate [F2].
inline std::vector<double> channel_attribution(const Tensor<double>& w1, const Tensor<double>& w2,
                                               const std::vector<double>& gate) {
    if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != w2.dim(0) || w2.dim(1) != gate.size() || w1.dim(0) % 2)
        throw std::invalid_argument("channel attribution: shapes " + shape_str(w1.shape) + ", " +
                                    shape_str(w2.shape) + " and " + std::to_string(gate.size()) +
                                    " gates are inconsistent");
    const std::size_t R = w1.dim(0), C = R / 2, F = gate.size();
    Eigen::MatrixXd P = as_mat(w1.data.data(), R, w1.dim(1)) * as_mat(w2.data.data(), w2.dim(0), F);
    std::vector<double> w(C, 0.0);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t f = 0; f < F; ++f) w[r % C] += gate[f] * std::abs(P(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)));
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(C);
    if (mean > 0)
        for (auto& v : w) v /= mean;
    return w;
}

/// Attribution for a trained model's EEG encoder, given gates averaged over an evaluation set.
template <class S>
std::vector<double> eeg_channel_weights(const CatNet<S>& model, const std::vector<double>& mean_gate) {
    return channel_attribution(model.params().get("eeg.conv1.w").value.template cast<double>(),
                               model.params().get("eeg.conv2.w").value.template cast<double>(), mean_gate);
}

struct RankedChannel {
    std::string name;
    double weight = 0.0;
    bool operator==(const RankedChannel&) const = default;
};

/// Channels sorted by descending weight (stable: ties keep input order); the first k
/// are returned, all of them when k == 0.
inline std::vector<RankedChannel> rank_channels(const std::vector<std::string>& names,
                                                const std::vector<double>& weights, std::size_t k = 0) {
    if (names.size() != weights.size())
        throw std::invalid_argument("rank_channels: " + std::to_string(names.size()) + " names vs " +
                                    std::to_string(weights.size()) + " weights");
    if (k > names.size())
        throw std::invalid_argument("rank_channels: k = " + std::to_string(k) + " exceeds " +
                                    std::to_string(names.size()) + " channels");
    std::vector<RankedChannel> r;
    for (std::size_t i = 0; i < names.size(); ++i) r.push_back({names[i], weights[i]});
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
    if (k) r.resize(k);
    return r;
}

// ---------------------------------------------------------------------------
// Reports

struct ToneRow {
    std::string tone;  // "1".."4" or "macro"
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool operator==(const ToneRow&) const = default;
};

struct SubjectRow {
    std::string subject;  // "S1".. or "Avg"
    double accuracy = 0.0;
    bool operator==(const SubjectRow&) const = default;
};

inline std::vector<ToneRow> tone_rows(const Metrics& m) {
    std::vector<ToneRow> rows;
    for (std::size_t c = 0; c < m.precision.size(); ++c)
        rows.push_back({std::to_string(c + 1), m.precision[c], m.recall[c], m.f1[c]});
    rows.push_back({"macro", m.macro_precision, m.macro_recall, m.macro_f1});
    return rows;
}

/// Per-subject rows plus an "Avg" row with their mean.
inline std::vector<SubjectRow> subject_rows(const std::vector<std::pair<std::string, double>>& acc) {
    if (acc.empty()) throw std::invalid_argument("subject report: no subjects");
    std::vector<SubjectRow> rows;
    double s = 0.0;
    for (const auto& [name, a] : acc) {
        rows.push_back({name, a});
        s += a;
    }
    rows.push_back({"Avg", s / static_cast<double>(acc.size())});
    return rows;
}

namespace detail {
inline std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& header,
                                                       std::size_t cols) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw std::invalid_argument("csv: expected header '" + header + "', got '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != cols)
            throw std::invalid_argument("csv line " + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                                        " fields, got " + std::to_string(f.size()));
        rows.push_back(std::move(f));
    }
    return rows;
}

inline double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw std::invalid_argument("csv: bad number '" + s + "'");
    return v;
}

inline std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
}
}  // namespace detail

inline constexpr const char* kToneHeader = "tone,precision,recall,f1";
inline constexpr const char* kSubjectHeader = "subject,accuracy";

inline std::string tone_csv(const std::vector<ToneRow>& rows) {
    std::ostringstream os;
    os << kToneHeader << '\n';
    for (const auto& r : rows)
        os << r.tone << ',' << detail::num(r.precision) << ',' << detail::num(r.recall) << ',' << detail::num(r.f1)
           << '\n';
    return os.str();
}

inline std::vector<ToneRow> parse_tone_csv(const std::string& text) {
    std::vector<ToneRow> rows;
    for (const auto& f : detail::parse_csv(text, kToneHeader, 4))
        rows.push_back({f[0], detail::to_double(f[1]), detail::to_double(f[2]), detail::to_double(f[3])});
    return rows;
}

inline std::string subject_csv(const std::vector<SubjectRow>& rows) {
    std::ostringstream os;
    os << kSubjectHeader << '\n';
    for (const auto& r : rows) os << r.subject << ',' << detail::num(r.accuracy) << '\n';
    return os.str();
}

inline std::vector<SubjectRow> parse_subject_csv(const std::string& text) {
    std::vector<SubjectRow> rows;
    for (const auto& f : detail::parse_csv(text, kSubjectHeader, 2)) rows.push_back({f[0], detail::to_double(f[1])});
    return rows;
}

/// Aligned text table, values in percent with two decimals.
inline std::string tone_table(const std::vector<ToneRow>& rows, const std::string& title = "") {
    std::ostringstream os;
    if (!title.empty()) os << title << '\n';
    os << std::left << std::setw(8) << "Tone" << std::right << std::setw(11) << "Precision" << std::setw(9)
       << "Recall" << std::setw(9) << "F1" << '\n';
    for (const auto& r : rows)
        os << std::left << std::setw(8) << r.tone << std::right << std::setw(11) << detail::pct(r.precision)
           << std::setw(9) << detail::pct(r.recall) << std::setw(9) << detail::pct(r.f1) << '\n';
    return os.str();
}

/// One column per subject followed by Avg.
inline std::string subject_table(const std::vector<SubjectRow>& rows, const std::string& title = "") {
    std::ostringstream os;
    if (!title.empty()) os << title << '\n';
    os << std::left << std::setw(10) << "Subject";
    for (const auto& r : rows) os << std::right << std::setw(8) << r.subject;
    os << '\n' << std::left << std::setw(10) << "Accuracy";
    for (const auto& r : rows) os << std::right << std::setw(8) << detail::pct(r.accuracy);
    os << '\n';
    return os.str();
}

}  // namespace catnet::evaluation
