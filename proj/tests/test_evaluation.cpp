#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "catnet/evaluation.hpp"
#include "channel_weights_fixture.hpp"

using namespace catnet;
using namespace catnet::evaluation;

namespace {

// Kappa straight from the definition, looping over every trial pair of labels.
double kappa_by_enumeration(const ConfusionMatrix& cm) {
    std::vector<int> truth, pred;
    for (std::size_t r = 0; r < cm.classes; ++r)
        for (std::size_t c = 0; c < cm.classes; ++c)
            for (std::int64_t n = 0; n < cm.at(r, c); ++n) {
                truth.push_back(static_cast<int>(r));
                pred.push_back(static_cast<int>(c));
            }
    const double N = static_cast<double>(truth.size());
    double agree = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) agree += truth[i] == pred[i];
    const double po = agree / N;
    double pe = 0.0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            a += truth[i] == static_cast<int>(k);
            b += pred[i] == static_cast<int>(k);
        }
        pe += (a / N) * (b / N);
    }
    return (po - pe) / (1.0 - pe);
}

ConfusionMatrix random_matrix(std::mt19937& rng) {
    std::uniform_int_distribution<int> cnt(0, 12);
    ConfusionMatrix cm(4);
    for (auto& v : cm.counts) v = cnt(rng);
    cm.at(0, 0) += 1;  // never empty
    return cm;
}

}  // namespace

TEST(Metrics, DiagonalIsPerfect) {
    ConfusionMatrix cm(4);
    for (int c = 1; c <= 4; ++c) cm.add(c, c, 7);
    auto m = metrics(cm);
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_EQ(m.precision[c], 1.0);
        EXPECT_EQ(m.recall[c], 1.0);
        EXPECT_EQ(m.f1[c], 1.0);
    }
    EXPECT_EQ(m.kappa, 1.0);
    EXPECT_EQ(m.accuracy, 1.0);
}

TEST(Metrics, UniformMatrixHasZeroKappa) {
    ConfusionMatrix cm(4);
    std::fill(cm.counts.begin(), cm.counts.end(), 5);
    EXPECT_NEAR(metrics(cm).kappa, 0.0, 1e-15);
}

TEST(Metrics, KappaMatchesEnumerationOnRandomMatrices) {
    std::mt19937 rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        auto cm = random_matrix(rng);
        worst = std::max(worst, std::abs(cohen_kappa(cm) - kappa_by_enumeration(cm)));
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(Metrics, KappaInvariantUnderScaling) {
    std::mt19937 rng(5);
    for (int i = 0; i < 50; ++i) {
        auto cm = random_matrix(rng);
        auto scaled = cm;
        for (auto& v : scaled.counts) v *= 3;
        EXPECT_NEAR(cohen_kappa(cm), cohen_kappa(scaled), 1e-12);
    }
}

TEST(Metrics, MacroF1IsMeanOfPerClass) {
    std::mt19937 rng(6);
    auto m = metrics(random_matrix(rng));
    EXPECT_DOUBLE_EQ(m.macro_f1, std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / 4.0);
}

TEST(Metrics, UnpredictedClassHasZeroPrecision) {
    ConfusionMatrix cm(4);
    cm.add(1, 1, 3);
    cm.add(2, 1, 2);
    cm.add(3, 3, 1);
    cm.add(4, 4, 1);
    auto m = metrics(cm);
    EXPECT_EQ(m.precision[1], 0.0);
    EXPECT_EQ(m.recall[1], 0.0);
    EXPECT_EQ(m.f1[1], 0.0);
    EXPECT_DOUBLE_EQ(m.precision[0], 0.6);
}

TEST(Metrics, RejectsEmptyAndBadLabels) {
    EXPECT_THROW(metrics(ConfusionMatrix(4)), std::invalid_argument);
    ConfusionMatrix cm(4);
    EXPECT_THROW(cm.add(0, 1), std::invalid_argument);
    EXPECT_THROW(cm.add(1, 5), std::invalid_argument);
    EXPECT_THROW(ConfusionMatrix::from({1, 2}, {1}), std::invalid_argument);
}

TEST(KFold, PartitionsAndStratifies) {
    std::vector<int> tones, subjects;
    for (int s = 1; s <= 5; ++s)
        for (int i = 0; i < 20; ++i) {
            tones.push_back(i % 4 + 1);
            subjects.push_back(s);
        }
    auto folds = kfold_split(tones, subjects, 5, 3);
    ASSERT_EQ(folds.size(), 5u);
    std::vector<int> seen(tones.size(), 0);
    for (const auto& f : folds) {
        EXPECT_EQ(f.size(), 20u);
        for (auto i : f) ++seen[i];
        for (int t = 1; t <= 4; ++t) {
            const auto n = std::count_if(f.begin(), f.end(), [&](std::size_t i) { return tones[i] == t; });
            EXPECT_EQ(n, 5);
        }
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST(KFold, UnevenCountsStayWithinOne) {
    std::mt19937 rng(11);
    std::vector<int> tones, subjects;
    for (int i = 0; i < 157; ++i) {
        tones.push_back(static_cast<int>(rng() % 4) + 1);
        subjects.push_back(static_cast<int>(rng() % 3) + 1);
    }
    for (int t = 1; t <= 4; ++t)
        if (std::count(tones.begin(), tones.end(), t) < 5) GTEST_SKIP();
    auto folds = kfold_split(tones, subjects, 5, 1);
    for (int t = 1; t <= 4; ++t) {
        const double ideal = static_cast<double>(std::count(tones.begin(), tones.end(), t)) / 5.0;
        for (const auto& f : folds) {
            const auto n = std::count_if(f.begin(), f.end(), [&](std::size_t i) { return tones[i] == t; });
            EXPECT_LT(std::abs(static_cast<double>(n) - ideal), 1.0);
        }
    }
    std::size_t lo = 1000, hi = 0;
    for (const auto& f : folds) lo = std::min(lo, f.size()), hi = std::max(hi, f.size());
    EXPECT_LE(hi - lo, 1u);
}

TEST(KFold, SeedDeterminesFolds) {
    std::vector<int> tones(40), subjects(40, 1);
    for (int i = 0; i < 40; ++i) tones[i] = i % 4 + 1;
    EXPECT_EQ(kfold_split(tones, subjects, 5, 9), kfold_split(tones, subjects, 5, 9));
    EXPECT_NE(kfold_split(tones, subjects, 5, 9), kfold_split(tones, subjects, 5, 10));
}

TEST(KFold, RejectsSmallClassesAndBadK) {
    std::vector<int> tones{1, 1, 2, 2, 3, 3, 4, 4}, subjects(8, 1);
    EXPECT_THROW(kfold_split(tones, subjects, 3, 1), std::invalid_argument);
    EXPECT_THROW(kfold_split(tones, subjects, 1, 1), std::invalid_argument);
    EXPECT_NO_THROW(kfold_split(tones, subjects, 2, 1));
}

TEST(KFold, SplitsUseOtherFoldsForTraining) {
    std::vector<int> tones(50), subjects(50, 2);
    for (int i = 0; i < 50; ++i) tones[i] = i % 4 + 1;
    for (const auto& s : kfold_splits(tones, subjects, 5, 4)) {
        EXPECT_EQ(s.train.size() + s.test.size(), 50u);
        std::vector<std::size_t> common;
        std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(),
                              std::back_inserter(common));
        EXPECT_TRUE(common.empty());
    }
}

TEST(Loso, OneSplitPerSubject) {
    std::vector<int> subjects;
    for (int i = 0; i < 100; ++i) subjects.push_back(i % 10 + 1);
    auto splits = loso_split(subjects);
    ASSERT_EQ(splits.size(), 10u);
    std::set<std::size_t> tested;
    for (std::size_t k = 0; k < splits.size(); ++k) {
        EXPECT_EQ(splits[k].label, "S" + std::to_string(k + 1));
        EXPECT_EQ(splits[k].test.size(), 10u);
        for (auto i : splits[k].test) {
            EXPECT_EQ(subjects[i], static_cast<int>(k + 1));
            tested.insert(i);
        }
        for (auto i : splits[k].train) EXPECT_NE(subjects[i], static_cast<int>(k + 1));
    }
    EXPECT_EQ(tested.size(), 100u);
    EXPECT_THROW(loso_split(std::vector<int>(5, 3)), std::invalid_argument);
}

TEST(RankChannels, ReferenceWeightsTopFive) {
    std::vector<std::string> names;
    std::vector<double> w;
    for (const auto& [n, v] : reference_channel_weights()) names.push_back(n), w.push_back(v);
    ASSERT_EQ(names.size(), 50u);
    auto top = rank_channels(names, w, 5);
    std::vector<std::string> got;
    for (const auto& r : top) got.push_back(r.name);
    EXPECT_EQ(got, (std::vector<std::string>{"AF7", "P03", "P06", "F7", "FC6"}));
    EXPECT_DOUBLE_EQ(top[0].weight, 1.1566);
}

TEST(RankChannels, ScrambledInputSortsTheSame) {
    auto ref = reference_channel_weights();
    std::mt19937 rng(3);
    std::shuffle(ref.begin(), ref.end(), rng);
    // the two tied entries keep their relative order
    auto p3 = std::find_if(ref.begin(), ref.end(), [](auto& e) { return e.first == "P03"; });
    auto p6 = std::find_if(ref.begin(), ref.end(), [](auto& e) { return e.first == "P06"; });
    if (p6 < p3) std::iter_swap(p3, p6);
    std::vector<std::string> names;
    std::vector<double> w;
    for (const auto& [n, v] : ref) names.push_back(n), w.push_back(v);
    auto all = rank_channels(names, w);
    ASSERT_EQ(all.size(), 50u);
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].name, reference_channel_weights()[i].first) << i;
}

TEST(RankChannels, UniformWeightsKeepInputOrder) {
    std::vector<std::string> names{"C", "A", "B", "D"};
    auto r = rank_channels(names, std::vector<double>(4, 1.0));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r[i].name, names[i]);
    EXPECT_THROW(rank_channels(names, std::vector<double>(4, 1.0), 5), std::invalid_argument);
    EXPECT_THROW(rank_channels(names, std::vector<double>(3, 1.0)), std::invalid_argument);
}

TEST(ChannelAttribution, MatchesDirectSum) {
    std::mt19937 rng(8);
    std::normal_distribution<double> nd;
    const std::size_t C = 3, F1 = 4, F2 = 5;
    Tensor<double> w1(Shape{2 * C, F1}), w2(Shape{F1, F2});
    for (auto& v : w1.data) v = nd(rng);
    for (auto& v : w2.data) v = nd(rng);
    std::vector<double> gate{0.5, 1.2, 0.1, 1.9, 0.7};
    auto w = channel_attribution(w1, w2, gate);
    std::vector<double> expect(C, 0.0);
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t row : {ch, ch + C})
            for (std::size_t f = 0; f < F2; ++f) {
                double p = 0.0;
                for (std::size_t j = 0; j < F1; ++j) p += w1.at2(row, j) * w2.at2(j, f);
                expect[ch] += gate[f] * std::abs(p);
            }
    const double mean = (expect[0] + expect[1] + expect[2]) / 3.0;
    for (std::size_t ch = 0; ch < C; ++ch) EXPECT_NEAR(w[ch], expect[ch] / mean, 1e-12);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 3.0, 1e-12);
    EXPECT_THROW(channel_attribution(w1, w2, {1.0}), std::invalid_argument);
}

TEST(ChannelAttribution, ZeroColumnGivesZeroWeight) {
    Tensor<double> w1(Shape{4, 2}, {1, 2, 0, 0, 3, 1, 0, 0}), w2(Shape{2, 2}, {1, 0, 0, 1});
    auto w = channel_attribution(w1, w2, {1.0, 1.0});
    EXPECT_EQ(w[1], 0.0);
    EXPECT_GT(w[0], 0.0);
}

TEST(ChannelAttribution, ModelWeightsUseEegConvLayers) {
    ModelConfig mc;
    mc.eeg_channels = 3;
    mc.emg_channels = 2;
    mc.conv1 = 4;
    mc.conv2 = 6;
    mc.lstm_hidden = 3;
    mc.heads = 2;
    CatNet<double> model(mc, 5);
    std::vector<double> gate{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    auto w = eeg_channel_weights(model, gate);
    ASSERT_EQ(w.size(), 3u);
    // a zeroed channel row in conv1 (raw and difference) must get zero weight
    auto& w1 = model.params().get("eeg.conv1.w").value;
    for (std::size_t row : {1u, 4u})
        for (std::size_t j = 0; j < mc.conv1; ++j) w1.data[row * mc.conv1 + j] = 0.0;
    EXPECT_EQ(eeg_channel_weights(model, gate)[1], 0.0);
}

TEST(Report, DiagonalTableShowsHundreds) {
    ConfusionMatrix cm(4);
    for (int c = 1; c <= 4; ++c) cm.add(c, c, 3);
    auto text = tone_table(tone_rows(metrics(cm)));
    EXPECT_NE(text.find("100.00"), std::string::npos);
    EXPECT_EQ(text.find("0.00 "), text.find("100.00 ") + 2);  // no other value appears
}

TEST(Report, ToneCsvRoundTrips) {
    std::mt19937 rng(12);
    auto rows = tone_rows(metrics(random_matrix(rng)));
    auto csv = tone_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "tone,precision,recall,f1");
    EXPECT_EQ(parse_tone_csv(csv), rows);
}

TEST(Report, SubjectCsvRoundTripsWithAverage) {
    std::vector<std::pair<std::string, double>> acc;
    for (int s = 1; s <= 10; ++s) acc.push_back({"S" + std::to_string(s), 0.8 + 0.01 * s / 3.0});
    auto rows = subject_rows(acc);
    ASSERT_EQ(rows.size(), 11u);
    EXPECT_EQ(rows.back().subject, "Avg");
    EXPECT_EQ(parse_subject_csv(subject_csv(rows)), rows);
    auto text = subject_table(rows);
    EXPECT_NE(text.find("S10"), std::string::npos);
    EXPECT_NE(text.find("Avg"), std::string::npos);
}

TEST(Report, ParseRejectsBadInput) {
    EXPECT_THROW(parse_tone_csv("tone,precision\n1,2\n"), std::invalid_argument);
    EXPECT_THROW(parse_tone_csv("tone,precision,recall,f1\n1,0.5,x,1\n"), std::invalid_argument);
    EXPECT_THROW(parse_subject_csv("subject,accuracy\nS1\n"), std::invalid_argument);
}
