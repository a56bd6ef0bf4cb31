// catnet: command-line front end (preprocess, synth, train, eval, loso,
// rank-channels, gradcheck, report). Exit codes: 0 ok, 1 invalid input, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "catnet/checkpoint.hpp"
#include "catnet/checks.hpp"
#include "catnet/config.hpp"
#include "catnet/dataio.hpp"
#include "catnet/evaluation.hpp"
#include "catnet/runtime.hpp"
#include "catnet/training.hpp"
#include "run_record.hpp"

using namespace catnet;
namespace fs = std::filesystem;
using json = nlohmann::json;
using evaluation::detail::num;

namespace {

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json_file(const fs::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::exception& e) {
        throw std::invalid_argument(p.string() + ": " + e.what());
    }
}

void require_count(const std::vector<double>& v, std::size_t n, const char* flag) {
    if (v.size() != n)
        throw std::invalid_argument(std::string(flag) + " takes " + std::to_string(n) + " comma-separated values");
}

/// Training flags; only those given on the command line override the config file.
struct TrainFlags {
    training::TrainConfig v;
    std::string ablation;
    bool no_center = false;
    std::string config_file;
    std::vector<std::pair<CLI::Option*, std::function<void(training::TrainConfig&)>>> setters;

    void add(CLI::App* app) {
#define CATNET_FLAG(flag, member, help) \
    setters.push_back({app->add_option(flag, v.member, help), [this](training::TrainConfig& c) { c.member = v.member; }})
        CATNET_FLAG("--lr", lr, "Learning rate");
        CATNET_FLAG("--batch-size", batch_size, "Mini-batch size");
        CATNET_FLAG("--epochs", epochs, "Maximum epochs");
        CATNET_FLAG("--folds", folds, "Number of folds (k-fold) or inner validation folds (loso)");
        CATNET_FLAG("--patience", early_stop_patience, "Early-stopping patience");
        CATNET_FLAG("--plateau-patience", plateau_patience, "Epochs without improvement before the LR is halved");
        CATNET_FLAG("--plateau-factor", plateau_factor, "LR reduction factor");
        CATNET_FLAG("--min-lr", min_lr, "LR floor");
        CATNET_FLAG("--dropout", dropout, "Dropout rate");
        CATNET_FLAG("--seed", seed, "Seed for initialization, splits and shuffling");
        CATNET_FLAG("--clip", clip, "Global gradient-norm clip (0 = off)");
        CATNET_FLAG("--grl-lambda", grl_lambda, "Gradient-reversal multiplier");
        CATNET_FLAG("--stop-at-val-acc", stop_at_val_acc, "Stop once validation accuracy reaches this value");
        CATNET_FLAG("--gamma", loss.gamma, "Focal-loss focusing parameter");
        CATNET_FLAG("--lambda-dom", loss.lambda_dom, "Domain-loss weight");
        CATNET_FLAG("--center-ema", loss.center_ema, "Center update rate");
#undef CATNET_FLAG
        setters.push_back({app->add_option("--alpha", v.loss.alpha, "Focal class weights a,b,c,d")->delimiter(','),
                           [this](training::TrainConfig& c) {
                               require_count(v.loss.alpha, 4, "--alpha");
                               c.loss.alpha = v.loss.alpha;
                           }});
        setters.push_back(
            {app->add_option("--center-weights", v.loss.center_weights, "Center-loss class weights a,b,c,d")
                 ->delimiter(','),
             [this](training::TrainConfig& c) {
                 require_count(v.loss.center_weights, 4, "--center-weights");
                 c.loss.center_weights = v.loss.center_weights;
             }});
        setters.push_back({app->add_flag("--no-center", no_center, "Leave the center term out of the objective"),
                           [](training::TrainConfig& c) { c.loss.use_center = false; }});
        setters.push_back({app->add_option("--ablation", ablation,
                                           "full, or '+'-joined: no_cross_attention, no_bilstm, no_fusion_eeg, "
                                           "no_fusion_emg, no_domain_discriminator"),
                           [this](training::TrainConfig& c) { c.ablation = Ablation::parse(ablation); }});
        app->add_option("--config", config_file, "JSON config file (flags override it)")
            ->check(CLI::ExistingFile);
    }

    /// defaults < config file < flags
    training::TrainConfig resolve() const {
        training::TrainConfig c;
        if (!config_file.empty()) config::apply(c, read_json_file(config_file));
        for (const auto& [opt, set] : setters)
            if (opt->count()) set(c);
        c.validate();
        return c;
    }
};

std::string history_csv(const std::vector<training::EpochRecord>& h) {
    std::string s = "epoch,train_loss,val_loss,val_acc,lr\n";
    for (const auto& r : h)
        s += std::to_string(r.epoch) + "," + num(r.train_loss) + "," + num(r.val_loss) + "," + num(r.val_acc) + "," +
             num(r.lr) + "\n";
    return s;
}

json confusion_json(const evaluation::ConfusionMatrix& cm) {
    json rows = json::array();
    for (std::size_t r = 0; r < cm.classes; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < cm.classes; ++c) row.push_back(cm.at(r, c));
        rows.push_back(row);
    }
    return rows;
}

json metrics_json(const evaluation::Metrics& m, const evaluation::ConfusionMatrix& cm) {
    return json{{"accuracy", m.accuracy}, {"kappa", m.kappa},   {"macro_precision", m.macro_precision},
                {"macro_recall", m.macro_recall}, {"macro_f1", m.macro_f1}, {"trials", m.total},
                {"confusion", confusion_json(cm)}};
}

void write_tone_report(const fs::path& out, const evaluation::Metrics& m, const std::string& title) {
    const auto rows = evaluation::tone_rows(m);
    write_text(out / "tones.csv", evaluation::tone_csv(rows));
    write_text(out / "tones.txt", evaluation::tone_table(rows, title));
}

training::EpochCallback progress(const std::string& prefix = "") {
    return [prefix](const training::EpochRecord& r) {
        std::printf("%sepoch %zu  loss %.5f  val_loss %.5f  val_acc %.4f  lr %.2e  (%.1fs)\n", prefix.c_str(),
                    r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr, r.seconds);
        std::fflush(stdout);
    };
}

/// Brings a dataset into the channel order and length a trained model expects.
dataio::Dataset align_to(const dataio::Dataset& d, const checkpoint::Checkpoint& ck) {
    dataio::Dataset out = d;
    if (out.eeg_names != ck.eeg_names) out = dataio::select_channels(out, ck.eeg_names, dataio::Modality::eeg);
    if (out.emg_names != ck.emg_names) out = dataio::select_channels(out, ck.emg_names, dataio::Modality::emg);
    if (out.t_prime != ck.t_prime)
        throw std::invalid_argument("dataset has " + std::to_string(out.t_prime) + " samples per trial, model expects " +
                                    std::to_string(ck.t_prime));
    if (out.trials.empty()) throw std::invalid_argument("dataset has no trials");
    return out;
}

void check_out_not_input(const fs::path& out, const fs::path& in) {
    if (fs::exists(out) && fs::exists(in) && fs::equivalent(out, in))
        throw std::invalid_argument("--out must differ from the input directory");
}

// ---------------------------------------------------------------------------

struct SynthCmd {
    dataio::ContinuousSynthConfig c;
    bool continuous = false;
    std::string out;

    void add(CLI::App* app) {
        auto& b = c.base;
        app->add_option("--subjects", b.n_subjects, "Number of subjects")->capture_default_str();
        app->add_option("--trials", b.trials_per_subject, "Trials per subject")->capture_default_str();
        app->add_option("--seed", b.seed, "Generator seed")->capture_default_str();
        app->add_option("--eeg-channels", b.eeg_channels, "EEG channels")->capture_default_str();
        app->add_option("--emg-channels", b.emg_channels, "EMG channels")->capture_default_str();
        app->add_option("--samples", b.samples, "Samples per trial before difference augmentation")
            ->capture_default_str();
        app->add_option("--snr", b.snr, "Signal-to-noise power ratio on informative channels")->capture_default_str();
        app->add_option("--subject-shift", b.subject_shift_scale, "Scale of per-subject gain/offset shifts")
            ->capture_default_str();
        app->add_option("--informative-eeg", b.informative_eeg, "Informative EEG channel indices")->delimiter(',');
        app->add_option("--informative-emg", b.informative_emg, "Informative EMG channel indices")->delimiter(',');
        app->add_flag("--continuous", continuous, "Write continuous recordings (input for preprocess)");
        app->add_option("--out", out, "Output directory")->required();
    }

    int run(cli::RunRecord& rec) {
        const auto& b = c.base;
        rec.seed = b.seed;
        rec.config = {{"subjects", b.n_subjects},        {"trials", b.trials_per_subject},
                      {"seed", b.seed},                   {"eeg_channels", b.eeg_channels},
                      {"emg_channels", b.emg_channels},   {"samples", b.samples},
                      {"snr", b.snr},                     {"subject_shift", b.subject_shift_scale},
                      {"informative_eeg", b.informative_eeg}, {"informative_emg", b.informative_emg},
                      {"continuous", continuous}};
        if (continuous) {
            dataio::save_raw(dataio::synth_continuous(c), out);
        } else {
            dataio::save(dataio::synth_generate(b), out);
        }
        std::printf("wrote %zu subjects x %zu trials to %s\n", b.n_subjects, b.trials_per_subject, out.c_str());
        return 0;
    }
};

struct PreprocessCmd {
    std::string in, out;
    std::vector<double> band{1.0, 100.0}, window{0.0, 1.0};
    double notch = 50.0, rate = 500.0, edge_guard = 0.5;

    void add(CLI::App* app) {
        app->add_option("--in", in, "Continuous-recording dataset")->required()->check(CLI::ExistingDirectory);
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--band", band, "Band-pass edges LO,HI in Hz")->delimiter(',')->capture_default_str();
        app->add_option("--notch", notch, "Notch center in Hz (0 = off)")->capture_default_str();
        app->add_option("--rate", rate, "Target sampling rate in Hz")->capture_default_str();
        app->add_option("--window", window, "Crop START,END in seconds after onset")->delimiter(',')
            ->capture_default_str();
        app->add_option("--edge-guard", edge_guard, "Seconds kept clear of recording edges")->capture_default_str();
    }

    int run(cli::RunRecord& rec) {
        require_count(band, 2, "--band");
        require_count(window, 2, "--window");
        check_out_not_input(out, in);
        sigproc::PreprocessConfig cfg;
        cfg.band_low_hz = band[0];
        cfg.band_high_hz = band[1];
        cfg.notch_hz = notch;
        cfg.target_rate_hz = rate;
        cfg.crop_start_s = window[0];
        cfg.crop_end_s = window[1];
        cfg.epoch.edge_guard_s = edge_guard;
        rec.config = {{"in", in}, {"band", band}, {"notch", notch}, {"rate", rate}, {"window", window},
                      {"edge_guard", edge_guard}};
        std::vector<std::size_t> skipped;
        auto d = dataio::preprocess(dataio::load_raw(in), cfg, &skipped);
        dataio::save(d, out);
        rec.extra["trials"] = d.trials.size();
        rec.extra["skipped_onsets"] = skipped;
        std::printf("%zu trials of %zu samples; %zu onsets skipped\n", d.trials.size(), d.t_prime, skipped.size());
        return 0;
    }
};

struct TrainCmd {
    TrainFlags flags;
    std::string data, out;
    std::size_t fold = 1;
    std::vector<std::string> channels;

    void add(CLI::App* app) {
        app->add_option("--data", data, "Trial dataset")->required()->check(CLI::ExistingDirectory);
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--fold", fold, "Which fold is held out for validation (1-based)")->capture_default_str();
        app->add_option("--channels", channels, "EEG channels to keep, in order")->delimiter(',');
        flags.add(app);
    }

    int run(cli::RunRecord& rec) {
        const auto cfg = flags.resolve();
        if (fold < 1 || fold > cfg.folds)
            throw std::invalid_argument("--fold must be in 1.." + std::to_string(cfg.folds));
        check_out_not_input(out, data);
        rec.seed = cfg.seed;
        rec.config = config::to_json(cfg);
        rec.config["data"] = data;
        rec.config["fold"] = fold;
        rec.config["channels"] = channels;
        auto d = dataio::load(data);
        if (!channels.empty()) d = dataio::select_channels(d, channels);
        const auto split = evaluation::kfold_splits(d.tones(), d.trial_subjects(), cfg.folds, cfg.seed).at(fold - 1);
        const auto train = d.subset(split.train), val = d.subset(split.test);
        checkpoint::Checkpoint ck;
        ck.model.init(training::model_config_for(train, cfg), cfg.seed);
        auto res = training::fit(ck.model, train, val, cfg, progress());
        auto ev = training::evaluate(ck.model, val, cfg.loss);
        const auto cm = evaluation::ConfusionMatrix::from(ev.truth, ev.predicted);
        const auto m = evaluation::metrics(cm);

        fs::create_directories(out);
        ck.domains = res.domains;
        ck.eeg_names = d.eeg_names;
        ck.emg_names = d.emg_names;
        ck.t_prime = d.t_prime;
        ck.loss = cfg.loss;
        checkpoint::save(ck, out);
        write_text(out + "/history.csv", history_csv(res.history));
        write_tone_report(out, m, "Validation fold " + std::to_string(fold) + " (" + cfg.ablation.name() + ")");
        auto mj = metrics_json(m, cm);
        mj["best_epoch"] = res.best_epoch;
        mj["best_val_loss"] = res.best_val_loss;
        mj["epochs_run"] = res.history.size();
        mj["stopped_early"] = res.stopped_early;
        mj["reached_target"] = res.reached_target;
        dataio::detail::write_json(out + "/metrics.json", mj);
        json secs = json::array();
        for (const auto& h : res.history) secs.push_back(h.seconds);
        rec.extra["epoch_seconds"] = secs;
        std::printf("best epoch %zu: val_acc %.4f kappa %.4f macro_f1 %.4f\n", res.best_epoch, m.accuracy, m.kappa,
                    m.macro_f1);
        return 0;
    }
};

struct LosoCmd {
    TrainFlags flags;
    std::string data, out;
    std::vector<int> holdout;
    std::vector<std::string> channels;

    void add(CLI::App* app) {
        app->add_option("--data", data, "Trial dataset")->required()->check(CLI::ExistingDirectory);
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--holdout", holdout, "Subjects to hold out (default: all)")->delimiter(',');
        app->add_option("--channels", channels, "EEG channels to keep, in order")->delimiter(',');
        flags.add(app);
    }

    int run(cli::RunRecord& rec) {
        const auto cfg = flags.resolve();
        check_out_not_input(out, data);
        rec.seed = cfg.seed;
        rec.config = config::to_json(cfg);
        rec.config["data"] = data;
        rec.config["holdout"] = holdout;
        rec.config["channels"] = channels;
        auto d = dataio::load(data);
        if (!channels.empty()) d = dataio::select_channels(d, channels);
        const auto subjects = d.subjects();
        if (subjects.size() < 3) throw std::invalid_argument("loso needs at least 3 subjects");
        std::set<int> wanted(holdout.begin(), holdout.end());
        for (int s : wanted)
            if (!std::count(subjects.begin(), subjects.end(), s))
                throw std::invalid_argument("--holdout: no subject " + std::to_string(s));
        fs::create_directories(fs::path(out) / "histories");
        std::vector<std::pair<std::string, double>> acc;
        evaluation::ConfusionMatrix pooled;
        for (const auto& split : evaluation::loso_split(d.trial_subjects())) {
            const int subject = d.trials.at(split.test.front()).subject;
            if (!wanted.empty() && !wanted.count(subject)) continue;
            const auto rest = d.subset(split.train), test = d.subset(split.test);
            const auto inner = evaluation::kfold_splits(rest.tones(), rest.trial_subjects(), cfg.folds, cfg.seed).at(0);
            const auto train = rest.subset(inner.train), val = rest.subset(inner.test);
            CatNet<float> model(training::model_config_for(train, cfg), cfg.seed);
            auto res = training::fit(model, train, val, cfg, progress(split.label + " "));
            auto ev = training::evaluate(model, test, cfg.loss);
            pooled += evaluation::ConfusionMatrix::from(ev.truth, ev.predicted);
            acc.emplace_back(split.label, ev.accuracy);
            write_text(fs::path(out) / "histories" / (split.label + ".csv"), history_csv(res.history));
            std::printf("%s: test accuracy %.4f\n", split.label.c_str(), ev.accuracy);
        }
        const auto rows = evaluation::subject_rows(acc);
        write_text(fs::path(out) / "subjects.csv", evaluation::subject_csv(rows));
        write_text(fs::path(out) / "subjects.txt", evaluation::subject_table(rows, "Leave-one-subject-out accuracy"));
        const auto m = evaluation::metrics(pooled);
        write_tone_report(out, m, "Leave-one-subject-out, pooled over held-out subjects");
        dataio::detail::write_json(fs::path(out) / "metrics.json", metrics_json(m, pooled));
        std::printf("%s", evaluation::subject_table(rows).c_str());
        return 0;
    }
};

struct EvalCmd {
    std::string model, data, out;

    void add(CLI::App* app) {
        app->add_option("--model", model, "Trained model directory")->required()->check(CLI::ExistingDirectory);
        app->add_option("--data", data, "Trial dataset")->required()->check(CLI::ExistingDirectory);
        app->add_option("--out", out, "Output directory")->required();
    }

    int run(cli::RunRecord& rec) {
        check_out_not_input(out, data);
        check_out_not_input(out, model);
        rec.config = {{"model", model}, {"data", data}};
        auto ck = checkpoint::load(model);
        const auto d = align_to(dataio::load(data), ck);
        auto ev = training::evaluate(ck.model, d, ck.loss);
        const auto cm = evaluation::ConfusionMatrix::from(ev.truth, ev.predicted);
        const auto m = evaluation::metrics(cm);
        fs::create_directories(out);
        write_tone_report(out, m, "Evaluation on " + fs::path(data).filename().string());
        auto mj = metrics_json(m, cm);
        mj["focal_loss"] = ev.focal_loss;
        dataio::detail::write_json(fs::path(out) / "metrics.json", mj);
        std::printf("%saccuracy %.4f  kappa %.4f\n", evaluation::tone_table(evaluation::tone_rows(m)).c_str(),
                    m.accuracy, m.kappa);
        return 0;
    }
};

struct RankCmd {
    std::string model, data, out;
    std::size_t k = 20;
    CLI::Option* k_opt = nullptr;

    void add(CLI::App* app) {
        app->add_option("--model", model, "Trained model directory")->required()->check(CLI::ExistingDirectory);
        app->add_option("--data", data, "Trial dataset the gates are averaged over")
            ->required()
            ->check(CLI::ExistingDirectory);
        app->add_option("--out", out, "Output directory")->required();
        k_opt = app->add_option("--k", k, "Number of channels to report")->capture_default_str();
    }

    int run(cli::RunRecord& rec) {
        check_out_not_input(out, data);
        check_out_not_input(out, model);
        auto ck = checkpoint::load(model);
        const auto d = align_to(dataio::load(data), ck);
        if (!k_opt->count()) k = std::min(k, ck.eeg_names.size());
        rec.config = {{"model", model}, {"data", data}, {"k", k}};
        auto ev = training::evaluate(ck.model, d, ck.loss);
        const auto ranked =
            evaluation::rank_channels(ck.eeg_names, evaluation::eeg_channel_weights(ck.model, ev.mean_eeg_gate), k);
        fs::create_directories(out);
        std::string csv = "rank,channel,weight\n", txt = "Rank  Channel   Weight\n";
        char line[96];
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            csv += std::to_string(i + 1) + "," + ranked[i].name + "," + num(ranked[i].weight) + "\n";
            std::snprintf(line, sizeof line, "%-5zu %-9s %.4f\n", i + 1, ranked[i].name.c_str(), ranked[i].weight);
            txt += line;
        }
        write_text(fs::path(out) / "channels.csv", csv);
        write_text(fs::path(out) / "channels.txt", txt);
        std::printf("%s", txt.c_str());
        return 0;
    }
};

struct GradcheckCmd {
    unsigned seed = 1;
    std::string out = "gradcheck";

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Seed for the random test inputs")->capture_default_str();
        app->add_option("--out", out, "Output directory")->capture_default_str();
    }

    int run(cli::RunRecord& rec) {
        rec.seed = seed;
        rec.config = {{"seed", seed}};
        const auto results = checks::run_suite(seed);
        std::string csv = "check,error,tolerance,passed\n";
        bool all = true;
        std::printf("%-28s %12s %10s  %s\n", "check", "max error", "tolerance", "result");
        for (const auto& r : results) {
            all = all && r.passed();
            std::printf("%-28s %12.3e %10.0e  %s\n", r.name.c_str(), r.error, r.tolerance, r.passed() ? "PASS" : "FAIL");
            csv += r.name + "," + num(r.error) + "," + num(r.tolerance) + "," + (r.passed() ? "1" : "0") + "\n";
        }
        fs::create_directories(out);
        write_text(fs::path(out) / "gradcheck.csv", csv);
        std::printf("%s\n", all ? "all checks passed" : "some checks FAILED");
        rec.extra["all_passed"] = all;
        return all ? 0 : 2;
    }
};

struct ReportCmd {
    std::vector<std::string> inputs;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("inputs", inputs, "Run directories or CSV files to merge")
            ->required()
            ->check(CLI::ExistingPath);
        app->add_option("--out", out, "Output directory")->required();
    }

    int run(cli::RunRecord& rec) {
        rec.config = {{"inputs", inputs}};
        std::vector<std::string> tone_order, subject_order;
        std::map<std::string, std::vector<evaluation::ToneRow>> tones;
        std::map<std::string, std::vector<double>> subjects;
        std::size_t tone_runs = 0, subject_runs = 0;
        auto take = [&](const fs::path& p) {
            const auto text = read_text(p);
            const auto header = text.substr(0, text.find('\n'));
            if (header == evaluation::kToneHeader) {
                ++tone_runs;
                for (const auto& r : evaluation::parse_tone_csv(text)) {
                    if (!tones.count(r.tone)) tone_order.push_back(r.tone);
                    tones[r.tone].push_back(r);
                }
            } else if (header == evaluation::kSubjectHeader) {
                ++subject_runs;
                for (const auto& r : evaluation::parse_subject_csv(text)) {
                    if (r.subject == "Avg") continue;
                    if (!subjects.count(r.subject)) subject_order.push_back(r.subject);
                    subjects[r.subject].push_back(r.accuracy);
                }
            } else {
                throw std::invalid_argument(p.string() + ": not a tone or subject report");
            }
        };
        for (const fs::path in : inputs) {
            if (fs::is_directory(in)) {
                for (const char* name : {"tones.csv", "subjects.csv"})
                    if (fs::exists(in / name)) take(in / name);
            } else {
                take(in);
            }
        }
        if (!tone_runs && !subject_runs) throw std::invalid_argument("report: no tones.csv or subjects.csv found");
        fs::create_directories(out);
        std::string txt;
        if (tone_runs) {
            std::vector<evaluation::ToneRow> rows;
            for (const auto& key : tone_order) {
                evaluation::ToneRow m{key};
                for (const auto& r : tones[key]) {
                    m.precision += r.precision / tones[key].size();
                    m.recall += r.recall / tones[key].size();
                    m.f1 += r.f1 / tones[key].size();
                }
                rows.push_back(m);
            }
            write_text(fs::path(out) / "tones.csv", evaluation::tone_csv(rows));
            txt += evaluation::tone_table(rows, "Per-tone results, mean over " + std::to_string(tone_runs) + " run(s)");
        }
        if (subject_runs) {
            std::vector<std::pair<std::string, double>> acc;
            for (const auto& key : subject_order) {
                double s = 0;
                for (double a : subjects[key]) s += a;
                acc.emplace_back(key, s / subjects[key].size());
            }
            const auto rows = evaluation::subject_rows(acc);
            write_text(fs::path(out) / "subjects.csv", evaluation::subject_csv(rows));
            if (!txt.empty()) txt += "\n";
            txt += evaluation::subject_table(
                rows, "Per-subject accuracy, mean over " + std::to_string(subject_runs) + " run(s)");
        }
        write_text(fs::path(out) / "report.txt", txt);
        std::printf("%s", txt.c_str());
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    runtime::tune_allocator();
    CLI::App app{"CAT-Net EEG/EMG tone classification"};
    app.require_subcommand(1);
    SynthCmd synth;
    PreprocessCmd pre;
    TrainCmd train;
    LosoCmd loso;
    EvalCmd eval;
    RankCmd rank;
    GradcheckCmd grad;
    ReportCmd report;
    struct Entry {
        CLI::App* app;
        std::function<int(cli::RunRecord&)> run;
        std::function<std::string()> out;
    };
    std::vector<Entry> cmds;
    auto reg = [&](const char* name, const char* help, auto& cmd) {
        auto* sub = app.add_subcommand(name, help);
        cmd.add(sub);
        cmds.push_back({sub, [&cmd](cli::RunRecord& r) { return cmd.run(r); }, [&cmd] { return cmd.out; }});
    };
    reg("synth", "Generate a synthetic multi-subject dataset", synth);
    reg("preprocess", "Filter, epoch and crop continuous recordings into trials", pre);
    reg("train", "Train on k-1 folds, validate on one", train);
    reg("eval", "Evaluate a trained model on a dataset", eval);
    reg("loso", "Leave-one-subject-out evaluation", loso);
    reg("rank-channels", "Rank EEG channels by attributed attention weight", rank);
    reg("gradcheck", "Run the finite-difference gradient checks", grad);
    reg("report", "Merge tone/subject CSVs from several runs into tables", report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App* sub = nullptr;
        for (const auto& c : cmds)
            if (c.app->parsed()) sub = c.app;
        std::cerr << (sub ? sub->help() : app.help());
        return 1;
    }

    for (auto& c : cmds) {
        if (!c.app->parsed()) continue;
        cli::RunRecord rec;
        rec.command = c.app->get_name();
        rec.argv.assign(argv, argv + argc);
        int code = 0;
        try {
            code = c.run(rec);
        } catch (const std::invalid_argument& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "failed: " << e.what() << "\n";
            try {
                rec.write(c.out(), "failed", e.what());
            } catch (const std::exception&) {
            }
            return 2;
        }
        rec.write(c.out(), code == 0 ? "ok" : "failed");
        return code;
    }
    return 1;
}
