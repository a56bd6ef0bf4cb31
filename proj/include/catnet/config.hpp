#pragma once

// JSON form of the training configuration. Keys mirror the CLI flags
// (snake_case); unknown keys are rejected.

#include <set>
#include <string>

#include <json.hpp>

#include "catnet/training.hpp"

namespace catnet::config {

using json = nlohmann::json;

inline json to_json(const training::TrainConfig& c) {
    return json{{"lr", c.lr},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"folds", c.folds},
                {"early_stop_patience", c.early_stop_patience},
                {"plateau_factor", c.plateau_factor},
                {"plateau_patience", c.plateau_patience},
                {"min_lr", c.min_lr},
                {"dropout", c.dropout},
                {"seed", c.seed},
                {"clip", c.clip},
                {"grl_lambda", c.grl_lambda},
                {"stop_at_val_acc", c.stop_at_val_acc},
                {"gamma", c.loss.gamma},
                {"alpha", c.loss.alpha},
                {"lambda_dom", c.loss.lambda_dom},
                {"center_weights", c.loss.center_weights},
                {"center_ema", c.loss.center_ema},
                {"use_center", c.loss.use_center},
                {"ablation", c.ablation.name()}};
}

/// Overwrites the fields present in `j`. Throws invalid_argument on unknown keys or bad types.
inline void apply(training::TrainConfig& c, const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    static const std::set<std::string> keys = [] {
        std::set<std::string> k;
        const json defaults = to_json(training::TrainConfig{});
        for (const auto& [key, _] : defaults.items()) k.insert(key);
        return k;
    }();
    for (const auto& [key, _] : j.items())
        if (!keys.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception&) {
            throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + j.at(key).dump());
        }
    };
    get("lr", c.lr);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("folds", c.folds);
    get("early_stop_patience", c.early_stop_patience);
    get("plateau_factor", c.plateau_factor);
    get("plateau_patience", c.plateau_patience);
    get("min_lr", c.min_lr);
    get("dropout", c.dropout);
    get("seed", c.seed);
    get("clip", c.clip);
    get("grl_lambda", c.grl_lambda);
    get("stop_at_val_acc", c.stop_at_val_acc);
    get("gamma", c.loss.gamma);
    get("alpha", c.loss.alpha);
    get("lambda_dom", c.loss.lambda_dom);
    get("center_weights", c.loss.center_weights);
    get("center_ema", c.loss.center_ema);
    get("use_center", c.loss.use_center);
    std::string ablation = c.ablation.name();
    get("ablation", ablation);
    c.ablation = Ablation::parse(ablation);
    c.validate();
}

inline training::TrainConfig from_json(const json& j) {
    training::TrainConfig c;
    apply(c, j);
    return c;
}

}  // namespace catnet::config
