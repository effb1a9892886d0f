#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "tape/pipeline.hpp"

namespace tape {

// Default task mix: five pretrain-known degradations plus snow held out for
// the generalization experiments.
inline TaskSet default_tasks() {
    TaskSet ts;
    ts.tasks.push_back({"noise", DegradationKind::gaussian_noise, {}, 1, false});
    ts.tasks.push_back({"rain", DegradationKind::rain_streaks, {}, 2, false});
    ts.tasks.push_back({"raindrop", DegradationKind::raindrops, {}, 3, false});
    ts.tasks.push_back({"moire", DegradationKind::moire, {}, 4, false});
    ts.tasks.push_back({"shadow", DegradationKind::shadow, {}, 5, false});
    ts.tasks.push_back({"snow", DegradationKind::snow, {}, 6, true});
    return ts;
}

inline nlohmann::json task_to_json(const DegradationSpec& t) {
    nlohmann::json p = nlohmann::json::object();
    for (const auto& [k, v] : t.params) p[k] = v;
    return {{"name", t.name},
            {"kind", kind_name(t.kind)},
            {"params", p},
            {"seed", t.seed},
            {"held_out", t.held_out}};
}

inline DegradationSpec task_from_json(const nlohmann::json& j) {
    DegradationSpec t;
    t.name = j.at("name");
    t.kind = kind_from_name(j.at("kind"));
    t.seed = j.value("seed", std::uint64_t{0});
    t.held_out = j.value("held_out", false);
    if (j.contains("params"))
        for (const auto& [k, v] : j.at("params").items()) t.params[k] = v.get<double>();
    return t;
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : cfg.tasks.tasks) tasks.push_back(task_to_json(t));
    return {
        {"seed", cfg.seed},
        {"model", detail::model_to_json(cfg.model)},
        {"train_size", {cfg.train_h, cfg.train_w}},
        {"lr", {{"initial", cfg.lr_initial}, {"decayed", cfg.lr_decayed},
                {"decay_step", cfg.lr_decay_step}}},
        {"pretrain_iters", cfg.pretrain_iters},
        {"finetune_iters", cfg.finetune_iters},
        {"lambda", cfg.lambda},
        {"contrastive",
         {{"queries", cfg.contrastive.queries},
          {"negatives", cfg.contrastive.negatives},
          {"tau", cfg.contrastive.tau},
          {"normalize", cfg.contrastive.normalize}}},
        {"finetune_mode", finetune_mode_name(cfg.finetune_mode)},
        {"pseudo_gt_stop_grad", cfg.pseudo_gt_stop_grad},
        {"eval_count", cfg.eval_count},
        {"tasks", tasks},
    };
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("model")) {
        const auto& m = j.at("model");
        cfg.model.channels = m.value("channels", cfg.model.channels);
        cfg.model.patch = m.value("patch", cfg.model.patch);
        cfg.model.heads = m.value("heads", cfg.model.heads);
        cfg.model.n_blocks = m.value("n_blocks", cfg.model.n_blocks);
        cfg.model.ffn_mult = m.value("ffn_mult", cfg.model.ffn_mult);
        cfg.model.plm_hidden = m.value("plm_hidden", cfg.model.plm_hidden);
        cfg.model.max_tokens = m.value("max_tokens", cfg.model.max_tokens);
    }
    if (j.contains("train_size")) {
        cfg.train_h = j.at("train_size").at(0);
        cfg.train_w = j.at("train_size").at(1);
    }
    if (j.contains("lr")) {
        const auto& l = j.at("lr");
        cfg.lr_initial = l.value("initial", cfg.lr_initial);
        cfg.lr_decayed = l.value("decayed", cfg.lr_decayed);
        cfg.lr_decay_step = l.value("decay_step", cfg.lr_decay_step);
    }
    cfg.pretrain_iters = j.value("pretrain_iters", cfg.pretrain_iters);
    cfg.finetune_iters = j.value("finetune_iters", cfg.finetune_iters);
    cfg.lambda = j.value("lambda", cfg.lambda);
    if (j.contains("contrastive")) {
        const auto& c = j.at("contrastive");
        cfg.contrastive.queries = c.value("queries", cfg.contrastive.queries);
        cfg.contrastive.negatives = c.value("negatives", cfg.contrastive.negatives);
        cfg.contrastive.tau = c.value("tau", cfg.contrastive.tau);
        cfg.contrastive.normalize = c.value("normalize", cfg.contrastive.normalize);
    }
    cfg.finetune_mode = finetune_mode_from_name(j.value("finetune_mode", std::string("stepwise")));
    cfg.pseudo_gt_stop_grad = j.value("pseudo_gt_stop_grad", false);
    cfg.eval_count = j.value("eval_count", cfg.eval_count);
    if (j.contains("tasks")) {
        cfg.tasks.tasks.clear();
        for (const auto& t : j.at("tasks")) cfg.tasks.tasks.push_back(task_from_json(t));
    } else {
        cfg.tasks = default_tasks();
    }
    cfg.validate();
    return cfg;
}

// Parse a JSON experiment config; unset fields take documented defaults.
inline TrainConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("parse_config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error("parse_config: " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline void write_effective_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw io_error("write_effective_config: cannot open " + path);
    f << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace tape
