#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "tape/config.hpp"

using namespace tape;

TEST_CASE("default task mix holds snow out") {
    TaskSet ts = default_tasks();
    REQUIRE(ts.tasks.size() == 6);
    REQUIRE(ts.pretrain_indices().size() == 5);
    REQUIRE(ts.find("snow").held_out);
    REQUIRE_FALSE(ts.find("noise").held_out);
}

TEST_CASE("task JSON round-trip preserves params") {
    DegradationSpec t;
    t.name = "noise_low";
    t.kind = DegradationKind::gaussian_noise;
    t.params = {{"sigma_min", 1.0}, {"sigma_max", 50.0}};
    t.seed = 9;
    t.held_out = true;
    DegradationSpec back = task_from_json(task_to_json(t));
    REQUIRE(back.name == t.name);
    REQUIRE(back.kind == t.kind);
    REQUIRE(back.params == t.params);
    REQUIRE(back.seed == t.seed);
    REQUIRE(back.held_out == t.held_out);
}

TEST_CASE("config JSON round-trip is lossless") {
    TrainConfig cfg;
    cfg.seed = 11;
    cfg.model.channels = 8;
    cfg.model.patch = 2;
    cfg.train_h = cfg.train_w = 8;
    cfg.pretrain_iters = 10;
    cfg.finetune_iters = 4;
    cfg.lambda = 0.25;
    cfg.contrastive.queries = 32;
    cfg.finetune_mode = FinetuneMode::joint;
    cfg.pseudo_gt_stop_grad = true;
    cfg.eval_count = 5;
    cfg.tasks = default_tasks();
    TrainConfig back = config_from_json(config_to_json(cfg));
    REQUIRE(config_to_json(back).dump() == config_to_json(cfg).dump());
}

TEST_CASE("empty JSON object yields the documented defaults") {
    TrainConfig cfg = config_from_json(nlohmann::json::object());
    REQUIRE(cfg.model.channels == 16);
    REQUIRE(cfg.model.patch == 4);
    REQUIRE(cfg.train_h == 16);
    REQUIRE(cfg.lr_initial == 2e-4);
    REQUIRE(cfg.lr_decayed == 1e-4);
    REQUIRE(cfg.lambda == 0.1);
    REQUIRE(cfg.contrastive.tau == 0.07);
    REQUIRE(cfg.contrastive.queries == 256);
    REQUIRE(cfg.finetune_mode == FinetuneMode::stepwise);
    REQUIRE(cfg.tasks.tasks.size() == 6);
}

TEST_CASE("config errors are reported with the right types") {
    REQUIRE_THROWS_AS(parse_config("no_such_config.json"), io_error);

    std::string path = "test_config_bad.json";
    {
        std::ofstream f(path);
        f << "{ not json";
    }
    REQUIRE_THROWS_AS(parse_config(path), format_error);

    {
        std::ofstream f(path);
        f << R"({"finetune_mode": "magic"})";
    }
    REQUIRE_THROWS_AS(parse_config(path), config_error);

    {
        std::ofstream f(path);
        f << R"({"tasks": [{"name": "x", "kind": "fog"}]})";
    }
    REQUIRE_THROWS_AS(parse_config(path), config_error);

    {
        // patch size incompatible with train size -> rejected at parse time
        std::ofstream f(path);
        f << R"({"model": {"patch": 3}, "train_size": [16, 16]})";
    }
    REQUIRE_THROWS_AS(parse_config(path), config_error);
    std::remove(path.c_str());
}

TEST_CASE("write_effective_config parses back identically") {
    TrainConfig cfg;
    cfg.tasks = default_tasks();
    cfg.seed = 3;
    cfg.model.channels = 4;
    cfg.model.patch = 2;
    cfg.model.plm_hidden = 5;
    std::string path = "test_config_eff.json";
    write_effective_config(cfg, path);
    TrainConfig back = parse_config(path);
    REQUIRE(config_to_json(back).dump() == config_to_json(cfg).dump());
    std::remove(path.c_str());
}
