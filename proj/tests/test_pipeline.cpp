#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tape/config.hpp"
#include "tape/pipeline.hpp"

using namespace tape;

namespace {
TrainConfig micro_cfg() {
    TrainConfig cfg;
    cfg.model.channels = 2;
    cfg.model.patch = 2;
    cfg.model.heads = 2;
    cfg.model.n_blocks = 1;
    cfg.model.ffn_mult = 2;
    cfg.model.plm_hidden = 3;
    cfg.model.max_tokens = 16;
    cfg.train_h = cfg.train_w = 8;
    cfg.pretrain_iters = 6;
    cfg.finetune_iters = 4;
    cfg.lr_decay_step = 3;
    cfg.eval_count = 2;
    cfg.seed = 7;
    cfg.tasks = default_tasks();
    return cfg;
}

bool same_store(const ParameterStore& a, const ParameterStore& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.items()[i].first != b.items()[i].first) return false;
        if (a.items()[i].second.data() != b.items()[i].second.data()) return false;
    }
    return true;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::string log_csv(const TrainLog& log) {
    std::ostringstream os;
    log.to_csv(os, /*include_time=*/false);
    return os.str();
}
}  // namespace

TEST_CASE("TrainConfig validation rejects inconsistent settings") {
    TrainConfig cfg = micro_cfg();
    cfg.train_h = 10;  // not divisible by a patch size of 4
    cfg.model.patch = 4;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);

    cfg = micro_cfg();
    cfg.model.max_tokens = 4;  // 16 tokens needed
    REQUIRE_THROWS_AS(cfg.validate(), config_error);

    cfg = micro_cfg();
    cfg.contrastive.tau = -1.0;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);

    cfg = micro_cfg();
    cfg.model.heads = 5;  // does not divide D = 8
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("pretrain is deterministic including checkpoint bytes") {
    TrainConfig cfg = micro_cfg();
    auto r1 = pretrain(cfg);
    auto r2 = pretrain(cfg);
    REQUIRE(log_csv(r1.log) == log_csv(r2.log));
    save_checkpoint(r1.checkpoint, "pl_det_a.ckpt");
    save_checkpoint(r2.checkpoint, "pl_det_b.ckpt");
    REQUIRE(file_bytes("pl_det_a.ckpt") == file_bytes("pl_det_b.ckpt"));
    std::remove("pl_det_a.ckpt");
    std::remove("pl_det_b.ckpt");

    REQUIRE(r1.checkpoint.iteration == cfg.pretrain_iters);
    REQUIRE(static_cast<int>(r1.log.records.size()) == cfg.pretrain_iters);
    for (const auto& rec : r1.log.records) REQUIRE(rec.task != "snow");  // held out
}

TEST_CASE("split pretrain equals unsplit pretrain") {
    TrainConfig cfg = micro_cfg();
    auto full = pretrain(cfg);

    TrainConfig half = cfg;
    half.pretrain_iters = 3;
    auto first = pretrain(half);
    auto second = pretrain(cfg, &first.checkpoint);  // resumes at 3, runs to 6

    save_checkpoint(full.checkpoint, "pl_split_a.ckpt");
    save_checkpoint(second.checkpoint, "pl_split_b.ckpt");
    REQUIRE(file_bytes("pl_split_a.ckpt") == file_bytes("pl_split_b.ckpt"));
    std::remove("pl_split_a.ckpt");
    std::remove("pl_split_b.ckpt");

    // resumed log holds the tail records of the full run
    TrainLog tail;
    tail.records.assign(full.log.records.begin() + 3, full.log.records.end());
    REQUIRE(log_csv(second.log) == log_csv(tail));
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
    TrainConfig cfg = micro_cfg();
    auto res = finetune_stepwise(cfg, pretrain(cfg).checkpoint, "snow");
    save_checkpoint(res.checkpoint, "pl_rt_a.ckpt");
    Checkpoint loaded = load_checkpoint("pl_rt_a.ckpt");
    save_checkpoint(loaded, "pl_rt_b.ckpt");
    REQUIRE(file_bytes("pl_rt_a.ckpt") == file_bytes("pl_rt_b.ckpt"));

    REQUIRE(loaded.model == res.checkpoint.model);
    REQUIRE(loaded.iteration == res.checkpoint.iteration);
    REQUIRE(loaded.rng_state == res.checkpoint.rng_state);
    REQUIRE(loaded.has_phi);
    REQUIRE(same_store(loaded.theta, res.checkpoint.theta));
    REQUIRE(same_store(loaded.plm, res.checkpoint.plm));
    REQUIRE(same_store(loaded.phi, res.checkpoint.phi));
    REQUIRE(loaded.adam_theta.t == res.checkpoint.adam_theta.t);
    REQUIRE(loaded.adam_theta.m == res.checkpoint.adam_theta.m);
    REQUIRE(loaded.adam_phi.v == res.checkpoint.adam_phi.v);
    std::remove("pl_rt_a.ckpt");
    std::remove("pl_rt_b.ckpt");
}

TEST_CASE("checkpoint loader reports malformed files") {
    REQUIRE_THROWS_AS(load_checkpoint("no_such_file.ckpt"), io_error);
    {
        std::ofstream f("pl_bad.ckpt", std::ios::binary);
        f << "EPAT";
    }
    REQUIRE_THROWS_AS(load_checkpoint("pl_bad.ckpt"), format_error);

    TrainConfig cfg = micro_cfg();
    cfg.pretrain_iters = 1;
    save_checkpoint(pretrain(cfg).checkpoint, "pl_bad.ckpt");
    std::string whole = file_bytes("pl_bad.ckpt");
    {
        std::ofstream f("pl_bad.ckpt", std::ios::binary);
        f.write(whole.data(), static_cast<std::streamsize>(whole.size() / 2));
    }
    REQUIRE_THROWS_AS(load_checkpoint("pl_bad.ckpt"), format_error);
    std::remove("pl_bad.ckpt");
}

TEST_CASE("every module receives gradient during pretraining") {
    TrainConfig cfg = micro_cfg();
    cfg.pretrain_iters = 1;
    bool checked = false;
    pretrain(cfg, nullptr, [&](const Checkpoint& ck, long long) {
        auto all_live = [](const ParameterStore& s) {
            for (const auto& [name, t] : s.items()) {
                auto g = t.grad_or_zeros();
                bool any = false;
                for (double v : g) any = any || v != 0.0;
                INFO(name);
                REQUIRE(any);
            }
        };
        all_live(ck.theta);
        all_live(ck.plm);
        checked = true;
    });
    REQUIRE(checked);
}

TEST_CASE("stepwise fine-tune trains phi first, then freezes it") {
    TrainConfig cfg = micro_cfg();
    Checkpoint init = pretrain(cfg).checkpoint;
    Checkpoint mid;
    auto res = finetune_stepwise(cfg, init, "snow", &mid);

    // phase 1 touches phi only
    REQUIRE(same_store(mid.theta, init.theta));
    REQUIRE(same_store(mid.plm, init.plm));
    REQUIRE_FALSE(same_store(mid.phi, init.theta));

    // phase 2 freezes phi and trains theta + PLM
    REQUIRE(same_store(res.checkpoint.phi, mid.phi));
    REQUIRE_FALSE(same_store(res.checkpoint.theta, mid.theta));
    REQUIRE_FALSE(same_store(res.checkpoint.plm, mid.plm));

    REQUIRE_THROWS_AS(finetune_stepwise(cfg, init, "fog"), config_error);
}

TEST_CASE("joint fine-tune updates all stores and honors stop-grad toggle") {
    TrainConfig cfg = micro_cfg();
    Checkpoint init = pretrain(cfg).checkpoint;
    auto res = finetune_joint(cfg, init, "snow");
    REQUIRE_FALSE(same_store(res.checkpoint.theta, init.theta));
    REQUIRE_FALSE(same_store(res.checkpoint.plm, init.plm));
    REQUIRE_FALSE(same_store(res.checkpoint.phi, init.theta));

    TrainConfig sg = cfg;
    sg.pseudo_gt_stop_grad = true;
    auto res_sg = finetune_joint(sg, init, "snow");
    // detaching the pseudo-GT changes the phi/PLM gradients, hence the result
    REQUIRE_FALSE(same_store(res_sg.checkpoint.plm, res.checkpoint.plm));
}

TEST_CASE("fine-tune trajectories: stepwise improves, joint stays comparable") {
    TrainConfig cfg = micro_cfg();
    cfg.pretrain_iters = 100;
    cfg.finetune_iters = 100;
    cfg.lr_decay_step = 50;
    cfg.seed = 13;
    Checkpoint pre = pretrain(cfg).checkpoint;
    auto window = [](const TrainLog& l, std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += l.records[i].l1;
        return s / static_cast<double>(hi - lo);
    };

    auto sw = finetune_stepwise(cfg, pre, "snow");
    // phase 2 occupies records [50,100); its loss trends down
    REQUIRE(window(sw.log, 90, 100) < window(sw.log, 50, 60));

    auto jt = finetune_joint(cfg, pre, "snow");
    save_checkpoint(sw.checkpoint, "pl_traj_sw.ckpt");
    save_checkpoint(jt.checkpoint, "pl_traj_jt.ckpt");
    REQUIRE(file_bytes("pl_traj_sw.ckpt") != file_bytes("pl_traj_jt.ckpt"));
    std::remove("pl_traj_sw.ckpt");
    std::remove("pl_traj_jt.ckpt");

    // the two schedules end at equivalent restoration quality
    double swf = window(sw.log, 90, 100), jtf = window(jt.log, 90, 100);
    REQUIRE(std::abs(jtf - swf) / swf < 0.25);
}

TEST_CASE("restore_image shape, range, and phi fallback") {
    TrainConfig cfg = micro_cfg();
    Checkpoint pre = pretrain(cfg).checkpoint;  // no phi yet
    REQUIRE_FALSE(pre.has_phi);

    Rng rng(61);
    Tensor img = gen_clean_patch(8, 8, rng);
    Tensor out = restore_image(pre, img);
    REQUIRE(out.shape() == img.shape());
    for (double v : out.data()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }

    Checkpoint ft = finetune_stepwise(cfg, pre, "snow").checkpoint;
    Tensor out2 = restore_image(ft, img);
    REQUIRE(out2.shape() == img.shape());
    REQUIRE(out2.data() != out.data());  // phi path engaged

    REQUIRE_THROWS_AS(restore_image(ft, Tensor::zeros({3, 7, 8})), dim_error);
}

TEST_CASE("evaluate_set aggregates per-image metrics") {
    TrainConfig cfg = micro_cfg();
    Checkpoint pre = pretrain(cfg).checkpoint;
    Rng rng(derive_seed(cfg.seed, "eval:snow"));
    auto pairs = make_eval_set(cfg, "snow", 3, rng);
    REQUIRE(pairs.size() == 3);
    EvalReport rep = evaluate_set(pre, pairs, "snow");
    REQUIRE(rep.image_count() == 3);
    REQUIRE(std::isfinite(rep.mean_psnr()));
    REQUIRE(rep.mean_ssim() <= 1.0);
    REQUIRE_THROWS_AS(evaluate_set(pre, std::vector<EvalPair>{}, "snow"), usage_error);
}

TEST_CASE("compare report CSV layout") {
    CompareReport r;
    r.task = "snow";
    r.psnr_input = 10.0;
    r.psnr_scratch = 12.0;
    r.ssim_scratch = 0.5;
    r.psnr_pretrained = 13.5;
    r.ssim_pretrained = 0.6;
    std::ostringstream os;
    r.to_csv(os);
    REQUIRE(os.str() ==
            "variant,psnr_db,ssim\n"
            "input,10.000000,\n"
            "scratch,12.000000,0.500000\n"
            "pretrained,13.500000,0.600000\n"
            "delta,1.500000,0.100000\n");
    REQUIRE(r.psnr_delta() == Catch::Approx(1.5));
}
