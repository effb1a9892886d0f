// tape: train, fine-tune, evaluate and run the restoration model.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tape/config.hpp"
#include "tape/gradcheck.hpp"
#include "tape/pipeline.hpp"
#include "tape/ppm.hpp"

namespace {

tape::TrainConfig load_config(const std::string& path, long long seed_override) {
    tape::TrainConfig cfg = path.empty() ? tape::config_from_json(nlohmann::json::object())
                                         : tape::parse_config(path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    return cfg;
}

void write_sidecar(const tape::TrainConfig& cfg, const std::string& out_path) {
    tape::write_effective_config(cfg, out_path + ".config.json");
}

void write_log(const tape::TrainLog& log, const std::string& out_path) {
    std::ofstream f(out_path + ".log.csv");
    if (!f) throw tape::io_error("cannot open " + out_path + ".log.csv");
    log.to_csv(f);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TAPE image restoration: two-stage training with prior queries"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, out_path, task, input_path, output_path;
    long long seed_override = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON experiment config");
        sub->add_option("--ckpt", ckpt_path, "input checkpoint file");
        sub->add_option("--out", out_path, "output file (checkpoint or report)");
        sub->add_option("--task", task, "task name from the config's task set");
        sub->add_option("--input", input_path, "input image (P6 PPM)");
        sub->add_option("--output", output_path, "output image (P6 PPM)");
        sub->add_option("--seed", seed_override, "master seed override");
    };

    auto* c_pretrain = app.add_subcommand("pretrain", "task-agnostic pre-training");
    auto* c_finetune = app.add_subcommand("finetune", "task-specific fine-tuning");
    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a synthetic eval set");
    auto* c_restore = app.add_subcommand("restore", "restore a single image");
    auto* c_compare = app.add_subcommand("compare", "pretrain-vs-scratch comparison");
    auto* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    for (auto* s : {c_pretrain, c_finetune, c_eval, c_restore, c_compare, c_gradcheck})
        add_common(s);

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_pretrain->parsed()) {
            if (out_path.empty()) throw tape::config_error("pretrain: --out is required");
            auto cfg = load_config(config_path, seed_override);
            auto res = tape::pretrain(cfg);
            tape::save_checkpoint(res.checkpoint, out_path);
            write_log(res.log, out_path);
            write_sidecar(cfg, out_path);
            std::printf("pretrain: %d iterations, final loss %.6f, checkpoint %s\n",
                        cfg.pretrain_iters, res.log.records.back().total, out_path.c_str());
        } else if (c_finetune->parsed()) {
            if (ckpt_path.empty() || out_path.empty() || task.empty())
                throw tape::config_error("finetune: --ckpt, --out and --task are required");
            auto cfg = load_config(config_path, seed_override);
            auto init = tape::load_checkpoint(ckpt_path);
            auto res = tape::finetune(cfg, init, task);
            tape::save_checkpoint(res.checkpoint, out_path);
            write_log(res.log, out_path);
            write_sidecar(cfg, out_path);
            std::printf("finetune(%s, %s): %d iterations, final loss %.6f, checkpoint %s\n",
                        task.c_str(), tape::finetune_mode_name(cfg.finetune_mode).c_str(),
                        cfg.finetune_iters, res.log.records.back().total, out_path.c_str());
        } else if (c_eval->parsed()) {
            if (ckpt_path.empty() || task.empty())
                throw tape::config_error("eval: --ckpt and --task are required");
            auto cfg = load_config(config_path, seed_override);
            auto ck = tape::load_checkpoint(ckpt_path);
            tape::Rng eval_rng(tape::derive_seed(cfg.seed, "eval:" + task));
            auto pairs = tape::make_eval_set(cfg, task, cfg.eval_count, eval_rng);
            auto rep = tape::evaluate_set(ck, pairs, task);
            if (!out_path.empty()) {
                std::ofstream f(out_path);
                if (!f) throw tape::io_error("cannot open " + out_path);
                rep.to_csv(f);
            }
            rep.to_csv(std::cout);
        } else if (c_restore->parsed()) {
            if (ckpt_path.empty() || input_path.empty() || output_path.empty())
                throw tape::config_error("restore: --ckpt, --input and --output are required");
            auto ck = tape::load_checkpoint(ckpt_path);
            auto img = tape::read_ppm(input_path);
            auto restored = tape::restore_image(ck, img);
            tape::write_ppm(output_path, restored);
            std::printf("restore: %s -> %s\n", input_path.c_str(), output_path.c_str());
        } else if (c_compare->parsed()) {
            if (task.empty()) throw tape::config_error("compare: --task is required");
            auto cfg = load_config(config_path, seed_override);
            auto rep = tape::compare_pretrain_effect(cfg, task);
            if (!out_path.empty()) {
                std::ofstream f(out_path);
                if (!f) throw tape::io_error("cannot open " + out_path);
                rep.to_csv(f);
                write_sidecar(cfg, out_path);
            }
            std::printf("compare on %s:\n  input      %8.3f dB\n", rep.task.c_str(),
                        rep.psnr_input);
            std::printf("  scratch    %8.3f dB  ssim %.4f\n", rep.psnr_scratch, rep.ssim_scratch);
            std::printf("  pretrained %8.3f dB  ssim %.4f\n", rep.psnr_pretrained,
                        rep.ssim_pretrained);
            std::printf("  delta      %+8.3f dB  ssim %+.4f\n", rep.psnr_delta(),
                        rep.ssim_delta());
        } else if (c_gradcheck->parsed()) {
            std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : 42;
            auto results = tape::run_gradcheck_suite(20, seed);
            bool ok = true;
            for (const auto& r : results) {
                std::printf("%-14s max rel err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                            r.pass() ? "ok" : "FAIL");
                ok = ok && r.pass();
            }
            if (!ok) {
                std::fprintf(stderr, "gradcheck: at least one operation exceeded tolerance 1e-4\n");
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "tape: %s\n", e.what());
        return 1;
    }
    return 0;
}
