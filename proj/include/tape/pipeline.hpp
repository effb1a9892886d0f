#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "tape/arch.hpp"
#include "tape/checkpoint.hpp"
#include "tape/degrade.hpp"
#include "tape/losses.hpp"
#include "tape/metrics.hpp"

namespace tape {

enum class FinetuneMode { stepwise, joint };

inline std::string finetune_mode_name(FinetuneMode m) {
    return m == FinetuneMode::stepwise ? "stepwise" : "joint";
}
inline FinetuneMode finetune_mode_from_name(const std::string& s) {
    if (s == "stepwise") return FinetuneMode::stepwise;
    if (s == "joint") return FinetuneMode::joint;
    throw config_error("unknown finetune_mode: " + s);
}

struct TrainConfig {
    ModelConfig model;
    int train_h = 16, train_w = 16;
    double lr_initial = 2e-4;
    double lr_decayed = 1e-4;
    int lr_decay_step = 1000;
    int pretrain_iters = 3000;
    int finetune_iters = 1000;
    double lambda = 0.1;  // weight of the contrastive term
    ContrastiveConfig contrastive;
    TaskSet tasks;
    std::uint64_t seed = 1;
    FinetuneMode finetune_mode = FinetuneMode::stepwise;
    bool pseudo_gt_stop_grad = false;  // joint mode: detach pseudo-GT before the PLM
    int eval_count = 32;

    void validate() const {
        if (model.patch <= 0 || train_h % model.patch != 0 || train_w % model.patch != 0)
            throw config_error("config: patch_size must divide the training height and width");
        if (train_h < 8 || train_w < 8) throw config_error("config: train_size must be >= 8");
        if (lr_initial <= 0.0 || lr_decayed <= 0.0) throw config_error("config: lr must be positive");
        if (pretrain_iters < 1 || finetune_iters < 1)
            throw config_error("config: iterations must be >= 1");
        if (model.heads <= 0 || model.token_dim() % model.heads != 0)
            throw config_error("config: heads must divide the token dimension");
        if (model.max_tokens < (train_h * train_w) / (model.patch * model.patch))
            throw config_error("config: max_tokens too small for train_size");
        if (contrastive.queries < 1 || contrastive.negatives < 1 || contrastive.tau <= 0.0)
            throw config_error("config: invalid contrastive settings");
        tasks.validate();
    }
};

struct TrainRecord {
    long long iteration = 0;
    std::string task;
    double l1 = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
    double seconds = 0.0;  // wall time, excluded from determinism comparisons
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void to_csv(std::ostream& os, bool include_time = true) const {
        os << (include_time ? "iteration,task,l1,contrastive,total,seconds\n"
                            : "iteration,task,l1,contrastive,total\n");
        char buf[256];
        for (const auto& r : records) {
            if (include_time)
                std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g,%.6f\n", r.iteration,
                              r.task.c_str(), r.l1, r.contrastive, r.total, r.seconds);
            else
                std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g\n", r.iteration,
                              r.task.c_str(), r.l1, r.contrastive, r.total);
            os << buf;
        }
    }
};

namespace detail {
inline void check_finite_loss(double v, const char* stage, long long iter, const std::string& task) {
    if (!std::isfinite(v))
        throw usage_error(std::string(stage) + ": non-finite loss at iteration " +
                          std::to_string(iter) + " (task " + task + ")");
}
inline double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}
}  // namespace detail

struct TrainResult {
    Checkpoint checkpoint;
    TrainLog log;
};

// Stage 1: task-agnostic pre-training of theta + PLM on mixed degradations.
// Pass `resume` to continue an interrupted run on the identical trajectory.
// `post_backward` (when set) observes the populated gradients each iteration,
// after backward() and before the optimizer consumes them.
inline TrainResult pretrain(const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                            const std::function<void(const Checkpoint&, long long)>&
                                post_backward = {}) {
    cfg.validate();
    Checkpoint ck;
    Rng train_rng(derive_seed(cfg.seed, "pretrain"));
    long long start = 0;
    if (resume) {
        ck = resume->deep_copy();
        train_rng.load_state(ck.rng_state);
        start = ck.iteration;
    } else {
        Rng init_rng(derive_seed(cfg.seed, "init"));
        ck.model = cfg.model;
        ck.theta = init_backbone(cfg.model, init_rng);
        ck.plm = init_plm(cfg.model, init_rng);
        ck.adam_theta = AdamState::for_store(ck.theta, cfg.lr_initial);
        ck.adam_plm = AdamState::for_store(ck.plm, cfg.lr_initial);
    }

    TrainLog log;
    double t0 = detail::now_seconds();
    for (long long i = start; i < cfg.pretrain_iters; ++i) {
        auto pair = sample_pair(cfg.tasks, Phase::pretrain, "", cfg.train_h, cfg.train_w, train_rng);
        Tensor q_gt = plm_forward(pair.clean, ck.plm, cfg.model);
        Tensor q_d = plm_forward(pair.corrupted, ck.plm, cfg.model);
        Tensor out = backbone_forward(pair.corrupted, q_gt, ck.theta, cfg.model);
        Tensor l1 = l1_loss(out, pair.clean);
        Tensor ctr = contrastive_loss(q_d, q_gt, cfg.contrastive, train_rng);
        Tensor loss = l1 + scale(ctr, cfg.lambda);
        detail::check_finite_loss(loss.value(), "pretrain", i, pair.task_id);
        backward(loss);
        if (post_backward) post_backward(ck, i);
        double lr = i < cfg.lr_decay_step ? cfg.lr_initial : cfg.lr_decayed;
        adam_step(ck.theta, ck.adam_theta, lr);
        adam_step(ck.plm, ck.adam_plm, lr);
        log.records.push_back({i, pair.task_id, l1.value(), ctr.value(), loss.value(),
                               detail::now_seconds() - t0});
    }
    ck.iteration = cfg.pretrain_iters;
    ck.rng_state = train_rng.save_state();
    return TrainResult{std::move(ck), std::move(log)};
}

// Stage 2, option 1: fine-tune phi on L1(pseudoGT, GT) first, then freeze it
// and fine-tune theta + PLM with prior queries computed from the pseudo-GT.
inline TrainResult finetune_stepwise(const TrainConfig& cfg, const Checkpoint& init,
                                     const std::string& task, Checkpoint* after_phase1 = nullptr) {
    cfg.validate();
    cfg.tasks.find(task);  // throws config_error when absent
    Checkpoint ck = init.deep_copy();
    ck.has_phi = true;
    ck.phi = init.theta.clone();
    ck.adam_phi = AdamState::for_store(ck.phi, cfg.lr_initial);
    ck.adam_theta = AdamState::for_store(ck.theta, cfg.lr_initial);
    ck.adam_plm = AdamState::for_store(ck.plm, cfg.lr_initial);

    Rng rng(derive_seed(cfg.seed, "finetune:" + task));
    TrainLog log;
    double t0 = detail::now_seconds();
    long long p1 = cfg.finetune_iters / 2;
    long long p2 = cfg.finetune_iters - p1;

    // phase 1: phi alone; its prior queries come from the degraded input
    for (long long i = 0; i < p1; ++i) {
        auto pair = sample_pair(cfg.tasks, Phase::finetune, task, cfg.train_h, cfg.train_w, rng);
        Tensor q_cor;
        {
            NoGradGuard ng;
            q_cor = plm_forward(pair.corrupted, ck.plm, cfg.model);
        }
        Tensor pseudo = backbone_forward(pair.corrupted, q_cor, ck.phi, cfg.model);
        Tensor loss = l1_loss(pseudo, pair.clean);
        detail::check_finite_loss(loss.value(), "finetune_stepwise/phase1", i, task);
        backward(loss);
        double lr = i < cfg.lr_decay_step ? cfg.lr_initial : cfg.lr_decayed;
        adam_step(ck.phi, ck.adam_phi, lr);
        log.records.push_back({i, task, loss.value(), 0.0, loss.value(),
                               detail::now_seconds() - t0});
    }
    ck.rng_state = rng.save_state();
    ck.iteration = p1;
    if (after_phase1) *after_phase1 = ck.deep_copy();

    // phase 2: phi frozen; theta + PLM trained with pseudo-GT priors
    for (long long i = 0; i < p2; ++i) {
        auto pair = sample_pair(cfg.tasks, Phase::finetune, task, cfg.train_h, cfg.train_w, rng);
        Tensor pseudo;
        {
            NoGradGuard ng;
            Tensor q_cor = plm_forward(pair.corrupted, ck.plm, cfg.model);
            pseudo = backbone_forward(pair.corrupted, q_cor, ck.phi, cfg.model);
        }
        Tensor q_p = plm_forward(pseudo, ck.plm, cfg.model);
        Tensor out = backbone_forward(pair.corrupted, q_p, ck.theta, cfg.model);
        Tensor loss = l1_loss(out, pair.clean);
        detail::check_finite_loss(loss.value(), "finetune_stepwise/phase2", p1 + i, task);
        backward(loss);
        double lr = i < cfg.lr_decay_step ? cfg.lr_initial : cfg.lr_decayed;
        adam_step(ck.theta, ck.adam_theta, lr);
        adam_step(ck.plm, ck.adam_plm, lr);
        log.records.push_back({p1 + i, task, loss.value(), 0.0, loss.value(),
                               detail::now_seconds() - t0});
    }
    ck.rng_state = rng.save_state();
    ck.iteration = cfg.finetune_iters;
    return TrainResult{std::move(ck), std::move(log)};
}

// Stage 2, option 2: phi, theta and PLM all fine-tuned simultaneously with
// loss L1(O, GT) + L1(pseudoGT, GT).
inline TrainResult finetune_joint(const TrainConfig& cfg, const Checkpoint& init,
                                  const std::string& task) {
    cfg.validate();
    cfg.tasks.find(task);
    Checkpoint ck = init.deep_copy();
    ck.has_phi = true;
    ck.phi = init.theta.clone();
    ck.adam_phi = AdamState::for_store(ck.phi, cfg.lr_initial);
    ck.adam_theta = AdamState::for_store(ck.theta, cfg.lr_initial);
    ck.adam_plm = AdamState::for_store(ck.plm, cfg.lr_initial);

    Rng rng(derive_seed(cfg.seed, "finetune:" + task));
    TrainLog log;
    double t0 = detail::now_seconds();
    for (long long i = 0; i < cfg.finetune_iters; ++i) {
        auto pair = sample_pair(cfg.tasks, Phase::finetune, task, cfg.train_h, cfg.train_w, rng);
        Tensor q_cor = plm_forward(pair.corrupted, ck.plm, cfg.model);
        Tensor pseudo = backbone_forward(pair.corrupted, q_cor, ck.phi, cfg.model);
        Tensor pseudo_in = cfg.pseudo_gt_stop_grad ? pseudo.detach() : pseudo;
        Tensor q_p = plm_forward(pseudo_in, ck.plm, cfg.model);
        Tensor out = backbone_forward(pair.corrupted, q_p, ck.theta, cfg.model);
        Tensor l1_main = l1_loss(out, pair.clean);
        Tensor loss = l1_main + l1_loss(pseudo, pair.clean);
        detail::check_finite_loss(loss.value(), "finetune_joint", i, task);
        backward(loss);
        double lr = i < cfg.lr_decay_step ? cfg.lr_initial : cfg.lr_decayed;
        adam_step(ck.theta, ck.adam_theta, lr);
        adam_step(ck.plm, ck.adam_plm, lr);
        adam_step(ck.phi, ck.adam_phi, lr);
        log.records.push_back({i, task, l1_main.value(), 0.0, loss.value(),
                               detail::now_seconds() - t0});
    }
    ck.rng_state = rng.save_state();
    ck.iteration = cfg.finetune_iters;
    return TrainResult{std::move(ck), std::move(log)};
}

inline TrainResult finetune(const TrainConfig& cfg, const Checkpoint& init, const std::string& task) {
    return cfg.finetune_mode == FinetuneMode::stepwise ? finetune_stepwise(cfg, init, task)
                                                       : finetune_joint(cfg, init, task);
}

// Inference: pseudo-GT from phi (when present), prior queries from the
// pseudo-GT, restored image from theta. Output clipped to [0,1].
inline Tensor restore_image(const Checkpoint& ck, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw dim_error("restore_image: expected a [3,H,W] image");
    if (image.dim(1) % ck.model.patch != 0 || image.dim(2) % ck.model.patch != 0)
        throw dim_error("restore_image: image height and width must be divisible by the patch size " +
                        std::to_string(ck.model.patch));
    NoGradGuard ng;
    Tensor out;
    if (ck.has_phi) {
        Tensor pseudo = backbone_forward(image, plm_forward(image, ck.plm, ck.model), ck.phi,
                                         ck.model);
        out = backbone_forward(image, plm_forward(pseudo, ck.plm, ck.model), ck.theta, ck.model);
    } else {
        out = backbone_forward(image, plm_forward(image, ck.plm, ck.model), ck.theta, ck.model);
    }
    return clip01(out);
}

struct EvalPair {
    Tensor corrupted;
    Tensor clean;
};

inline std::vector<EvalPair> make_eval_set(const TrainConfig& cfg, const std::string& task,
                                           int count, Rng& rng) {
    std::vector<EvalPair> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        auto p = sample_pair(cfg.tasks, Phase::finetune, task, cfg.train_h, cfg.train_w, rng);
        out.push_back({std::move(p.corrupted), std::move(p.clean)});
    }
    return out;
}

inline EvalReport evaluate_set(const Checkpoint& ck, const std::vector<EvalPair>& pairs,
                               const std::string& task_id = "") {
    if (pairs.empty()) throw usage_error("evaluate_set: empty evaluation set");
    EvalReport rep;
    rep.task_id = task_id;
    for (const auto& p : pairs) {
        Tensor restored = restore_image(ck, p.corrupted);
        rep.psnr_values.push_back(psnr(restored, p.clean));
        rep.ssim_values.push_back(ssim(restored, p.clean));
    }
    return rep;
}

struct CompareReport {
    std::string task;
    double psnr_input = 0.0;      // degraded input vs clean, baseline
    double psnr_scratch = 0.0, ssim_scratch = 0.0;
    double psnr_pretrained = 0.0, ssim_pretrained = 0.0;
    double psnr_delta() const { return psnr_pretrained - psnr_scratch; }
    double ssim_delta() const { return ssim_pretrained - ssim_scratch; }

    void to_csv(std::ostream& os) const {
        os << "variant,psnr_db,ssim\n";
        char buf[128];
        std::snprintf(buf, sizeof buf, "input,%.6f,\n", psnr_input);
        os << buf;
        std::snprintf(buf, sizeof buf, "scratch,%.6f,%.6f\n", psnr_scratch, ssim_scratch);
        os << buf;
        std::snprintf(buf, sizeof buf, "pretrained,%.6f,%.6f\n", psnr_pretrained, ssim_pretrained);
        os << buf;
        std::snprintf(buf, sizeof buf, "delta,%.6f,%.6f\n", psnr_delta(), ssim_delta());
        os << buf;
    }
};

// Pretrain-vs-scratch comparison: identical fine-tune budgets, data order and
// evaluation set; only the initialization differs.
inline CompareReport compare_pretrain_effect(const TrainConfig& cfg, const std::string& task) {
    cfg.validate();
    cfg.tasks.find(task);

    // (a) scratch: random init, fine-tune only
    Checkpoint scratch0;
    {
        Rng init_rng(derive_seed(cfg.seed, "scratch_init"));
        scratch0.model = cfg.model;
        scratch0.theta = init_backbone(cfg.model, init_rng);
        scratch0.plm = init_plm(cfg.model, init_rng);
        scratch0.adam_theta = AdamState::for_store(scratch0.theta, cfg.lr_initial);
        scratch0.adam_plm = AdamState::for_store(scratch0.plm, cfg.lr_initial);
    }
    Checkpoint ft_scratch = finetune(cfg, scratch0, task).checkpoint;

    // (b) pretrained init, identical fine-tune
    Checkpoint pre = pretrain(cfg).checkpoint;
    Checkpoint ft_pre = finetune(cfg, pre, task).checkpoint;

    Rng eval_rng(derive_seed(cfg.seed, "eval:" + task));
    auto pairs = make_eval_set(cfg, task, cfg.eval_count, eval_rng);

    CompareReport rep;
    rep.task = task;
    double in_psnr = 0.0;
    for (const auto& p : pairs) in_psnr += psnr(p.corrupted, p.clean);
    rep.psnr_input = in_psnr / static_cast<double>(pairs.size());
    EvalReport es = evaluate_set(ft_scratch, pairs, task);
    EvalReport ep = evaluate_set(ft_pre, pairs, task);
    rep.psnr_scratch = es.mean_psnr();
    rep.ssim_scratch = es.mean_ssim();
    rep.psnr_pretrained = ep.mean_psnr();
    rep.ssim_pretrained = ep.mean_ssim();
    return rep;
}

}  // namespace tape
