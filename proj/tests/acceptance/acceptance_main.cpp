// Acceptance gate: one pass/fail line per criterion, nonzero exit on failure.
// argv[1] must point at the configs/ directory of the repository.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tape/config.hpp"
#include "tape/gradcheck.hpp"
#include "tape/pipeline.hpp"

using namespace tape;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& label, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, label.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::string log_csv(const TrainLog& log) {
    std::ostringstream os;
    log.to_csv(os, /*include_time=*/false);
    return os.str();
}

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
    cfg.lr_decay_step = 50;
    cfg.eval_count = 2;
    cfg.seed = 13;
    cfg.tasks = default_tasks();
    return cfg;
}

// independent scalar-loop InfoNCE evaluation
double contrastive_oracle(const Tensor& qd, const Tensor& qg, const ContrastiveConfig& cfg,
                          const ContrastivePlan& plan) {
    int D = qd.dim(1);
    auto row = [&](const Tensor& t, std::size_t i) {
        std::vector<double> r(t.data().begin() + static_cast<long>(i) * D,
                              t.data().begin() + static_cast<long>(i + 1) * D);
        if (cfg.normalize) {
            double n = 0.0;
            for (double v : r) n += v * v;
            n = std::max(std::sqrt(n), 1e-12);
            for (double& v : r) v /= n;
        }
        return r;
    };
    double total = 0.0;
    for (std::size_t t = 0; t < plan.queries.size(); ++t) {
        auto qi = row(qd, plan.queries[t]);
        auto gi = row(qg, plan.queries[t]);
        double pos = std::exp(std::inner_product(qi.begin(), qi.end(), gi.begin(), 0.0) / cfg.tau);
        double denom = pos;
        for (std::size_t j : plan.negatives[t]) {
            auto gj = row(qg, j);
            denom += std::exp(std::inner_product(qi.begin(), qi.end(), gj.begin(), 0.0) / cfg.tau);
        }
        total += -std::log(pos / denom);
    }
    return total;
}

void criterion1_gradcheck() {
    double t0 = now_s();
    auto results = run_gradcheck_suite(20);
    double dt = now_s() - t0;
    double worst = 0.0;
    std::string worst_op;
    bool pass = true;
    for (const auto& r : results) {
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_op = r.op;
        }
        pass = pass && r.pass(1e-4);
    }
    pass = pass && dt < 60.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "worst rel err %.3g on %s over %zu ops, %.1fs", worst,
                  worst_op.c_str(), results.size(), dt);
    report(1, "finite-difference gradcheck", pass, buf);
}

void criterion2_contrastive_oracle() {
    Rng rng(202);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        int N = 3 + static_cast<int>(rng.uniform_index(8));
        int D = 2 + static_cast<int>(rng.uniform_index(6));
        Tensor qd = detail::random_tensor({N, D}, rng, -2.0, 2.0);
        Tensor qg = detail::random_tensor({N, D}, rng, -2.0, 2.0);
        ContrastiveConfig cc;
        cc.queries = 1 + static_cast<int>(rng.uniform_index(N));
        cc.negatives = 1 + static_cast<int>(rng.uniform_index(N));
        cc.normalize = inst % 2 == 0;
        auto plan = sample_contrastive_plan(N, cc, rng);
        double got = contrastive_loss_with_plan(qd, qg, cc, plan).value();
        worst = std::max(worst, std::abs(got - contrastive_oracle(qd, qg, cc, plan)));
    }

    // equal logits: every term reduces to ln(m_eff + 1)
    int N = 5, D = 3;
    std::vector<double> d;
    for (int i = 0; i < N; ++i) d.insert(d.end(), {0.4, -0.9, 1.3});
    Tensor q({N, D}, d);
    ContrastiveConfig cc;  // clamps to T = 5, m_eff = 4
    auto plan = sample_contrastive_plan(N, cc, rng);
    double equal_err =
        std::abs(contrastive_loss_with_plan(q, q, cc, plan).value() - 5.0 * std::log(5.0));

    bool pass = worst <= 1e-9 && equal_err <= 1e-12;
    char buf[160];
    std::snprintf(buf, sizeof buf, "oracle gap %.3g over 100 instances, equal-logit gap %.3g",
                  worst, equal_err);
    report(2, "contrastive loss vs independent oracle", pass, buf);
}

void criterion3_structural() {
    bool pass = true;
    std::string fail;
    ModelConfig cfg;
    cfg.channels = 2;
    cfg.patch = 2;
    cfg.heads = 2;
    cfg.plm_hidden = 3;
    cfg.max_tokens = 16;
    Rng rng(303);

    // patchify bijection
    Tensor img = detail::random_tensor({4, 8, 8}, rng);
    if (unpatchify(patchify(img, 4), 4, 8, 8, 4).data() != img.data()) {
        pass = false;
        fail += " patchify-bijection";
    }

    // shape preservation through the full backbone
    ParameterStore bb = init_backbone(cfg, rng);
    ParameterStore plm = init_plm(cfg, rng);
    Tensor x = detail::random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    Tensor out = backbone_forward(x, plm_forward(x, plm, cfg), bb, cfg);
    if (out.shape() != x.shape()) {
        pass = false;
        fail += " shape-preservation";
    }

    // prior queries reach scores of both decoder MSAs but never the values
    int N = 16, D = cfg.token_dim();
    Tensor oe = detail::random_tensor({N, D}, rng);
    Tensor q1 = detail::random_tensor({N, D}, rng);
    Tensor q2 = q1.clone();
    q2.data()[5] += 0.5;
    DecoderProbe p1, p2;
    decoder_block(oe, q1, bb, cfg.heads, &p1);
    decoder_block(oe, q2, bb, cfg.heads, &p2);
    if (p1.msa1.value_input != p2.msa1.value_input || p1.msa2.value_input != p2.msa2.value_input ||
        p1.msa1.head_logits == p2.msa1.head_logits || p1.msa2.head_logits == p2.msa2.head_logits) {
        pass = false;
        fail += " decoder-prior-contract";
    }

    // residual pass-through with zeroed sublayer output projections
    for (const char* name : {"blk0.msa.wo", "blk0.msa.bo", "blk0.ffn.w2", "blk0.ffn.b2"})
        for (auto& v : bb.get(name).data()) v = 0.0;
    Tensor tok = detail::random_tensor({4, D}, rng);
    if (encoder_block(tok, bb, 0, cfg.heads).data() != tok.data()) {
        pass = false;
        fail += " residual-passthrough";
    }

    report(3, "architectural invariants", pass,
           pass ? std::string("all four invariants hold") : "failed:" + fail);
}

void criterion4_determinism() {
    TrainConfig cfg = micro_cfg();
    cfg.pretrain_iters = 100;
    bool pass = true;
    std::string fail;

    auto r1 = pretrain(cfg);
    auto r2 = pretrain(cfg);
    if (log_csv(r1.log) != log_csv(r2.log)) {
        pass = false;
        fail += " repeat-log";
    }
    save_checkpoint(r1.checkpoint, "acc_det_a.ckpt");
    save_checkpoint(r2.checkpoint, "acc_det_b.ckpt");
    if (file_bytes("acc_det_a.ckpt") != file_bytes("acc_det_b.ckpt")) {
        pass = false;
        fail += " repeat-checkpoint";
    }

    Checkpoint loaded = load_checkpoint("acc_det_a.ckpt");
    save_checkpoint(loaded, "acc_det_c.ckpt");
    if (file_bytes("acc_det_a.ckpt") != file_bytes("acc_det_c.ckpt")) {
        pass = false;
        fail += " save-load-save";
    }

    TrainConfig half = cfg;
    half.pretrain_iters = 50;
    auto part = pretrain(half);
    auto rest = pretrain(cfg, &part.checkpoint);
    save_checkpoint(rest.checkpoint, "acc_det_d.ckpt");
    if (file_bytes("acc_det_a.ckpt") != file_bytes("acc_det_d.ckpt")) {
        pass = false;
        fail += " split-50+50";
    }

    for (const char* p : {"acc_det_a.ckpt", "acc_det_b.ckpt", "acc_det_c.ckpt", "acc_det_d.ckpt"})
        std::remove(p);
    report(4, "determinism and persistence", pass,
           pass ? std::string("logs and checkpoints bit-identical, split run matches")
                : "failed:" + fail);
}

void criterion5_toy_training(const std::string& configs_dir) {
    TrainConfig cfg = parse_config(configs_dir + "/toy.json");
    double t0 = now_s();
    auto res = pretrain(cfg);
    double dt = now_s() - t0;
    const auto& rec = res.log.records;
    auto mean_l1 = [&](std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += rec[i].l1;
        return s / static_cast<double>(hi - lo);
    };
    double first = mean_l1(0, 50);
    double last = mean_l1(rec.size() - 50, rec.size());
    bool pass = rec.size() >= 100 && last < 0.6 * first && dt < 180.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "first-50 L1 %.4f, final-50 L1 %.4f, ratio %.3f, %.1fs", first,
                  last, last / first, dt);
    report(5, "toy pre-training loss decreases", pass, buf);
}

void criterion6_snow_compare(const std::string& configs_dir) {
    TrainConfig cfg = parse_config(configs_dir + "/toy.json");
    nlohmann::json pinned;
    std::ifstream pf(configs_dir + "/pinned.json");
    pf >> pinned;
    double expected = pinned.at("snow_compare").at("expected_psnr_delta_db");
    double tol = pinned.at("snow_compare").at("tolerance_db");

    CompareReport rep = compare_pretrain_effect(cfg, "snow");
    bool pass = rep.psnr_pretrained >= rep.psnr_scratch &&
                std::abs(rep.psnr_delta() - expected) <= tol;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "input %.3f dB, scratch %.3f dB, pretrained %.3f dB, delta %.4f (pinned %.4f +/- %.2f)",
                  rep.psnr_input, rep.psnr_scratch, rep.psnr_pretrained, rep.psnr_delta(), expected,
                  tol);
    report(6, "held-out snow benefits from pre-training", pass, buf);
}

void criterion7_and_8(const std::string& configs_dir) {
    TrainConfig cfg = parse_config(configs_dir + "/noise_transfer.json");
    CompareReport rep = compare_pretrain_effect(cfg, "noise_high");
    bool pass7 = rep.psnr_delta() >= 0.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "scratch %.3f dB, pretrained %.3f dB, delta %.4f",
                  rep.psnr_scratch, rep.psnr_pretrained, rep.psnr_delta());
    report(7, "noise-level transfer is non-negative", pass7, buf);

    // metric pins plus end-to-end usefulness on the same 32-image eval set
    bool exact_psnr = std::abs(psnr(Tensor::zeros({3, 8, 8}), Tensor::full({3, 8, 8}, 0.1)) -
                               20.0) < 1e-12;
    Rng rng(808);
    Tensor a = gen_clean_patch(16, 16, rng);
    bool ssim_self = std::abs(ssim(a, a) - 1.0) < 1e-12;
    bool monotone = true;
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {0.02, 0.08, 0.2}) {
        Tensor pert = a.clone();
        Rng n(809);
        for (auto& v : pert.data()) v = std::clamp(v + n.uniform(-eps, eps), 0.0, 1.0);
        double p = psnr(pert, a);
        monotone = monotone && p < prev;
        prev = p;
    }
    bool restores = rep.psnr_pretrained > rep.psnr_input;
    bool pass8 = exact_psnr && ssim_self && monotone && restores;
    std::snprintf(buf, sizeof buf,
                  "psnr pin %s, ssim self %s, monotone %s, restored %.3f dB vs input %.3f dB",
                  exact_psnr ? "ok" : "bad", ssim_self ? "ok" : "bad", monotone ? "ok" : "bad",
                  rep.psnr_pretrained, rep.psnr_input);
    report(8, "metric correctness and restoration gain", pass8, buf);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: tape_acceptance <configs-dir>\n");
        return 2;
    }
    std::string configs = argv[1];
    try {
        criterion1_gradcheck();
        criterion2_contrastive_oracle();
        criterion3_structural();
        criterion4_determinism();
        criterion5_toy_training(configs);
        criterion6_snow_compare(configs);
        criterion7_and_8(configs);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance run aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%s\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
    return g_failures == 0 ? 0 : 1;
}
