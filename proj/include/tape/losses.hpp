#pragma once

#include <algorithm>
#include <vector>

#include "tape/rng.hpp"
#include "tape/tensor.hpp"

namespace tape {

// Mean absolute deviation; subgradient 0 at exact ties.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    detail::check_same_shape(pred, target, "l1_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i)
        s += std::abs(pred.data()[i] - target.data()[i]);
    double n = static_cast<double>(pred.numel());
    auto pn = pred.node(), tn = target.node();
    return detail::make_op({}, {s / n}, {pred, target},
                           [pn, tn, n](detail::Node& self) {
                               double g = self.grad[0] / n;
                               for (std::size_t i = 0; i < pn->data.size(); ++i) {
                                   double d = pn->data[i] - tn->data[i];
                                   double sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
                                   if (pn->requires_grad) {
                                       pn->ensure_grad();
                                       pn->grad[i] += sg;
                                   }
                                   if (tn->requires_grad) {
                                       tn->ensure_grad();
                                       tn->grad[i] -= sg;
                                   }
                               }
                           });
}

struct ContrastiveConfig {
    int queries = 256;     // T: query rows sampled per step (clamped to N)
    int negatives = 256;   // m: negatives per query (clamped to N-1)
    double tau = 0.07;
    bool normalize = true; // l2-normalize rows before dot products
};

// Sampled indices for one contrastive evaluation; fixing the plan makes the
// loss a deterministic function of its tensor inputs.
struct ContrastivePlan {
    std::vector<std::size_t> queries;                 // sampled i
    std::vector<std::vector<std::size_t>> negatives;  // per query: j != i
};

inline ContrastivePlan sample_contrastive_plan(int n_rows, const ContrastiveConfig& cfg, Rng& rng) {
    if (n_rows < 2) throw usage_error("contrastive_loss: need at least 2 rows for negatives");
    if (cfg.queries < 1 || cfg.negatives < 1 || cfg.tau <= 0.0)
        throw config_error("contrastive_loss: invalid config");
    std::size_t n = static_cast<std::size_t>(n_rows);
    std::size_t t_eff = std::min<std::size_t>(cfg.queries, n);
    std::size_t m_eff = std::min<std::size_t>(cfg.negatives, n - 1);
    ContrastivePlan plan;
    plan.queries = rng.sample_without_replacement(n, t_eff);
    plan.negatives.reserve(t_eff);
    for (std::size_t i : plan.queries) {
        // distinct negatives j != i, uniform without replacement
        auto draw = rng.sample_without_replacement(n - 1, m_eff);
        std::vector<std::size_t> negs(m_eff);
        for (std::size_t k = 0; k < m_eff; ++k)
            negs[k] = draw[k] >= i ? draw[k] + 1 : draw[k];
        plan.negatives.push_back(std::move(negs));
    }
    return plan;
}

// Sum over sampled queries of -log( exp(q_i^d . q_i^gt / tau) /
// (exp(q_i^d . q_i^gt / tau) + sum_k exp(q_i^d . q_{j_k}^gt / tau)) ).
inline Tensor contrastive_loss_with_plan(const Tensor& q_degraded, const Tensor& q_gt,
                                         const ContrastiveConfig& cfg,
                                         const ContrastivePlan& plan) {
    detail::check_same_shape(q_degraded, q_gt, "contrastive_loss");
    if (q_degraded.rank() != 2) throw dim_error("contrastive_loss: rank-2 inputs required");
    int N = q_degraded.dim(0);
    if (N < 2) throw usage_error("contrastive_loss: need at least 2 rows for negatives");

    Tensor qd = cfg.normalize ? l2_normalize_rows(q_degraded) : q_degraded;
    Tensor qg = cfg.normalize ? l2_normalize_rows(q_gt) : q_gt;

    Tensor qd_sel = gather_rows(qd, plan.queries);
    // scores[t][j] = q_d[i_t] . q_gt[j] / tau
    Tensor scores = scale(matmul(qd_sel, transpose(qg)), 1.0 / cfg.tau);

    // logits[t] = [positive, negatives...]
    std::size_t t_eff = plan.queries.size();
    std::size_t cols = plan.negatives.empty() ? 1 : plan.negatives[0].size() + 1;
    std::vector<std::size_t> idx(t_eff * cols);
    for (std::size_t t = 0; t < t_eff; ++t) {
        idx[t * cols] = t * N + plan.queries[t];
        for (std::size_t k = 0; k + 1 < cols; ++k)
            idx[t * cols + k + 1] = t * N + plan.negatives[t][k];
    }
    Tensor logits = permute_flat_gather(scores, idx,
                                        {static_cast<int>(t_eff), static_cast<int>(cols)});
    Tensor lse = log_sum_exp_rows(logits);
    Tensor pos = reshape(slice_cols(logits, 0, 1), {static_cast<int>(t_eff)});
    return sum(lse - pos);
}

inline Tensor contrastive_loss(const Tensor& q_degraded, const Tensor& q_gt,
                               const ContrastiveConfig& cfg, Rng& rng) {
    auto plan = sample_contrastive_plan(q_degraded.dim(0), cfg, rng);
    return contrastive_loss_with_plan(q_degraded, q_gt, cfg, plan);
}

// l1_loss(pred, target) + lambda * contrastive_loss(Q_d, Q_gt)
inline Tensor combined_pretrain_loss(const Tensor& pred, const Tensor& target,
                                     const Tensor& q_degraded, const Tensor& q_gt, double lambda,
                                     const ContrastiveConfig& cfg, Rng& rng) {
    Tensor l1 = l1_loss(pred, target);
    if (lambda == 0.0) {
        // still consume the sampling stream so lambda does not perturb it
        sample_contrastive_plan(q_degraded.dim(0), cfg, rng);
        return l1;
    }
    return l1 + scale(contrastive_loss(q_degraded, q_gt, cfg, rng), lambda);
}

}  // namespace tape
