#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tape/arch.hpp"
#include "tape/losses.hpp"
#include "tape/nn.hpp"

namespace tape {

// Central finite-difference verification of reverse-mode gradients.
// `forward` must rebuild the graph from the given leaf tensors on every call
// and return a scalar loss. A random subset of coordinates per input is
// checked; the maximum relative error over all of them is returned.
inline double finite_diff_check(const std::function<Tensor()>& forward,
                                std::vector<Tensor> inputs, Rng& rng,
                                int coords_per_input = 25, double h = 1e-5) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = forward();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) analytic.push_back(t.grad_or_zeros());

    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = inputs[ti];
        std::size_t n = t.numel();
        std::vector<std::size_t> coords;
        if (static_cast<int>(n) <= coords_per_input) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords = rng.sample_without_replacement(n, coords_per_input);
        }
        for (std::size_t c : coords) {
            double orig = t.data()[c];
            double a = analytic[ti][c];
            auto rel_at = [&](double step) {
                double fp, fm;
                {
                    NoGradGuard ng;
                    t.data()[c] = orig + step;
                    fp = forward().value();
                    t.data()[c] = orig - step;
                    fm = forward().value();
                    t.data()[c] = orig;
                }
                double numeric = (fp - fm) / (2.0 * step);
                return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-2});
            };
            double rel = rel_at(h);
            // a large gap can come from stepping across a ReLU kink rather
            // than a wrong gradient; shrinking h removes the former only
            if (rel > 1e-6) rel = std::min(rel, rel_at(h * 1e-2));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

namespace detail {
// scalar loss = sum(out * fixed random weights); keeps softmax-style
// zero-sum null spaces out of the check
inline Tensor weighted_sum(const Tensor& out, const std::vector<double>& w) {
    Tensor weights(out.shape(), w);
    return sum(mul(out, weights));
}
inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
    std::vector<double> w(n);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    return w;
}
inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::size_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(d));
}
inline std::vector<Tensor> store_tensors(ParameterStore& s, const std::string& prefix = "") {
    std::vector<Tensor> out;
    for (auto& [name, t] : s.items())
        if (prefix.empty() || name.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
}
}  // namespace detail

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Finite-difference suite over every differentiable operation; `instances`
// seeded random cases per op.
inline std::vector<GradCheckResult> run_gradcheck_suite(int instances = 20,
                                                        std::uint64_t seed = 42,
                                                        int coords_per_input = 12) {
    std::vector<GradCheckResult> results;
    auto record = [&](const std::string& op, const std::function<double(Rng&)>& one) {
        Rng rng(derive_seed(seed, op));
        double worst = 0.0;
        for (int i = 0; i < instances; ++i) worst = std::max(worst, one(rng));
        results.push_back({op, worst});
    };

    record("conv2d", [&](Rng& rng) {
        int ci = 1 + static_cast<int>(rng.uniform_index(3));
        int co = 1 + static_cast<int>(rng.uniform_index(3));
        int H = 4 + static_cast<int>(rng.uniform_index(3));
        int W = 4 + static_cast<int>(rng.uniform_index(3));
        Tensor x = detail::random_tensor({ci, H, W}, rng);
        Tensor k = detail::random_tensor({co, ci, 3, 3}, rng);
        Tensor b = detail::random_tensor({co}, rng);
        auto w = detail::random_weights(static_cast<std::size_t>(co) * H * W, rng);
        return finite_diff_check(
            [&] { return detail::weighted_sum(conv2d(x, k, b, 1), w); }, {x, k, b}, rng,
            coords_per_input);
    });

    record("linear", [&](Rng& rng) {
        int M = 2 + static_cast<int>(rng.uniform_index(3));
        int di = 2 + static_cast<int>(rng.uniform_index(4));
        int dout = 2 + static_cast<int>(rng.uniform_index(4));
        Tensor x = detail::random_tensor({M, di}, rng);
        Tensor w = detail::random_tensor({dout, di}, rng);
        Tensor b = detail::random_tensor({dout}, rng);
        auto ws = detail::random_weights(static_cast<std::size_t>(M) * dout, rng);
        return finite_diff_check(
            [&] { return detail::weighted_sum(linear(x, w, b), ws); }, {x, w, b}, rng,
            coords_per_input);
    });

    record("layernorm", [&](Rng& rng) {
        int M = 2 + static_cast<int>(rng.uniform_index(3));
        int D = 4 + static_cast<int>(rng.uniform_index(3));
        Tensor x = detail::random_tensor({M, D}, rng);
        Tensor g = detail::random_tensor({D}, rng, 0.5, 1.5);
        Tensor b = detail::random_tensor({D}, rng);
        auto ws = detail::random_weights(static_cast<std::size_t>(M) * D, rng);
        return finite_diff_check(
            [&] { return detail::weighted_sum(layernorm(x, g, b), ws); }, {x, g, b}, rng,
            coords_per_input);
    });

    record("softmax", [&](Rng& rng) {
        int M = 2 + static_cast<int>(rng.uniform_index(3));
        int D = 3 + static_cast<int>(rng.uniform_index(4));
        Tensor x = detail::random_tensor({M, D}, rng, -2.0, 2.0);
        auto ws = detail::random_weights(static_cast<std::size_t>(M) * D, rng);
        return finite_diff_check(
            [&] { return detail::weighted_sum(softmax(x), ws); }, {x}, rng, coords_per_input);
    });

    record("attention", [&](Rng& rng) {
        int N = 2 + static_cast<int>(rng.uniform_index(3));
        int heads = 1 + static_cast<int>(rng.uniform_index(2));
        int D = 4 * heads;
        Tensor q = detail::random_tensor({N, D}, rng);
        Tensor k = detail::random_tensor({N, D}, rng);
        Tensor v = detail::random_tensor({N, D}, rng);
        MhaParams p{detail::random_tensor({D, D}, rng, -0.5, 0.5), detail::random_tensor({D}, rng),
                    detail::random_tensor({D, D}, rng, -0.5, 0.5), detail::random_tensor({D}, rng),
                    detail::random_tensor({D, D}, rng, -0.5, 0.5), detail::random_tensor({D}, rng),
                    detail::random_tensor({D, D}, rng, -0.5, 0.5), detail::random_tensor({D}, rng)};
        auto ws = detail::random_weights(static_cast<std::size_t>(N) * D, rng);
        return finite_diff_check(
            [&] { return detail::weighted_sum(multi_head_attention(q, k, v, heads, p), ws); },
            {q, k, v, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo}, rng, coords_per_input);
    });

    ModelConfig tiny;
    tiny.channels = 2;
    tiny.patch = 2;
    tiny.heads = 2;
    tiny.n_blocks = 1;
    tiny.plm_hidden = 3;
    tiny.max_tokens = 16;
    int D = tiny.token_dim();  // 8

    record("encoder_block", [&](Rng& rng) {
        ParameterStore bb = init_backbone(tiny, rng);
        int N = 3;
        Tensor x = detail::random_tensor({N, D}, rng);
        auto ws = detail::random_weights(static_cast<std::size_t>(N) * D, rng);
        auto inputs = detail::store_tensors(bb, "blk0.");
        inputs.push_back(x);
        return finite_diff_check(
            [&] { return detail::weighted_sum(encoder_block(x, bb, 0, tiny.heads), ws); },
            std::move(inputs), rng, coords_per_input);
    });

    record("decoder_block", [&](Rng& rng) {
        ParameterStore bb = init_backbone(tiny, rng);
        int N = 3;
        Tensor oe = detail::random_tensor({N, D}, rng);
        Tensor q = detail::random_tensor({N, D}, rng);
        auto ws = detail::random_weights(static_cast<std::size_t>(N) * D, rng);
        auto inputs = detail::store_tensors(bb, "dec.");
        inputs.push_back(oe);
        inputs.push_back(q);
        return finite_diff_check(
            [&] { return detail::weighted_sum(decoder_block(oe, q, bb, tiny.heads), ws); },
            std::move(inputs), rng, coords_per_input);
    });

    record("plm", [&](Rng& rng) {
        ParameterStore plm = init_plm(tiny, rng);
        // jitter all parameters: the zero-initialized biases otherwise allow
        // conv pre-activations that sit exactly on the ReLU kink (dead
        // receptive fields), where one-sided subgradients are expected
        for (auto& [name, t] : plm.items())
            for (auto& v : t.data()) v += rng.uniform(0.01, 0.05);
        Tensor img = detail::random_tensor({3, 4, 4}, rng, 0.0, 1.0);
        auto ws = detail::random_weights(4 * static_cast<std::size_t>(D), rng);
        auto inputs = detail::store_tensors(plm);
        inputs.push_back(img);
        return finite_diff_check(
            [&] { return detail::weighted_sum(plm_forward(img, plm, tiny), ws); },
            std::move(inputs), rng, coords_per_input);
    });

    record("backbone", [&](Rng& rng) {
        ParameterStore bb = init_backbone(tiny, rng);
        Tensor img = detail::random_tensor({3, 4, 4}, rng, 0.0, 1.0);
        Tensor q = detail::random_tensor({4, D}, rng, -0.1, 0.1);
        auto ws = detail::random_weights(3 * 4 * 4, rng);
        auto inputs = detail::store_tensors(bb);
        inputs.push_back(img);
        inputs.push_back(q);
        return finite_diff_check(
            [&] { return detail::weighted_sum(backbone_forward(img, q, bb, tiny), ws); },
            std::move(inputs), rng, 4);
    });

    record("l1_loss", [&](Rng& rng) {
        int n = 6 + static_cast<int>(rng.uniform_index(10));
        Tensor target = detail::random_tensor({n}, rng, 0.0, 1.0);
        // keep |pred - target| well away from the kink at 0
        std::vector<double> pd(n);
        for (int i = 0; i < n; ++i)
            pd[i] = target.data()[i] + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.5);
        Tensor pred({n}, pd);
        return finite_diff_check([&] { return l1_loss(pred, target); }, {pred, target}, rng,
                                 coords_per_input);
    });

    record("contrastive", [&](Rng& rng) {
        int N = 4, Dc = 3;
        Tensor qd = detail::random_tensor({N, Dc}, rng, 0.2, 1.0);
        Tensor qg = detail::random_tensor({N, Dc}, rng, 0.2, 1.0);
        ContrastiveConfig cc;
        cc.queries = N;
        cc.negatives = N - 1;
        cc.tau = 0.5;
        auto plan = sample_contrastive_plan(N, cc, rng);
        return finite_diff_check(
            [&] { return contrastive_loss_with_plan(qd, qg, cc, plan); }, {qd, qg}, rng,
            coords_per_input);
    });

    return results;
}

}  // namespace tape
