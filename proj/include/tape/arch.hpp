#pragma once

#include <string>
#include <vector>

#include "tape/nn.hpp"
#include "tape/params.hpp"

namespace tape {

struct ModelConfig {
    int channels = 16;    // C: feature width of CNN encoder/decoder and PLM output
    int patch = 4;        // P
    int heads = 2;
    int n_blocks = 1;     // transformer encoder depth
    int ffn_mult = 2;     // FFN hidden width = ffn_mult * D
    int plm_hidden = 32;  // first conv width of the PLM feature extractor
    int max_tokens = 256; // learnable PE / e slots; caps supported H*W/P^2

    int token_dim() const { return channels * patch * patch; }

    bool operator==(const ModelConfig&) const = default;
};

namespace detail {
inline void add_mha_params(ParameterStore& s, const std::string& prefix, int D, Rng& rng) {
    s.add(prefix + ".wq", init_uniform({D, D}, D, rng));
    s.add(prefix + ".bq", Tensor::zeros({D}));
    s.add(prefix + ".wk", init_uniform({D, D}, D, rng));
    s.add(prefix + ".bk", Tensor::zeros({D}));
    s.add(prefix + ".wv", init_uniform({D, D}, D, rng));
    s.add(prefix + ".bv", Tensor::zeros({D}));
    s.add(prefix + ".wo", init_uniform({D, D}, D, rng));
    s.add(prefix + ".bo", Tensor::zeros({D}));
}
inline void add_ln_params(ParameterStore& s, const std::string& prefix, int D) {
    s.add(prefix + ".g", Tensor::full({D}, 1.0));
    s.add(prefix + ".b", Tensor::zeros({D}));
}
inline void add_ffn_params(ParameterStore& s, const std::string& prefix, int D, int mult, Rng& rng) {
    int Dh = mult * D;
    s.add(prefix + ".w1", init_uniform({Dh, D}, D, rng));
    s.add(prefix + ".b1", Tensor::zeros({Dh}));
    s.add(prefix + ".w2", init_uniform({D, Dh}, Dh, rng));
    s.add(prefix + ".b2", Tensor::zeros({D}));
}
inline MhaParams fetch_mha(const ParameterStore& s, const std::string& prefix) {
    return MhaParams{s.get(prefix + ".wq"), s.get(prefix + ".bq"), s.get(prefix + ".wk"),
                     s.get(prefix + ".bk"), s.get(prefix + ".wv"), s.get(prefix + ".bv"),
                     s.get(prefix + ".wo"), s.get(prefix + ".bo")};
}
}  // namespace detail

inline ParameterStore init_backbone(const ModelConfig& cfg, Rng& rng) {
    ParameterStore s;
    int C = cfg.channels, D = cfg.token_dim();
    s.add("enc1.w", init_uniform({C, 3, 3, 3}, 3 * 9, rng));
    s.add("enc1.b", Tensor::zeros({C}));
    s.add("enc2.w", init_uniform({C, C, 3, 3}, C * 9, rng));
    s.add("enc2.b", Tensor::zeros({C}));
    s.add("pe", init_normal({cfg.max_tokens, D}, 0.02, rng));
    for (int i = 0; i < cfg.n_blocks; ++i) {
        std::string p = "blk" + std::to_string(i);
        detail::add_ln_params(s, p + ".ln1", D);
        detail::add_mha_params(s, p + ".msa", D, rng);
        detail::add_ln_params(s, p + ".ln2", D);
        detail::add_ffn_params(s, p + ".ffn", D, cfg.ffn_mult, rng);
    }
    detail::add_ln_params(s, "dec.ln_in", D);
    detail::add_mha_params(s, "dec.msa1", D, rng);
    detail::add_ln_params(s, "dec.ln_mid", D);
    detail::add_mha_params(s, "dec.msa2", D, rng);
    detail::add_ln_params(s, "dec.ln_out", D);
    detail::add_ffn_params(s, "dec.ffn", D, cfg.ffn_mult, rng);
    s.add("dec1.w", init_uniform({C, C, 3, 3}, C * 9, rng));
    s.add("dec1.b", Tensor::zeros({C}));
    s.add("dec2.w", init_uniform({3, C, 3, 3}, C * 9, rng));
    s.add("dec2.b", Tensor::zeros({3}));
    return s;
}

inline ParameterStore init_plm(const ModelConfig& cfg, Rng& rng) {
    ParameterStore s;
    int C = cfg.channels, Ch = cfg.plm_hidden, D = cfg.token_dim();
    s.add("g1.w", init_uniform({Ch, 3, 3, 3}, 3 * 9, rng));
    s.add("g1.b", Tensor::zeros({Ch}));
    s.add("g2.w", init_uniform({C, Ch, 3, 3}, Ch * 9, rng));
    s.add("g2.b", Tensor::zeros({C}));
    s.add("g3.w", init_uniform({C, C, 3, 3}, C * 9, rng));
    s.add("g3.b", Tensor::zeros({C}));
    s.add("e", init_normal({cfg.max_tokens, D}, 0.02, rng));
    return s;
}

// [C,H,W] -> [N, C*P*P] over non-overlapping P x P blocks in raster order,
// channel-major within each row. A pure permutation, hence bit-exact.
inline Tensor patchify(const Tensor& f, int P) {
    if (f.rank() != 3) throw dim_error("patchify: rank-3 tensor required");
    int C = f.dim(0), H = f.dim(1), W = f.dim(2);
    if (P <= 0 || H % P != 0 || W % P != 0)
        throw dim_error("patchify: patch size must divide H and W");
    int bh = H / P, bw = W / P;
    int N = bh * bw, D = C * P * P;
    std::vector<std::size_t> perm(static_cast<std::size_t>(N) * D);
    std::size_t o = 0;
    for (int by = 0; by < bh; ++by)
        for (int bx = 0; bx < bw; ++bx)
            for (int c = 0; c < C; ++c)
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px)
                        perm[o++] = (static_cast<std::size_t>(c) * H + by * P + py) * W +
                                    bx * P + px;
    return permute_flat(f, perm, {N, D});
}

inline Tensor unpatchify(const Tensor& tokens, int C, int H, int W, int P) {
    if (tokens.rank() != 2) throw dim_error("unpatchify: rank-2 tensor required");
    if (P <= 0 || H % P != 0 || W % P != 0)
        throw dim_error("unpatchify: patch size must divide H and W");
    int bh = H / P, bw = W / P;
    int N = bh * bw, D = C * P * P;
    if (tokens.dim(0) != N || tokens.dim(1) != D)
        throw dim_error("unpatchify: token shape does not match target");
    // inverse of the patchify permutation
    std::vector<std::size_t> perm(static_cast<std::size_t>(N) * D);
    std::size_t o = 0;
    for (int by = 0; by < bh; ++by)
        for (int bx = 0; bx < bw; ++bx)
            for (int c = 0; c < C; ++c)
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px) {
                        std::size_t img = (static_cast<std::size_t>(c) * H + by * P + py) * W +
                                          bx * P + px;
                        perm[img] = o++;
                    }
    return permute_flat(tokens, perm, {C, H, W});
}

// Two 3x3 conv layers 3 -> C -> C with ReLU in between.
inline Tensor cnn_encode(const Tensor& image, const ParameterStore& bb) {
    Tensor h = relu(conv2d(image, bb.get("enc1.w"), bb.get("enc1.b"), 1));
    return conv2d(h, bb.get("enc2.w"), bb.get("enc2.b"), 1);
}

// Two 3x3 conv layers C -> C -> 3 with ReLU in between.
inline Tensor cnn_decode(const Tensor& features, const ParameterStore& bb) {
    Tensor h = relu(conv2d(features, bb.get("dec1.w"), bb.get("dec1.b"), 1));
    return conv2d(h, bb.get("dec2.w"), bb.get("dec2.b"), 1);
}

namespace detail {
inline Tensor ffn(const Tensor& x, const ParameterStore& s, const std::string& prefix) {
    Tensor h = relu(linear(x, s.get(prefix + ".w1"), s.get(prefix + ".b1")));
    return linear(h, s.get(prefix + ".w2"), s.get(prefix + ".b2"));
}
}  // namespace detail

// x' = MSA(LN(x), LN(x), LN(x)) + x ; out = FFN(LN(x')) + x'
inline Tensor encoder_block(const Tensor& x, const ParameterStore& bb, int block, int heads) {
    std::string p = "blk" + std::to_string(block);
    Tensor n1 = layernorm(x, bb.get(p + ".ln1.g"), bb.get(p + ".ln1.b"));
    Tensor xp = multi_head_attention(n1, n1, n1, heads, detail::fetch_mha(bb, p + ".msa")) + x;
    Tensor n2 = layernorm(xp, bb.get(p + ".ln2.g"), bb.get(p + ".ln2.b"));
    return detail::ffn(n2, bb, p + ".ffn") + xp;
}

struct DecoderProbe {
    MhaProbe msa1, msa2;
};

// y  = MSA(LN(o_e)+Q, LN(o_e)+Q, LN(o_e)) + o_e
// y' = MSA(LN(y)+Q, LN(o_e), LN(o_e)) + y
// o_d = FFN(LN(y')) + y'
// Q enters queries/keys only, never the value path.
inline Tensor decoder_block(const Tensor& o_e, const Tensor& q_prior, const ParameterStore& bb,
                            int heads, DecoderProbe* probe = nullptr) {
    if (q_prior.shape() != o_e.shape())
        throw dim_error("decoder_block: prior queries must match token shape");
    Tensor n_in = layernorm(o_e, bb.get("dec.ln_in.g"), bb.get("dec.ln_in.b"));
    Tensor qk = n_in + q_prior;
    Tensor y = multi_head_attention(qk, qk, n_in, heads, detail::fetch_mha(bb, "dec.msa1"),
                                    probe ? &probe->msa1 : nullptr) +
               o_e;
    Tensor n_mid = layernorm(y, bb.get("dec.ln_mid.g"), bb.get("dec.ln_mid.b"));
    Tensor y2 = multi_head_attention(n_mid + q_prior, n_in, n_in, heads,
                                     detail::fetch_mha(bb, "dec.msa2"),
                                     probe ? &probe->msa2 : nullptr) +
                y;
    Tensor n_out = layernorm(y2, bb.get("dec.ln_out.g"), bb.get("dec.ln_out.b"));
    return detail::ffn(n_out, bb, "dec.ffn") + y2;
}

// Q[i] = e_i + flatten(patch i of G_n(image)); G_n is a 3-layer conv stack.
inline Tensor plm_forward(const Tensor& image, const ParameterStore& plm, const ModelConfig& cfg) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw dim_error("plm_forward: expected a 3-channel image");
    Tensor h = relu(conv2d(image, plm.get("g1.w"), plm.get("g1.b"), 1));
    h = relu(conv2d(h, plm.get("g2.w"), plm.get("g2.b"), 1));
    h = conv2d(h, plm.get("g3.w"), plm.get("g3.b"), 1);
    Tensor tokens = patchify(h, cfg.patch);
    int N = tokens.dim(0);
    if (N > cfg.max_tokens)
        throw dim_error("plm_forward: token count exceeds configured max_tokens");
    std::vector<std::size_t> rows(N);
    for (int i = 0; i < N; ++i) rows[i] = static_cast<std::size_t>(i);
    return tokens + gather_rows(plm.get("e"), rows);
}

// Full restoration path: CNN encode, patchify + PE, n encoder blocks,
// prior-conditioned decoder block, unpatchify, CNN decode.
inline Tensor backbone_forward(const Tensor& image, const Tensor& q_prior,
                               const ParameterStore& bb, const ModelConfig& cfg,
                               DecoderProbe* probe = nullptr) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw dim_error("backbone_forward: expected a 3-channel image");
    int H = image.dim(1), W = image.dim(2);
    Tensor fe = cnn_encode(image, bb);
    Tensor x = patchify(fe, cfg.patch);
    int N = x.dim(0);
    if (N > cfg.max_tokens)
        throw dim_error("backbone_forward: token count exceeds configured max_tokens");
    std::vector<std::size_t> rows(N);
    for (int i = 0; i < N; ++i) rows[i] = static_cast<std::size_t>(i);
    x = x + gather_rows(bb.get("pe"), rows);
    for (int i = 0; i < cfg.n_blocks; ++i) x = encoder_block(x, bb, i, cfg.heads);
    Tensor od = decoder_block(x, q_prior, bb, cfg.heads, probe);
    Tensor fd = unpatchify(od, cfg.channels, H, W, cfg.patch);
    return cnn_decode(fd, bb);
}

}  // namespace tape
