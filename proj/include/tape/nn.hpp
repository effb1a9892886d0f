#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "tape/tensor.hpp"

namespace tape {

// y = x W^T + b with x: [..., D_in], W: [D_out, D_in], b: [D_out]
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || bias.rank() != 1) throw dim_error("linear: bad parameter rank");
    if (x.rank() < 1) throw dim_error("linear: input must have at least one axis");
    std::size_t d_in = x.shape().back();
    std::size_t d_out = weight.dim(0);
    if (d_in != static_cast<std::size_t>(weight.dim(1)))
        throw dim_error("linear: input dim does not match weight");
    if (d_out != static_cast<std::size_t>(bias.dim(0)))
        throw dim_error("linear: bias dim does not match weight");
    std::size_t rows = x.numel() / d_in;

    std::vector<double> out(rows * d_out);
    detail::mm_a_bt(rows, d_in, d_out, x.data().data(), weight.data().data(), out.data(), false);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d_out; ++j) out[i * d_out + j] += bias.data()[j];

    std::vector<int> out_shape = x.shape();
    out_shape.back() = static_cast<int>(d_out);
    auto xn = x.node(), wn = weight.node(), bn = bias.node();
    return detail::make_op(std::move(out_shape), std::move(out), {x, weight, bias},
                           [xn, wn, bn, rows, d_in, d_out](detail::Node& self) {
                               if (xn->requires_grad) {
                                   xn->ensure_grad();
                                   detail::mm(rows, d_out, d_in, self.grad.data(),
                                              wn->data.data(), xn->grad.data(), true);
                               }
                               if (wn->requires_grad) {
                                   wn->ensure_grad();
                                   detail::mm_at_b(d_out, rows, d_in, self.grad.data(),
                                                   xn->data.data(), wn->grad.data(), true);
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < d_out; ++j)
                                           bn->grad[j] += self.grad[i * d_out + j];
                               }
                           });
}

namespace detail {
// col: [C_in*k*k, H*W]
inline void im2col(const double* in, int C, int H, int W, int k, int pad, double* col) {
    int HW = H * W;
    for (int c = 0; c < C; ++c)
        for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj) {
                double* row = col + (static_cast<std::size_t>((c * k + di) * k + dj)) * HW;
                for (int y = 0; y < H; ++y) {
                    int sy = y + di - pad;
                    for (int x = 0; x < W; ++x) {
                        int sx = x + dj - pad;
                        row[y * W + x] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                             ? in[(static_cast<std::size_t>(c) * H + sy) * W + sx]
                                             : 0.0;
                    }
                }
            }
}
inline void col2im_accum(const double* col, int C, int H, int W, int k, int pad, double* in_grad) {
    int HW = H * W;
    for (int c = 0; c < C; ++c)
        for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj) {
                const double* row = col + (static_cast<std::size_t>((c * k + di) * k + dj)) * HW;
                for (int y = 0; y < H; ++y) {
                    int sy = y + di - pad;
                    if (sy < 0 || sy >= H) continue;
                    for (int x = 0; x < W; ++x) {
                        int sx = x + dj - pad;
                        if (sx < 0 || sx >= W) continue;
                        in_grad[(static_cast<std::size_t>(c) * H + sy) * W + sx] += row[y * W + x];
                    }
                }
            }
}
}  // namespace detail

// Same-size 2-D convolution via im2col: input [C_in,H,W], kernel
// [C_out,C_in,k,k], bias [C_out], padding must equal (k-1)/2.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding) {
    if (input.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1)
        throw dim_error("conv2d: bad ranks");
    int C_in = input.dim(0), H = input.dim(1), W = input.dim(2);
    int C_out = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != C_in) throw dim_error("conv2d: kernel C_in mismatch");
    if (kernel.dim(3) != k || k % 2 == 0) throw dim_error("conv2d: kernel must be square with odd size");
    if (padding != (k - 1) / 2) throw dim_error("conv2d: padding must be (k-1)/2");
    if (bias.dim(0) != C_out) throw dim_error("conv2d: bias size mismatch");

    std::size_t K = static_cast<std::size_t>(C_in) * k * k;
    std::size_t HW = static_cast<std::size_t>(H) * W;
    auto col = std::make_shared<std::vector<double>>(K * HW);
    detail::im2col(input.data().data(), C_in, H, W, k, padding, col->data());

    std::vector<double> out(static_cast<std::size_t>(C_out) * HW);
    detail::mm(C_out, K, HW, kernel.data().data(), col->data(), out.data(), false);
    for (int o = 0; o < C_out; ++o) {
        double b = bias.data()[o];
        for (std::size_t p = 0; p < HW; ++p) out[o * HW + p] += b;
    }

    auto in_n = input.node(), k_n = kernel.node(), b_n = bias.node();
    return detail::make_op({C_out, H, W}, std::move(out), {input, kernel, bias},
                           [in_n, k_n, b_n, col, C_in, C_out, H, W, k, padding, K,
                            HW](detail::Node& self) {
                               if (k_n->requires_grad) {
                                   k_n->ensure_grad();
                                   detail::mm_a_bt(C_out, HW, K, self.grad.data(), col->data(),
                                                   k_n->grad.data(), true);
                               }
                               if (b_n->requires_grad) {
                                   b_n->ensure_grad();
                                   for (int o = 0; o < C_out; ++o)
                                       for (std::size_t p = 0; p < HW; ++p)
                                           b_n->grad[o] += self.grad[o * HW + p];
                               }
                               if (in_n->requires_grad) {
                                   in_n->ensure_grad();
                                   std::vector<double> dcol(K * HW);
                                   detail::mm_at_b(K, C_out, HW, k_n->data.data(),
                                                   self.grad.data(), dcol.data(), false);
                                   detail::col2im_accum(dcol.data(), C_in, H, W, k, padding,
                                                        in_n->grad.data());
                               }
                           });
}

// Layer normalization over the last axis with per-feature affine.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                        double eps = 1e-5) {
    if (gain.rank() != 1 || shift.rank() != 1) throw dim_error("layernorm: affine params must be vectors");
    std::size_t D = x.shape().back();
    if (D != static_cast<std::size_t>(gain.dim(0)) || D != static_cast<std::size_t>(shift.dim(0)))
        throw dim_error("layernorm: affine size mismatch");
    if (eps <= 0.0) throw usage_error("layernorm: eps must be positive");
    std::size_t rows = x.numel() / D;

    std::vector<double> out(x.numel());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x.data().data() + i * D;
        double mu = 0.0;
        for (std::size_t j = 0; j < D; ++j) mu += row[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(D);
        double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[i] = rs;
        for (std::size_t j = 0; j < D; ++j) {
            double xh = (row[j] - mu) * rs;
            (*xhat)[i * D + j] = xh;
            out[i * D + j] = gain.data()[j] * xh + shift.data()[j];
        }
    }

    auto xn = x.node(), gn = gain.node(), sn = shift.node();
    return detail::make_op(x.shape(), std::move(out), {x, gain, shift},
                           [xn, gn, sn, xhat, rstd, rows, D](detail::Node& self) {
                               if (gn->requires_grad) {
                                   gn->ensure_grad();
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < D; ++j)
                                           gn->grad[j] += self.grad[i * D + j] * (*xhat)[i * D + j];
                               }
                               if (sn->requires_grad) {
                                   sn->ensure_grad();
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < D; ++j)
                                           sn->grad[j] += self.grad[i * D + j];
                               }
                               if (xn->requires_grad) {
                                   xn->ensure_grad();
                                   double invD = 1.0 / static_cast<double>(D);
                                   for (std::size_t i = 0; i < rows; ++i) {
                                       double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                                       for (std::size_t j = 0; j < D; ++j) {
                                           double dxh = self.grad[i * D + j] * gn->data[j];
                                           sum_dxh += dxh;
                                           sum_dxh_xh += dxh * (*xhat)[i * D + j];
                                       }
                                       for (std::size_t j = 0; j < D; ++j) {
                                           double dxh = self.grad[i * D + j] * gn->data[j];
                                           xn->grad[i * D + j] +=
                                               (*rstd)[i] * (dxh - invD * sum_dxh -
                                                             (*xhat)[i * D + j] * invD * sum_dxh_xh);
                                       }
                                   }
                               }
                           });
}

// Softmax over the last axis, max-stabilized.
inline Tensor softmax(const Tensor& x) {
    std::size_t D = x.shape().back();
    std::size_t rows = x.numel() / D;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x.data().data() + i * D;
        double m = *std::max_element(row, row + D);
        double s = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            out[i * D + j] = std::exp(row[j] - m);
            s += out[i * D + j];
        }
        for (std::size_t j = 0; j < D; ++j) out[i * D + j] /= s;
    }
    auto xn = x.node();
    auto y = std::make_shared<std::vector<double>>(out);
    return detail::make_op(x.shape(), std::move(out), {x},
                           [xn, y, rows, D](detail::Node& self) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t i = 0; i < rows; ++i) {
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < D; ++j)
                                       dot += self.grad[i * D + j] * (*y)[i * D + j];
                                   for (std::size_t j = 0; j < D; ++j)
                                       xn->grad[i * D + j] +=
                                           (*y)[i * D + j] * (self.grad[i * D + j] - dot);
                               }
                           });
}

struct MhaParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Intermediates captured for structural checks.
struct MhaProbe {
    std::vector<double> value_input;                  // raw v argument
    std::vector<std::vector<double>> head_logits;     // scaled pre-softmax scores
};

// Scaled dot-product attention, `heads` heads over q,k,v: [N,D].
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                                   const MhaParams& p, MhaProbe* probe = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw dim_error("multi_head_attention: rank-2 inputs required");
    int D = q.dim(1);
    if (k.dim(1) != D || v.dim(1) != D) throw dim_error("multi_head_attention: feature dims differ");
    if (k.dim(0) != v.dim(0)) throw dim_error("multi_head_attention: key/value row mismatch");
    if (heads <= 0 || D % heads != 0)
        throw config_error("multi_head_attention: D must be divisible by heads");
    int dh = D / heads;
    double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    if (probe) {
        probe->value_input = v.data();
        probe->head_logits.clear();
    }

    Tensor qp = linear(q, p.wq, p.bq);
    Tensor kp = linear(k, p.wk, p.bk);
    Tensor vp = linear(v, p.wv, p.bv);

    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(qp, h * dh, dh);
        Tensor kh = slice_cols(kp, h * dh, dh);
        Tensor vh = slice_cols(vp, h * dh, dh);
        Tensor logits = scale(matmul(qh, transpose(kh)), sc);
        if (probe) probe->head_logits.push_back(logits.data());
        Tensor attn = softmax(logits);
        head_outs.push_back(matmul(attn, vh));
    }
    Tensor cat = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return linear(cat, p.wo, p.bo);
}

// Attention weights of one head (forward only), for invariant tests.
inline std::vector<double> attention_weights(const Tensor& q, const Tensor& k, int heads, int head,
                                             const MhaParams& p) {
    NoGradGuard ng;
    int D = q.dim(1);
    int dh = D / heads;
    Tensor qp = linear(q, p.wq, p.bq);
    Tensor kp = linear(k, p.wk, p.bk);
    Tensor qh = slice_cols(qp, head * dh, dh);
    Tensor kh = slice_cols(kp, head * dh, dh);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
    return attn.data();
}

}  // namespace tape
