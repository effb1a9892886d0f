#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tape/errors.hpp"

namespace tape {

class Tensor;

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches it
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

// Thread-local switch: when off, ops record no graph (inference mode).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw dim_error("negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace detail

struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense row-major f64 tensor; a cheap handle onto a graph node.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (detail::shape_numel(shape) != data.size())
            throw dim_error("Tensor: product(shape) != data length");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::size_t n = detail::shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
        std::size_t n = detail::shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({}, {value}, requires_grad);
    }

    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double value() const {
        if (numel() != 1) throw usage_error("Tensor::value: not a scalar");
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty())
            throw usage_error("Tensor::grad: no gradient recorded (run backward first)");
        return node_->grad;
    }
    std::vector<double> grad_or_zeros() const {
        if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    void drop_grad() { node_->grad.clear(); }

    // Same data, detached from the graph.
    Tensor detach() const {
        return Tensor(node_->shape, node_->data, false);
    }
    Tensor clone() const {
        return Tensor(node_->shape, node_->data, node_->requires_grad);
    }

    const detail::NodePtr& node() const { return node_; }

private:
    detail::NodePtr node_;
};

namespace detail {

inline void accumulate(const NodePtr& n, const std::vector<double>& g) {
    if (!n->requires_grad) return;
    n->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}

// Builds an op result node; records parents and the backward rule only
// when grad mode is on and some parent requires grad.
inline Tensor make_op(std::vector<int> shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(data), false);
    bool track = grad_mode();
    if (track) {
        track = false;
        for (const auto& p : parents)
            if (p.requires_grad()) { track = true; break; }
    }
    if (track) {
        out.node()->requires_grad = true;
        auto& ps = out.node()->parents;
        ps.reserve(parents.size());
        for (const auto& p : parents) ps.push_back(p.node());
        out.node()->backward_fn = std::move(backward_fn);
    }
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw dim_error(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- reverse pass ---------------------------------------------------------

// Fills grads of every requires_grad tensor reachable from `loss`.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw usage_error("backward: loss must be a scalar");
    detail::Node* root = loss.node().get();
    if (root->backward_done)
        throw usage_error("backward: already called on this graph; re-record the forward pass");
    root->backward_done = true;
    if (!root->requires_grad) return;

    // iterative post-order DFS -> topological order (inputs first)
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            detail::Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---- elementwise ops ------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn](detail::Node& self) {
                               detail::accumulate(an, self.grad);
                               detail::accumulate(bn, self.grad);
                           });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn](detail::Node& self) {
                               detail::accumulate(an, self.grad);
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       bn->grad[i] -= self.grad[i];
                               }
                           });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn](detail::Node& self) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       an->grad[i] += self.grad[i] * bn->data[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       bn->grad[i] += self.grad[i] * an->data[i];
                               }
                           });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, s](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   an->grad[i] += self.grad[i] * s;
                           });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
                           });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- reductions -----------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return detail::make_op({}, {s}, {a},
                           [an](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (double& g : an->grad) g += self.grad[0];
                           });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw usage_error("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---- structural ops -------------------------------------------------------

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (detail::shape_numel(shape) != a.numel())
        throw dim_error("reshape: element count mismatch");
    auto an = a.node();
    return detail::make_op(std::move(shape), a.data(), {a},
                           [an](detail::Node& self) { detail::accumulate(an, self.grad); });
}

// out[i] = a[perm[i]] for flat indices; perm must be a bijection.
inline Tensor permute_flat(const Tensor& a, const std::vector<std::size_t>& perm,
                           std::vector<int> out_shape) {
    if (perm.size() != a.numel() || detail::shape_numel(out_shape) != a.numel())
        throw dim_error("permute_flat: size mismatch");
    std::vector<double> out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = a.data()[perm[i]];
    auto an = a.node();
    auto p = std::make_shared<std::vector<std::size_t>>(perm);
    return detail::make_op(std::move(out_shape), std::move(out), {a},
                           [an, p](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < p->size(); ++i)
                                   an->grad[(*p)[i]] += self.grad[i];
                           });
}

// ---- 2-D linear algebra ---------------------------------------------------

namespace detail {
// C (MxN) += or = A (MxK) * B (KxN), raw row-major buffers
inline void mm(std::size_t M, std::size_t K, std::size_t N,
               const double* A, const double* B, double* C, bool accumulate_out) {
    if (!accumulate_out) std::fill(C, C + M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            double av = a[k];
            if (av == 0.0) continue;
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}
// C (MxN) += A^T where A is (KxM) times B (KxN)  => C = A^T B
inline void mm_at_b(std::size_t M, std::size_t K, std::size_t N,
                    const double* A, const double* B, double* C, bool accumulate_out) {
    if (!accumulate_out) std::fill(C, C + M * N, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const double* a = A + k * M;
        const double* b = B + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            double av = a[i];
            if (av == 0.0) continue;
            double* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}
// C (MxN) += A (MxK) times B^T where B is (NxK) => C = A B^T
inline void mm_a_bt(std::size_t M, std::size_t K, std::size_t N,
                    const double* A, const double* B, double* C, bool accumulate_out) {
    if (!accumulate_out) std::fill(C, C + M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) {
            const double* b = B + j * K;
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] += s;
        }
    }
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw dim_error("matmul: rank-2 tensors required");
    std::size_t M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
    if (K != K2) throw dim_error("matmul: inner dimensions differ");
    std::vector<double> out(M * N);
    detail::mm(M, K, N, a.data().data(), b.data().data(), out.data(), false);
    auto an = a.node(), bn = b.node();
    return detail::make_op({static_cast<int>(M), static_cast<int>(N)}, std::move(out), {a, b},
                           [an, bn, M, K, N](detail::Node& self) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   detail::mm_a_bt(M, N, K, self.grad.data(), bn->data.data(),
                                                   an->grad.data(), true);
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   detail::mm_at_b(K, M, N, an->data.data(), self.grad.data(),
                                                   bn->grad.data(), true);
                               }
                           });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw dim_error("transpose: rank-2 tensor required");
    std::size_t R = a.dim(0), C = a.dim(1);
    std::vector<std::size_t> perm(R * C);
    for (std::size_t j = 0; j < C; ++j)
        for (std::size_t i = 0; i < R; ++i) perm[j * R + i] = i * C + j;
    return permute_flat(a, perm, {static_cast<int>(C), static_cast<int>(R)});
}

// ---- row-wise ops on [R, C] matrices --------------------------------------

inline Tensor permute_flat_gather(const Tensor& a, const std::vector<std::size_t>& idx,
                                  std::vector<int> out_shape);

inline Tensor slice_cols(const Tensor& a, int start, int len) {
    if (a.rank() != 2) throw dim_error("slice_cols: rank-2 tensor required");
    int R = a.dim(0), C = a.dim(1);
    if (start < 0 || len <= 0 || start + len > C) throw dim_error("slice_cols: out of range");
    std::vector<std::size_t> perm(static_cast<std::size_t>(R) * len);
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < len; ++j)
            perm[static_cast<std::size_t>(i) * len + j] =
                static_cast<std::size_t>(i) * C + start + j;
    return permute_flat_gather(a, perm, {R, len});
}

// like permute_flat but perm need not be onto (gather); backward scatter-adds
inline Tensor permute_flat_gather(const Tensor& a, const std::vector<std::size_t>& idx,
                                  std::vector<int> out_shape) {
    if (detail::shape_numel(out_shape) != idx.size())
        throw dim_error("gather: size mismatch");
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.numel()) throw dim_error("gather: index out of range");
        out[i] = a.data()[idx[i]];
    }
    auto an = a.node();
    auto p = std::make_shared<std::vector<std::size_t>>(idx);
    return detail::make_op(std::move(out_shape), std::move(out), {a},
                           [an, p](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < p->size(); ++i)
                                   an->grad[(*p)[i]] += self.grad[i];
                           });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw usage_error("concat_cols: empty input");
    int R = parts[0].dim(0);
    int C = 0;
    for (const auto& t : parts) {
        if (t.rank() != 2 || t.dim(0) != R) throw dim_error("concat_cols: row mismatch");
        C += t.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(R) * C);
    std::vector<int> offsets;
    int off = 0;
    for (const auto& t : parts) {
        int c = t.dim(1);
        offsets.push_back(off);
        for (int i = 0; i < R; ++i)
            std::copy_n(t.data().begin() + static_cast<std::size_t>(i) * c, c,
                        out.begin() + static_cast<std::size_t>(i) * C + off);
        off += c;
    }
    std::vector<detail::NodePtr> nodes;
    for (const auto& t : parts) nodes.push_back(t.node());
    auto offs = std::make_shared<std::vector<int>>(std::move(offsets));
    return detail::make_op({R, C}, std::move(out), parts,
                           [nodes, offs, R, C](detail::Node& self) {
                               for (std::size_t k = 0; k < nodes.size(); ++k) {
                                   auto& n = nodes[k];
                                   if (!n->requires_grad) continue;
                                   n->ensure_grad();
                                   int c = n->shape[1];
                                   int off2 = (*offs)[k];
                                   for (int i = 0; i < R; ++i)
                                       for (int j = 0; j < c; ++j)
                                           n->grad[static_cast<std::size_t>(i) * c + j] +=
                                               self.grad[static_cast<std::size_t>(i) * C + off2 + j];
                               }
                           });
}

inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
    if (a.rank() != 2) throw dim_error("gather_rows: rank-2 tensor required");
    std::size_t C = a.dim(1);
    std::vector<std::size_t> idx(rows.size() * C);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= static_cast<std::size_t>(a.dim(0)))
            throw dim_error("gather_rows: row index out of range");
        for (std::size_t j = 0; j < C; ++j) idx[i * C + j] = rows[i] * C + j;
    }
    return permute_flat_gather(a, idx, {static_cast<int>(rows.size()), static_cast<int>(C)});
}

// log(sum(exp(row))) per row, max-stabilized; [R,C] -> [R]
inline Tensor log_sum_exp_rows(const Tensor& a) {
    if (a.rank() != 2) throw dim_error("log_sum_exp_rows: rank-2 tensor required");
    std::size_t R = a.dim(0), C = a.dim(1);
    std::vector<double> out(R);
    for (std::size_t i = 0; i < R; ++i) {
        const double* row = a.data().data() + i * C;
        double m = *std::max_element(row, row + C);
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) s += std::exp(row[j] - m);
        out[i] = m + std::log(s);
    }
    auto an = a.node();
    auto lse = std::make_shared<std::vector<double>>(out);
    return detail::make_op({static_cast<int>(R)}, std::move(out), {a},
                           [an, lse, R, C](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < R; ++i) {
                                   double g = self.grad[i];
                                   if (g == 0.0) continue;
                                   for (std::size_t j = 0; j < C; ++j)
                                       an->grad[i * C + j] +=
                                           g * std::exp(an->data[i * C + j] - (*lse)[i]);
                               }
                           });
}

// l2-normalize each row of [R,C]; zero rows are left untouched via eps floor
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
    if (a.rank() != 2) throw dim_error("l2_normalize_rows: rank-2 tensor required");
    std::size_t R = a.dim(0), C = a.dim(1);
    std::vector<double> out(R * C);
    std::vector<double> norms(R);
    for (std::size_t i = 0; i < R; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) s += a.data()[i * C + j] * a.data()[i * C + j];
        double n = std::max(std::sqrt(s), eps);
        norms[i] = n;
        for (std::size_t j = 0; j < C; ++j) out[i * C + j] = a.data()[i * C + j] / n;
    }
    auto an = a.node();
    auto nrm = std::make_shared<std::vector<double>>(std::move(norms));
    auto y = std::make_shared<std::vector<double>>(out);
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, nrm, y, R, C](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < R; ++i) {
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < C; ++j)
                                       dot += self.grad[i * C + j] * (*y)[i * C + j];
                                   for (std::size_t j = 0; j < C; ++j)
                                       an->grad[i * C + j] +=
                                           (self.grad[i * C + j] - (*y)[i * C + j] * dot) / (*nrm)[i];
                               }
                           });
}

inline Tensor clip01(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(a.data()[i], 0.0, 1.0);
    return Tensor(a.shape(), std::move(out));
}

}  // namespace tape
