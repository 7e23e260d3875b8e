#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "genqc/rng.hpp"
#include "genqc/tensor.hpp"

namespace genqc::ad {

using Val = int32_t;

/// Reverse-mode autodiff over Tensors. A Tape holds the nodes of one
/// forward computation; backward() walks it in reverse. Tapes are cheap
/// and single-use: build one per forward pass and drop it afterwards.
/// Not thread-safe; use one tape per thread.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first touch during backward
    bool requires_grad = false;
    std::function<void(struct Tape&, Val)> backward;
};

struct Tape {
    std::vector<Node> nodes;

    Val add_node(Tensor value, bool requires_grad, std::function<void(Tape&, Val)> bw) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(bw);
        nodes.push_back(std::move(n));
        return static_cast<Val>(nodes.size() - 1);
    }

    Val leaf(Tensor v, bool requires_grad = false) {
        return add_node(std::move(v), requires_grad, nullptr);
    }

    const Tensor& val(Val v) const { return nodes[static_cast<size_t>(v)].value; }

    bool rg(Val v) const { return nodes[static_cast<size_t>(v)].requires_grad; }

    /// Gradient buffer for a node, zero-initialized on first access.
    Tensor& grad(Val v) {
        Node& n = nodes[static_cast<size_t>(v)];
        if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    bool has_grad(Val v) const { return !nodes[static_cast<size_t>(v)].grad.empty(); }

    /// Backpropagate from a scalar root.
    void backward(Val root) {
        if (val(root).numel() != 1) throw std::logic_error("backward root must be scalar");
        grad(root)[0] = 1.0;
        for (Val i = root; i >= 0; --i) {
            Node& n = nodes[static_cast<size_t>(i)];
            if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, i);
        }
    }
};

inline bool any_rg(const Tape& t, std::initializer_list<Val> ps) {
    for (Val p : ps)
        if (t.rg(p)) return true;
    return false;
}

inline void accum(Tensor& dst, const Tensor& src) { dst.vec() += src.vec(); }

// ---------------------------------------------------------------------------
// Elementwise / linear ops
// ---------------------------------------------------------------------------

inline Val add(Tape& t, Val a, Val b) {
    if (!same_shape(t.val(a), t.val(b))) throw std::invalid_argument("add: shape mismatch");
    Tensor out = t.val(a).clone();
    out.vec() += t.val(b).vec();
    return t.add_node(std::move(out), any_rg(t, {a, b}), [a, b](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        if (tp.rg(a)) accum(tp.grad(a), g);
        if (tp.rg(b)) accum(tp.grad(b), g);
    });
}

inline Val sub(Tape& t, Val a, Val b) {
    if (!same_shape(t.val(a), t.val(b))) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = t.val(a).clone();
    out.vec() -= t.val(b).vec();
    return t.add_node(std::move(out), any_rg(t, {a, b}), [a, b](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        if (tp.rg(a)) accum(tp.grad(a), g);
        if (tp.rg(b)) tp.grad(b).vec() -= g.vec();
    });
}

inline Val mul(Tape& t, Val a, Val b) {
    if (!same_shape(t.val(a), t.val(b))) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = t.val(a).clone();
    out.vec().array() *= t.val(b).vec().array();
    return t.add_node(std::move(out), any_rg(t, {a, b}), [a, b](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        if (tp.rg(a)) tp.grad(a).vec().array() += g.vec().array() * tp.val(b).vec().array();
        if (tp.rg(b)) tp.grad(b).vec().array() += g.vec().array() * tp.val(a).vec().array();
    });
}

inline Val scale(Tape& t, Val a, double s) {
    Tensor out = t.val(a).clone();
    out.vec() *= s;
    return t.add_node(std::move(out), t.rg(a), [a, s](Tape& tp, Val self) {
        tp.grad(a).vec() += s * tp.nodes[static_cast<size_t>(self)].grad.vec();
    });
}

/// y = x + c with c a fixed (non-differentiated) tensor, e.g. a positional encoding.
inline Val add_const(Tape& t, Val a, const Tensor& c) {
    if (t.val(a).numel() != c.numel()) throw std::invalid_argument("add_const: size mismatch");
    Tensor out = t.val(a).clone();
    out.vec() += c.vec();
    return t.add_node(std::move(out), t.rg(a), [a](Tape& tp, Val self) {
        accum(tp.grad(a), tp.nodes[static_cast<size_t>(self)].grad);
    });
}

/// Sum in index order. Eigen's redux kernels pick their accumulation order
/// from the buffer's pointer alignment, which would make otherwise identical
/// training runs diverge by an ulp depending on where the tape landed.
inline double ordered_sum(const double* p, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += p[i];
    return s;
}

/// Bias add: x is (.., C), b is (C); b is broadcast over leading dims.
inline Val add_bias(Tape& t, Val x, Val b) {
    const Tensor& xv = t.val(x);
    const Tensor& bv = t.val(b);
    int64_t c = xv.last_dim();
    if (bv.numel() != c) throw std::invalid_argument("add_bias: width mismatch");
    Tensor out = xv.clone();
    out.mat2d().rowwise() += bv.vec().transpose();
    return t.add_node(std::move(out), any_rg(t, {x, b}), [x, b, c](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        if (tp.rg(x)) accum(tp.grad(x), g);
        if (tp.rg(b)) {
            const int64_t rows = g.numel() / c;
            auto G = g.mat(rows, c);
            auto bg = tp.grad(b).vec();
            // Row by row so the reduction order is fixed (see ordered_sum).
            for (int64_t r = 0; r < rows; ++r) bg += G.row(r).transpose();
        }
    });
}

inline Val reshape(Tape& t, Val a, std::vector<int64_t> shape) {
    Tensor out = t.val(a).clone().reshaped(std::move(shape));
    return t.add_node(std::move(out), t.rg(a), [a](Tape& tp, Val self) {
        tp.grad(a).vec() += tp.nodes[static_cast<size_t>(self)].grad.vec();
    });
}

/// C = op(A) * op(B) with optional transposes.
inline Val matmul(Tape& t, Val a, Val b, bool trans_a = false, bool trans_b = false) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.rank() != 2 || bv.rank() != 2) throw std::invalid_argument("matmul: rank-2 expected");
    auto A = av.mat(av.dim(0), av.dim(1));
    auto B = bv.mat(bv.dim(0), bv.dim(1));
    int64_t m = trans_a ? av.dim(1) : av.dim(0);
    int64_t k = trans_a ? av.dim(0) : av.dim(1);
    int64_t k2 = trans_b ? bv.dim(1) : bv.dim(0);
    int64_t n = trans_b ? bv.dim(0) : bv.dim(1);
    if (k != k2) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor out({m, n});
    auto C = out.mat(m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
    return t.add_node(std::move(out), any_rg(t, {a, b}),
                      [a, b, trans_a, trans_b, m, n](Tape& tp, Val self) {
        const Tensor& gv = tp.nodes[static_cast<size_t>(self)].grad;
        auto G = gv.mat(m, n);
        const Tensor& av2 = tp.val(a);
        const Tensor& bv2 = tp.val(b);
        auto A = av2.mat(av2.dim(0), av2.dim(1));
        auto B = bv2.mat(bv2.dim(0), bv2.dim(1));
        if (tp.rg(a)) {
            auto dA = tp.grad(a).mat(av2.dim(0), av2.dim(1));
            if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b) dA.noalias() += G * B;
            else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
        }
        if (tp.rg(b)) {
            auto dB = tp.grad(b).mat(bv2.dim(0), bv2.dim(1));
            if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
            else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
            else if (trans_a && !trans_b) dB.noalias() += A * G;
            else dB.noalias() += G.transpose() * A.transpose();
        }
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Val silu(Tape& t, Val a) {
    const Tensor& x = t.val(a);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
    return t.add_node(std::move(out), t.rg(a), [a](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        const Tensor& x = tp.val(a);
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < x.numel(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-x[i]));
            da[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    });
}

inline Val gelu(Tape& t, Val a) {
    static constexpr double kInvSqrt2 = 0.7071067811865475244;
    static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    const Tensor& x = t.val(a);
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
    return t.add_node(std::move(out), t.rg(a), [a](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        const Tensor& x = tp.val(a);
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < x.numel(); ++i) {
            double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
            da[i] += g[i] * (cdf + x[i] * pdf);
        }
    });
}

/// Row-wise softmax on a (S, C) tensor.
inline Val softmax_rows(Tape& t, Val a) {
    const Tensor& x = t.val(a);
    int64_t c = x.last_dim();
    int64_t s = x.numel() / c;
    Tensor out(x.shape());
    for (int64_t r = 0; r < s; ++r) {
        const double* xr = x.ptr() + r * c;
        double* yr = out.ptr() + r * c;
        double mx = xr[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int64_t j = 0; j < c; ++j) yr[j] /= sum;
    }
    return t.add_node(std::move(out), t.rg(a), [a, s, c](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        const Tensor& y = tp.val(self);
        Tensor& da = tp.grad(a);
        for (int64_t r = 0; r < s; ++r) {
            const double* yr = y.ptr() + r * c;
            const double* gr = g.ptr() + r * c;
            double* dr = da.ptr() + r * c;
            double dot = 0.0;
            for (int64_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
            for (int64_t j = 0; j < c; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// LayerNorm over the last dimension of (S, C), with per-channel gain/bias.
inline Val layer_norm(Tape& t, Val x, Val gamma, Val beta, double eps = 1e-5) {
    const Tensor& xv = t.val(x);
    int64_t c = xv.last_dim();
    int64_t s = xv.numel() / c;
    const Tensor& gm = t.val(gamma);
    const Tensor& bt = t.val(beta);
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor inv_std({s});
    for (int64_t r = 0; r < s; ++r) {
        const double* xr = xv.ptr() + r * c;
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(c);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t j = 0; j < c; ++j) {
            double h = (xr[j] - mu) * is;
            xhat[r * c + j] = h;
            out[r * c + j] = gm[j] * h + bt[j];
        }
    }
    return t.add_node(std::move(out), any_rg(t, {x, gamma, beta}),
                      [x, gamma, beta, s, c, xhat, inv_std](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        const Tensor& gm = tp.val(gamma);
        for (int64_t r = 0; r < s; ++r) {
            const double* gr = g.ptr() + r * c;
            const double* hr = xhat.ptr() + r * c;
            if (tp.rg(x)) {
                double* dx = tp.grad(x).ptr() + r * c;
                double mean_d = 0.0, mean_dh = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    double d = gr[j] * gm[j];
                    mean_d += d;
                    mean_dh += d * hr[j];
                }
                mean_d /= static_cast<double>(c);
                mean_dh /= static_cast<double>(c);
                for (int64_t j = 0; j < c; ++j) {
                    double d = gr[j] * gm[j];
                    dx[j] += inv_std[r] * (d - mean_d - hr[j] * mean_dh);
                }
            }
            if (tp.rg(gamma)) {
                Tensor& dg = tp.grad(gamma);
                for (int64_t j = 0; j < c; ++j) dg[j] += gr[j] * hr[j];
            }
            if (tp.rg(beta)) {
                Tensor& db = tp.grad(beta);
                for (int64_t j = 0; j < c; ++j) db[j] += gr[j];
            }
        }
    });
}

/// GroupNorm on (S, C): statistics per channel group across all S positions.
inline Val group_norm(Tape& t, Val x, Val gamma, Val beta, int groups, double eps = 1e-5) {
    const Tensor& xv = t.val(x);
    int64_t c = xv.last_dim();
    int64_t s = xv.numel() / c;
    if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible");
    int64_t cg = c / groups;
    const Tensor& gm = t.val(gamma);
    const Tensor& bt = t.val(beta);
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor inv_std({groups});
    for (int g = 0; g < groups; ++g) {
        double mu = 0.0;
        for (int64_t r = 0; r < s; ++r)
            for (int64_t j = g * cg; j < (g + 1) * cg; ++j) mu += xv[r * c + j];
        double m = static_cast<double>(s * cg);
        mu /= m;
        double var = 0.0;
        for (int64_t r = 0; r < s; ++r)
            for (int64_t j = g * cg; j < (g + 1) * cg; ++j) {
                double d = xv[r * c + j] - mu;
                var += d * d;
            }
        var /= m;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[g] = is;
        for (int64_t r = 0; r < s; ++r)
            for (int64_t j = g * cg; j < (g + 1) * cg; ++j) {
                double h = (xv[r * c + j] - mu) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = gm[j] * h + bt[j];
            }
    }
    return t.add_node(std::move(out), any_rg(t, {x, gamma, beta}),
                      [x, gamma, beta, s, c, cg, groups, xhat, inv_std](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        const Tensor& gm = tp.val(gamma);
        for (int gi = 0; gi < groups; ++gi) {
            double m = static_cast<double>(s * cg);
            if (tp.rg(x)) {
                double mean_d = 0.0, mean_dh = 0.0;
                for (int64_t r = 0; r < s; ++r)
                    for (int64_t j = gi * cg; j < (gi + 1) * cg; ++j) {
                        double d = g[r * c + j] * gm[j];
                        mean_d += d;
                        mean_dh += d * xhat[r * c + j];
                    }
                mean_d /= m;
                mean_dh /= m;
                Tensor& dx = tp.grad(x);
                for (int64_t r = 0; r < s; ++r)
                    for (int64_t j = gi * cg; j < (gi + 1) * cg; ++j) {
                        double d = g[r * c + j] * gm[j];
                        dx[r * c + j] += inv_std[gi] * (d - mean_d - xhat[r * c + j] * mean_dh);
                    }
            }
            if (tp.rg(gamma)) {
                Tensor& dg = tp.grad(gamma);
                for (int64_t r = 0; r < s; ++r)
                    for (int64_t j = gi * cg; j < (gi + 1) * cg; ++j)
                        dg[j] += g[r * c + j] * xhat[r * c + j];
            }
            if (tp.rg(beta)) {
                Tensor& db = tp.grad(beta);
                for (int64_t r = 0; r < s; ++r)
                    for (int64_t j = gi * cg; j < (gi + 1) * cg; ++j) db[j] += g[r * c + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Shape / gather ops
// ---------------------------------------------------------------------------

inline Val slice_cols(Tape& t, Val a, int64_t start, int64_t len) {
    const Tensor& x = t.val(a);
    int64_t c = x.last_dim();
    int64_t s = x.numel() / c;
    if (start < 0 || start + len > c) throw std::invalid_argument("slice_cols: out of range");
    Tensor out({s, len});
    for (int64_t r = 0; r < s; ++r)
        for (int64_t j = 0; j < len; ++j) out[r * len + j] = x[r * c + start + j];
    return t.add_node(std::move(out), t.rg(a), [a, start, len, s, c](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        Tensor& da = tp.grad(a);
        for (int64_t r = 0; r < s; ++r)
            for (int64_t j = 0; j < len; ++j) da[r * c + start + j] += g[r * len + j];
    });
}

inline Val concat_cols(Tape& t, const std::vector<Val>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int64_t c_total = 0;
    int64_t c0 = t.val(parts[0]).last_dim();
    int64_t s = t.val(parts[0]).numel() / c0;
    for (Val p : parts) {
        const Tensor& x = t.val(p);
        if (x.numel() / x.last_dim() != s) throw std::invalid_argument("concat_cols: row mismatch");
        c_total += x.last_dim();
    }
    Tensor out({s, c_total});
    int64_t off = 0;
    for (Val p : parts) {
        const Tensor& x = t.val(p);
        int64_t cw = x.last_dim();
        for (int64_t r = 0; r < s; ++r)
            for (int64_t j = 0; j < cw; ++j) out[r * c_total + off + j] = x[r * cw + j];
        off += cw;
    }
    bool rg = false;
    for (Val p : parts) rg = rg || t.rg(p);
    return t.add_node(std::move(out), rg, [parts, s, c_total](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        int64_t off = 0;
        for (Val p : parts) {
            int64_t cw = tp.val(p).last_dim();
            if (tp.rg(p)) {
                Tensor& dp = tp.grad(p);
                for (int64_t r = 0; r < s; ++r)
                    for (int64_t j = 0; j < cw; ++j) dp[r * cw + j] += g[r * c_total + off + j];
            }
            off += cw;
        }
    });
}

/// Concatenate sequences along the row (sequence) axis: inputs (Si, C) -> (sum Si, C).
inline Val concat_rows(Tape& t, const std::vector<Val>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int64_t c = t.val(parts[0]).last_dim();
    int64_t s_total = 0;
    for (Val p : parts) {
        if (t.val(p).last_dim() != c) throw std::invalid_argument("concat_rows: width mismatch");
        s_total += t.val(p).numel() / c;
    }
    Tensor out({s_total, c});
    int64_t off = 0;
    for (Val p : parts) {
        const Tensor& x = t.val(p);
        std::copy(x.data().begin(), x.data().end(), out.data().begin() + off);
        off += x.numel();
    }
    bool rg = false;
    for (Val p : parts) rg = rg || t.rg(p);
    return t.add_node(std::move(out), rg, [parts](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        int64_t off = 0;
        for (Val p : parts) {
            int64_t n = tp.val(p).numel();
            if (tp.rg(p)) {
                Tensor& dp = tp.grad(p);
                for (int64_t i = 0; i < n; ++i) dp[i] += g[off + i];
            }
            off += n;
        }
    });
}

/// Swaps the first two axes: (a, b) -> (b, a) or (a, b, c) -> (b, a, c).
inline Val transpose_01(Tape& t, Val a) {
    const Tensor& x = t.val(a);
    if (x.rank() != 2 && x.rank() != 3) throw std::invalid_argument("transpose_01: rank 2 or 3");
    int64_t d0 = x.dim(0), d1 = x.dim(1);
    int64_t c = x.rank() == 3 ? x.dim(2) : 1;
    std::vector<int64_t> out_shape =
        x.rank() == 3 ? std::vector<int64_t>{d1, d0, c} : std::vector<int64_t>{d1, d0};
    Tensor out(std::move(out_shape));
    for (int64_t i = 0; i < d0; ++i)
        for (int64_t j = 0; j < d1; ++j) {
            const double* src = x.ptr() + (i * d1 + j) * c;
            std::copy(src, src + c, out.ptr() + (j * d0 + i) * c);
        }
    return t.add_node(std::move(out), t.rg(a), [a, d0, d1, c](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        Tensor& da = tp.grad(a);
        for (int64_t i = 0; i < d0; ++i)
            for (int64_t j = 0; j < d1; ++j)
                for (int64_t k = 0; k < c; ++k)
                    da[(i * d1 + j) * c + k] += g[(j * d0 + i) * c + k];
    });
}

/// Embedding lookup: rows of table (V, C) selected by ids.
inline Val gather_rows(Tape& t, Val table, const std::vector<int>& ids) {
    const Tensor& tb = t.val(table);
    int64_t v = tb.dim(0), c = tb.dim(1);
    Tensor out({static_cast<int64_t>(ids.size()), c});
    for (size_t l = 0; l < ids.size(); ++l) {
        if (ids[l] < 0 || ids[l] >= v) throw std::out_of_range("gather_rows: id out of range");
        std::copy(tb.ptr() + ids[l] * c, tb.ptr() + (ids[l] + 1) * c, out.ptr() + l * c);
    }
    return t.add_node(std::move(out), t.rg(table), [table, ids, c](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        Tensor& dt = tp.grad(table);
        for (size_t l = 0; l < ids.size(); ++l)
            for (int64_t j = 0; j < c; ++j) dt[ids[l] * c + j] += g[static_cast<int64_t>(l) * c + j];
    });
}

// ---------------------------------------------------------------------------
// Time-axis convolution support (kernels never span the qubit axis)
// ---------------------------------------------------------------------------

/// im2col over the time axis of a (q, T, C) tensor.
/// Output is (q * T_out, f * C); matmul with a (f*C, C_out) weight gives the conv.
inline Val im2col_time(Tape& t, Val a, int f, int stride, int pad) {
    const Tensor& x = t.val(a);
    if (x.rank() != 3) throw std::invalid_argument("im2col_time: rank-3 expected");
    int64_t q = x.dim(0), T = x.dim(1), c = x.dim(2);
    int64_t t_out = (T + 2 * pad - f) / stride + 1;
    Tensor out({q * t_out, static_cast<int64_t>(f) * c});
    for (int64_t qi = 0; qi < q; ++qi)
        for (int64_t to = 0; to < t_out; ++to) {
            double* row = out.ptr() + (qi * t_out + to) * f * c;
            for (int k = 0; k < f; ++k) {
                int64_t ti = to * stride - pad + k;
                if (ti >= 0 && ti < T) {
                    const double* src = x.ptr() + (qi * T + ti) * c;
                    std::copy(src, src + c, row + k * c);
                } else {
                    std::fill(row + k * c, row + (k + 1) * c, 0.0);
                }
            }
        }
    return t.add_node(std::move(out), t.rg(a), [a, f, stride, pad, q, T, c, t_out](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        Tensor& da = tp.grad(a);
        for (int64_t qi = 0; qi < q; ++qi)
            for (int64_t to = 0; to < t_out; ++to) {
                const double* row = g.ptr() + (qi * t_out + to) * f * c;
                for (int k = 0; k < f; ++k) {
                    int64_t ti = to * stride - pad + k;
                    if (ti < 0 || ti >= T) continue;
                    double* dst = da.ptr() + (qi * T + ti) * c;
                    for (int64_t j = 0; j < c; ++j) dst[j] += row[k * c + j];
                }
            }
    });
}

/// Nearest-neighbour 2x upsampling along the time axis: (q, T, C) -> (q, 2T, C).
inline Val upsample_time2(Tape& t, Val a) {
    const Tensor& x = t.val(a);
    if (x.rank() != 3) throw std::invalid_argument("upsample_time2: rank-3 expected");
    int64_t q = x.dim(0), T = x.dim(1), c = x.dim(2);
    Tensor out({q, 2 * T, c});
    for (int64_t qi = 0; qi < q; ++qi)
        for (int64_t ti = 0; ti < T; ++ti) {
            const double* src = x.ptr() + (qi * T + ti) * c;
            std::copy(src, src + c, out.ptr() + (qi * 2 * T + 2 * ti) * c);
            std::copy(src, src + c, out.ptr() + (qi * 2 * T + 2 * ti + 1) * c);
        }
    return t.add_node(std::move(out), t.rg(a), [a, q, T, c](Tape& tp, Val self) {
        const Tensor& g = tp.nodes[static_cast<size_t>(self)].grad;
        Tensor& da = tp.grad(a);
        for (int64_t qi = 0; qi < q; ++qi)
            for (int64_t ti = 0; ti < T; ++ti)
                for (int64_t j = 0; j < c; ++j)
                    da[(qi * T + ti) * c + j] += g[(qi * 2 * T + 2 * ti) * c + j] +
                                                 g[(qi * 2 * T + 2 * ti + 1) * c + j];
    });
}

// ---------------------------------------------------------------------------
// Regularization / reductions
// ---------------------------------------------------------------------------

/// Inverted dropout; identity when train is false.
inline Val dropout(Tape& t, Val a, double rate, Rng& rng, bool train) {
    if (!train || rate <= 0.0) return a;
    const Tensor& x = t.val(a);
    Tensor mask(x.shape());
    double keep = 1.0 - rate;
    for (int64_t i = 0; i < x.numel(); ++i) mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor out = x.clone();
    out.vec().array() *= mask.vec().array();
    return t.add_node(std::move(out), t.rg(a), [a, mask](Tape& tp, Val self) {
        tp.grad(a).vec().array() +=
            tp.nodes[static_cast<size_t>(self)].grad.vec().array() * mask.vec().array();
    });
}

inline Val sum_all(Tape& t, Val a) {
    Tensor out({1});
    out[0] = ordered_sum(t.val(a).ptr(), t.val(a).numel());
    return t.add_node(std::move(out), t.rg(a), [a](Tape& tp, Val self) {
        tp.grad(a).vec().array() += tp.nodes[static_cast<size_t>(self)].grad[0];
    });
}

/// Scalar head used by gradient checks: sum(x .* w) with fixed weights w.
inline Val dot_const(Tape& t, Val a, const Tensor& w) {
    if (t.val(a).numel() != w.numel()) throw std::invalid_argument("dot_const: size mismatch");
    Tensor out({1});
    double s = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) s += t.val(a)[i] * w[i];
    out[0] = s;
    return t.add_node(std::move(out), t.rg(a), [a, w](Tape& tp, Val self) {
        tp.grad(a).vec() += tp.nodes[static_cast<size_t>(self)].grad[0] * w.vec();
    });
}

/// Mean squared error against a fixed target (mean over all elements).
inline Val mse_loss(Tape& t, Val a, const Tensor& target) {
    const Tensor& x = t.val(a);
    if (x.numel() != target.numel()) throw std::invalid_argument("mse_loss: size mismatch");
    double n = static_cast<double>(x.numel());
    Tensor out({1});
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double d = x[i] - target[i];
        s += d * d;
    }
    out[0] = s / n;
    return t.add_node(std::move(out), t.rg(a), [a, target, n](Tape& tp, Val self) {
        double g = tp.nodes[static_cast<size_t>(self)].grad[0];
        tp.grad(a).vec() += (2.0 * g / n) * (tp.val(a).vec() - target.vec());
    });
}

}  // namespace genqc::ad
