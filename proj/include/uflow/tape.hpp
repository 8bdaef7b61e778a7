#pragma once

// Reverse-mode autodiff on a linear tape. Ops are coarse (matmul, norm,
// attention, ...) with hand-written backward passes; every op used by the
// model is covered by finite-difference checks in the test suite.

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>

#include "uflow/tensor.hpp"

namespace uflow {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;  // first moment
    Tensor v;  // second moment

    Parameter() = default;
    Parameter(std::string n, Tensor val) : name(std::move(n)), value(std::move(val)) {
        grad = Tensor::zeros(value.shape);
        m = Tensor::zeros(value.shape);
        v = Tensor::zeros(value.shape);
    }
    void zero_grad() { grad.zero(); }
};

struct Value {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
public:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void(Tape&, int)> back;  // pull this node's grad into parents
        Parameter* param = nullptr;
        bool needs_grad = false;
    };

    const Tensor& val(Value v) const { return nodes_[v.idx].val; }
    Tensor& grad(Value v) { return nodes_[v.idx].grad; }

    Value leaf(Parameter& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return {it->second};
        int idx = push(p.value, nullptr, true);
        nodes_[idx].param = &p;
        param_nodes_[&p] = idx;
        return {idx};
    }

    Value constant(Tensor t) { return {push(std::move(t), nullptr, false)}; }

    // ---- elementwise / linear algebra ----

    Value add(Value a, Value b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
        Tensor out = ta;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(a, [&](Tensor& ga) {
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            });
            t.accum(b, [&](Tensor& gb) {
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
            });
        });
    }

    Value mul(Value a, Value b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
        Tensor out = ta;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& ta = t.val(a);
            const Tensor& tb = t.val(b);
            t.accum(a, [&](Tensor& ga) {
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * tb.data[i];
            });
            t.accum(b, [&](Tensor& gb) {
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * ta.data[i];
            });
        });
    }

    Value scale(Value a, float c) {
        Tensor out = val(a);
        for (auto& v : out.data) v *= c;
        return make(std::move(out), {a}, [a, c](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(a, [&](Tensor& ga) {
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
            });
        });
    }

    Value silu(Value a) {
        Tensor out = val(a);
        for (auto& v : out.data) v = v / (1.0f + std::exp(-v));
        return make(std::move(out), {a}, [a](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.val(a);
            t.accum(a, [&](Tensor& ga) {
                for (size_t i = 0; i < g.data.size(); ++i) {
                    float s = 1.0f / (1.0f + std::exp(-x.data[i]));
                    ga.data[i] += g.data[i] * (s + x.data[i] * s * (1.0f - s));
                }
            });
        });
    }

    Value matmul(Value a, Value b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
            throw std::invalid_argument("matmul: incompatible shapes");
        int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        Tensor out({m, n});
        gemm_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
        return make(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(a, [&](Tensor& ga) {
                gemm_nt(g.data.data(), t.val(b).data.data(), ga.data.data(), m, n, k);
            });
            t.accum(b, [&](Tensor& gb) {
                gemm_tn(t.val(a).data.data(), g.data.data(), gb.data.data(), k, m, n);
            });
        });
    }

    Value sum(Value a) {
        double acc = 0.0;
        for (float v : val(a).data) acc += v;
        return make(Tensor::scalar(static_cast<float>(acc)), {a}, [a](Tape& t, int self) {
            float g = t.nodes_[self].grad.data[0];
            t.accum(a, [&](Tensor& ga) {
                for (auto& v : ga.data) v += g;
            });
        });
    }

    Value mean(Value a) {
        long long n = val(a).numel();
        double acc = 0.0;
        for (float v : val(a).data) acc += v;
        return make(Tensor::scalar(static_cast<float>(acc / n)), {a}, [a, n](Tape& t, int self) {
            float g = t.nodes_[self].grad.data[0] / static_cast<float>(n);
            t.accum(a, [&](Tensor& ga) {
                for (auto& v : ga.data) v += g;
            });
        });
    }

    // ---- row-wise normalization / softmax ----

    // RMS norm per row with a learned gain vector.
    Value rmsnorm(Value x, Value gain, float eps = 1e-5f) {
        const Tensor& tx = val(x);
        int r = tx.rows(), c = tx.cols();
        if (val(gain).numel() != c) throw std::invalid_argument("rmsnorm: gain size mismatch");
        Tensor out(tx.shape);
        std::vector<float> inv_rms(r);
        for (int i = 0; i < r; ++i) {
            const float* xi = tx.data.data() + static_cast<size_t>(i) * c;
            double ss = 0.0;
            for (int j = 0; j < c; ++j) ss += static_cast<double>(xi[j]) * xi[j];
            inv_rms[i] = 1.0f / std::sqrt(static_cast<float>(ss / c) + eps);
        }
        const float* gn = val(gain).data.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out.at(i, j) = tx.at(i, j) * inv_rms[i] * gn[j];
        return make(std::move(out), {x, gain},
                    [x, gain, r, c, inv_rms = std::move(inv_rms)](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& tx = t.val(x);
            const float* gn = t.val(gain).data.data();
            t.accum(x, [&](Tensor& gx) {
                for (int i = 0; i < r; ++i) {
                    const float* xi = tx.data.data() + static_cast<size_t>(i) * c;
                    const float* gi = g.data.data() + static_cast<size_t>(i) * c;
                    float* oi = gx.data.data() + static_cast<size_t>(i) * c;
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += static_cast<double>(gi[j]) * gn[j] * xi[j];
                    float k = static_cast<float>(dot) * inv_rms[i] * inv_rms[i] * inv_rms[i] / c;
                    for (int j = 0; j < c; ++j) oi[j] += gi[j] * gn[j] * inv_rms[i] - k * xi[j];
                }
            });
            t.accum(gain, [&](Tensor& gg) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gg.data[j] += g.at(i, j) * tx.at(i, j) * inv_rms[i];
            });
        });
    }

    Value softmax_rows(Value x) {
        const Tensor& tx = val(x);
        int r = tx.rows(), c = tx.cols();
        Tensor out(tx.shape);
        for (int i = 0; i < r; ++i) {
            const float* xi = tx.data.data() + static_cast<size_t>(i) * c;
            float* oi = out.data.data() + static_cast<size_t>(i) * c;
            softmax_inplace(xi, oi, c);
        }
        return make(std::move(out), {x}, [x, r, c](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& p = t.nodes_[self].val;
            t.accum(x, [&](Tensor& gx) {
                for (int i = 0; i < r; ++i) {
                    const float* pi = p.data.data() + static_cast<size_t>(i) * c;
                    const float* gi = g.data.data() + static_cast<size_t>(i) * c;
                    float* oi = gx.data.data() + static_cast<size_t>(i) * c;
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += static_cast<double>(gi[j]) * pi[j];
                    for (int j = 0; j < c; ++j) oi[j] += pi[j] * (gi[j] - static_cast<float>(dot));
                }
            });
        });
    }

    // ---- gather / scatter ----

    // Rows of an embedding table; rows where active[i] is false come out zero
    // and receive no gradient.
    Value embed(Value table, const std::vector<int>& ids, const std::vector<uint8_t>& active) {
        const Tensor& tb = val(table);
        int d = tb.cols();
        int n = static_cast<int>(ids.size());
        Tensor out({n, d});
        for (int i = 0; i < n; ++i) {
            if (!active.empty() && !active[i]) continue;
            if (ids[i] < 0 || ids[i] >= tb.rows()) throw std::out_of_range("embed: id out of range");
            std::copy_n(tb.data.data() + static_cast<size_t>(ids[i]) * d, d,
                        out.data.data() + static_cast<size_t>(i) * d);
        }
        return make(std::move(out), {table}, [table, ids, active, n, d](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(table, [&](Tensor& gt) {
                for (int i = 0; i < n; ++i) {
                    if (!active.empty() && !active[i]) continue;
                    float* dst = gt.data.data() + static_cast<size_t>(ids[i]) * d;
                    const float* src = g.data.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) dst[j] += src[j];
                }
            });
        });
    }

    Value rows_select(Value x, const std::vector<int>& idx) {
        const Tensor& tx = val(x);
        int d = tx.cols();
        int n = static_cast<int>(idx.size());
        Tensor out({n, d});
        for (int i = 0; i < n; ++i)
            std::copy_n(tx.data.data() + static_cast<size_t>(idx[i]) * d, d,
                        out.data.data() + static_cast<size_t>(i) * d);
        return make(std::move(out), {x}, [x, idx, n, d](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(x, [&](Tensor& gx) {
                for (int i = 0; i < n; ++i) {
                    float* dst = gx.data.data() + static_cast<size_t>(idx[i]) * d;
                    const float* src = g.data.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) dst[j] += src[j];
                }
            });
        });
    }

    // Scatter rows of src into a zero (out_rows x d) tensor. Indices must be unique.
    Value rows_scatter(Value src, const std::vector<int>& idx, int out_rows) {
        const Tensor& ts = val(src);
        int d = ts.cols();
        int n = static_cast<int>(idx.size());
        Tensor out({out_rows, d});
        for (int i = 0; i < n; ++i)
            std::copy_n(ts.data.data() + static_cast<size_t>(i) * d, d,
                        out.data.data() + static_cast<size_t>(idx[i]) * d);
        return make(std::move(out), {src}, [src, idx, n, d](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(src, [&](Tensor& gs) {
                for (int i = 0; i < n; ++i) {
                    const float* from = g.data.data() + static_cast<size_t>(idx[i]) * d;
                    float* to = gs.data.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) to[j] += from[j];
                }
            });
        });
    }

    // Multiply row i of x by scalar s[i]; s has shape (n) or (n,1).
    Value scale_rows(Value x, Value s) {
        const Tensor& tx = val(x);
        const Tensor& ts = val(s);
        int n = tx.rows(), d = tx.cols();
        if (ts.numel() != n) throw std::invalid_argument("scale_rows: scale length mismatch");
        Tensor out(tx.shape);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out.at(i, j) = tx.at(i, j) * ts.data[i];
        return make(std::move(out), {x, s}, [x, s, n, d](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& tx = t.val(x);
            const Tensor& ts = t.val(s);
            t.accum(x, [&](Tensor& gx) {
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gx.at(i, j) += g.at(i, j) * ts.data[i];
            });
            t.accum(s, [&](Tensor& gs) {
                for (int i = 0; i < n; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j) acc += static_cast<double>(g.at(i, j)) * tx.at(i, j);
                    gs.data[i] += static_cast<float>(acc);
                }
            });
        });
    }

    // Pick entries (i, sel[i][j]) of a row-stochastic matrix P and renormalize
    // each row over its selected set. Output is (n, k).
    Value select_renorm(Value p, const std::vector<std::vector<int>>& sel) {
        const Tensor& tp = val(p);
        int n = tp.rows();
        int k = sel.empty() ? 0 : static_cast<int>(sel[0].size());
        Tensor out({n, k});
        for (int i = 0; i < n; ++i) {
            double denom = 0.0;
            for (int j = 0; j < k; ++j) denom += tp.at(i, sel[i][j]);
            if (denom <= 0.0) throw std::runtime_error("select_renorm: zero mass over selected set");
            for (int j = 0; j < k; ++j)
                out.at(i, j) = static_cast<float>(tp.at(i, sel[i][j]) / denom);
        }
        return make(std::move(out), {p}, [p, sel, n, k](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& tp = t.val(p);
            t.accum(p, [&](Tensor& gp) {
                for (int i = 0; i < n; ++i) {
                    double denom = 0.0;
                    for (int j = 0; j < k; ++j) denom += tp.at(i, sel[i][j]);
                    double dot = 0.0;  // sum_j g_ij * p_sel / denom^2
                    for (int j = 0; j < k; ++j)
                        dot += static_cast<double>(g.at(i, j)) * tp.at(i, sel[i][j]);
                    dot /= denom * denom;
                    for (int j = 0; j < k; ++j)
                        gp.at(i, sel[i][j]) +=
                            static_cast<float>(g.at(i, j) / denom - dot);
                }
            });
        });
    }

    // Gather scalar entries (row, col) into an (n, 1) tensor.
    Value gather_elems(Value x, const std::vector<std::pair<int, int>>& ij) {
        const Tensor& tx = val(x);
        int n = static_cast<int>(ij.size());
        Tensor out({n, 1});
        for (int i = 0; i < n; ++i) out.data[i] = tx.at(ij[i].first, ij[i].second);
        return make(std::move(out), {x}, [x, ij, n](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(x, [&](Tensor& gx) {
                for (int i = 0; i < n; ++i) gx.at(ij[i].first, ij[i].second) += g.data[i];
            });
        });
    }

    Value mean_cols(Value x) {
        const Tensor& tx = val(x);
        int r = tx.rows(), c = tx.cols();
        Tensor out({c});
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int i = 0; i < r; ++i) acc += tx.at(i, j);
            out.data[j] = static_cast<float>(acc / r);
        }
        return make(std::move(out), {x}, [x, r, c](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(x, [&](Tensor& gx) {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gx.at(i, j) += g.data[j] / static_cast<float>(r);
            });
        });
    }

    Value dot_const(Value x, const std::vector<float>& w) {
        const Tensor& tx = val(x);
        if (tx.numel() != static_cast<long long>(w.size()))
            throw std::invalid_argument("dot_const: length mismatch");
        double acc = 0.0;
        for (size_t i = 0; i < w.size(); ++i) acc += static_cast<double>(tx.data[i]) * w[i];
        return make(Tensor::scalar(static_cast<float>(acc)), {x}, [x, w](Tape& t, int self) {
            float g = t.nodes_[self].grad.data[0];
            t.accum(x, [&](Tensor& gx) {
                for (size_t i = 0; i < w.size(); ++i) gx.data[i] += g * w[i];
            });
        });
    }

    // ---- positions / attention ----

    // Rotary rotation applied head-wise; x is (L, n_heads*head_dim).
    Value rope(Value x, const std::vector<int>& positions, int head_dim, float base = 10000.0f) {
        const Tensor& tx = val(x);
        int L = tx.rows(), total = tx.cols();
        if (head_dim % 2 != 0) throw std::invalid_argument("rope: head_dim must be even");
        int n_heads = total / head_dim;
        Tensor out(tx.shape);
        rope_apply(tx, out, positions, n_heads, head_dim, base, +1.0f);
        return make(std::move(out), {x},
                    [x, positions, head_dim, base, n_heads](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accum(x, [&](Tensor& gx) {
                Tensor tmp(g.shape);
                rope_apply(g, tmp, positions, n_heads, head_dim, base, -1.0f);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += tmp.data[i];
            });
        });
    }

    // Masked multi-head attention with grouped key/value heads.
    // q: (L, n_q*dh), k/v: (L, n_kv*dh). allowed(i, j) gates key j for query i.
    Value attention(Value q, Value k, Value v, const std::function<bool(int, int)>& allowed,
                    int n_q_heads, int n_kv_heads) {
        const Tensor& tq = val(q);
        const Tensor& tk = val(k);
        const Tensor& tv = val(v);
        int L = tq.rows();
        if (n_q_heads % n_kv_heads != 0)
            throw std::invalid_argument("attention: query heads not divisible by kv heads");
        int dh = tq.cols() / n_q_heads;
        if (tk.cols() != n_kv_heads * dh || tv.cols() != n_kv_heads * dh)
            throw std::invalid_argument("attention: kv width mismatch");
        int group = n_q_heads / n_kv_heads;
        float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

        // Materialize the mask once per call.
        std::vector<uint8_t> maskbits(static_cast<size_t>(L) * L);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) maskbits[static_cast<size_t>(i) * L + j] = allowed(i, j) ? 1 : 0;

        // probs: per head (L x L), kept for backward.
        auto probs = std::make_shared<std::vector<Tensor>>();
        probs->reserve(n_q_heads);
        Tensor out({L, n_q_heads * dh});
        std::vector<float> scores(L);
        for (int h = 0; h < n_q_heads; ++h) {
            int kvh = h / group;
            Tensor p({L, L});
            for (int i = 0; i < L; ++i) {
                const float* qi = tq.data.data() + static_cast<size_t>(i) * tq.cols() + h * dh;
                for (int j = 0; j < L; ++j) {
                    if (!maskbits[static_cast<size_t>(i) * L + j]) {
                        scores[j] = -std::numeric_limits<float>::infinity();
                        continue;
                    }
                    const float* kj = tk.data.data() + static_cast<size_t>(j) * tk.cols() + kvh * dh;
                    scores[j] = dotf(qi, kj, dh) * inv_sqrt;
                }
                softmax_inplace(scores.data(), p.data.data() + static_cast<size_t>(i) * L, L);
            }
            for (int i = 0; i < L; ++i) {
                float* oi = out.data.data() + static_cast<size_t>(i) * out.cols() + h * dh;
                const float* pi = p.data.data() + static_cast<size_t>(i) * L;
                for (int j = 0; j < L; ++j) {
                    float pj = pi[j];
                    if (pj == 0.0f) continue;
                    const float* vj = tv.data.data() + static_cast<size_t>(j) * tv.cols() + kvh * dh;
                    for (int d = 0; d < dh; ++d) oi[d] += pj * vj[d];
                }
            }
            probs->push_back(std::move(p));
        }
        return make(std::move(out), {q, k, v},
                    [q, k, v, probs, L, dh, n_q_heads, group, inv_sqrt](Tape& t, int self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& tq = t.val(q);
            const Tensor& tk = t.val(k);
            const Tensor& tv = t.val(v);
            Tensor gq(tq.shape), gk(tk.shape), gv(tv.shape);
            for (int h = 0; h < n_q_heads; ++h) {
                int kvh = h / group;
                const Tensor& p = (*probs)[h];
                for (int i = 0; i < L; ++i) {
                    const float* gi = g.data.data() + static_cast<size_t>(i) * g.cols() + h * dh;
                    const float* pi = p.data.data() + static_cast<size_t>(i) * L;
                    // dscore_ij = p_ij * (g_i . v_j - sum_j' p_ij' (g_i . v_j'))
                    double mixdot = 0.0;
                    std::vector<float> gv_dots(L, 0.0f);
                    for (int j = 0; j < L; ++j) {
                        if (pi[j] == 0.0f) continue;
                        const float* vj = tv.data.data() + static_cast<size_t>(j) * tv.cols() + kvh * dh;
                        gv_dots[j] = dotf(gi, vj, dh);
                        mixdot += static_cast<double>(pi[j]) * gv_dots[j];
                    }
                    const float* qi = tq.data.data() + static_cast<size_t>(i) * tq.cols() + h * dh;
                    float* gqi = gq.data.data() + static_cast<size_t>(i) * gq.cols() + h * dh;
                    for (int j = 0; j < L; ++j) {
                        float pj = pi[j];
                        if (pj == 0.0f) continue;
                        float* gvj = gv.data.data() + static_cast<size_t>(j) * gv.cols() + kvh * dh;
                        for (int d = 0; d < dh; ++d) gvj[d] += pj * gi[d];
                        float ds = pj * (gv_dots[j] - static_cast<float>(mixdot)) * inv_sqrt;
                        if (ds == 0.0f) continue;
                        const float* kj = tk.data.data() + static_cast<size_t>(j) * tk.cols() + kvh * dh;
                        float* gkj = gk.data.data() + static_cast<size_t>(j) * gk.cols() + kvh * dh;
                        for (int d = 0; d < dh; ++d) {
                            gqi[d] += ds * kj[d];
                            gkj[d] += ds * qi[d];
                        }
                    }
                }
            }
            t.accum(q, [&](Tensor& dst) {
                for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += gq.data[i];
            });
            t.accum(k, [&](Tensor& dst) {
                for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += gk.data[i];
            });
            t.accum(v, [&](Tensor& dst) {
                for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += gv.data[i];
            });
        });
    }

    // ---- losses ----

    // Mean negative log-likelihood over rows; logits (n, V), one target per row.
    Value cross_entropy(Value logits, const std::vector<int>& targets) {
        const Tensor& tl = val(logits);
        int n = tl.rows(), vsz = tl.cols();
        if (static_cast<int>(targets.size()) != n)
            throw std::invalid_argument("cross_entropy: target count mismatch");
        if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
        auto probs = std::make_shared<Tensor>(tl.shape);
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            const float* li = tl.data.data() + static_cast<size_t>(i) * vsz;
            float* pi = probs->data.data() + static_cast<size_t>(i) * vsz;
            softmax_inplace(li, pi, vsz);
            loss -= std::log(std::max(pi[targets[i]], 1e-30f));
        }
        loss /= n;
        return make(Tensor::scalar(static_cast<float>(loss)), {logits},
                    [logits, targets, probs, n, vsz](Tape& t, int self) {
            float g = t.nodes_[self].grad.data[0] / static_cast<float>(n);
            t.accum(logits, [&](Tensor& gl) {
                for (int i = 0; i < n; ++i) {
                    const float* pi = probs->data.data() + static_cast<size_t>(i) * vsz;
                    float* gi = gl.data.data() + static_cast<size_t>(i) * vsz;
                    for (int j = 0; j < vsz; ++j) gi[j] += g * pi[j];
                    gi[targets[i]] -= g;
                }
            });
        });
    }

    // Mean squared error against a constant target, over all elements.
    Value mse(Value pred, const Tensor& target) {
        const Tensor& tp = val(pred);
        if (!tp.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
        long long n = tp.numel();
        if (n == 0) throw std::invalid_argument("mse: empty");
        double acc = 0.0;
        for (long long i = 0; i < n; ++i) {
            double d = static_cast<double>(tp.data[i]) - target.data[i];
            acc += d * d;
        }
        auto tgt = std::make_shared<Tensor>(target);
        return make(Tensor::scalar(static_cast<float>(acc / n)), {pred},
                    [pred, tgt, n](Tape& t, int self) {
            float g = t.nodes_[self].grad.data[0] * 2.0f / static_cast<float>(n);
            const Tensor& tp = t.val(pred);
            t.accum(pred, [&](Tensor& gp) {
                for (long long i = 0; i < n; ++i) gp.data[i] += g * (tp.data[i] - tgt->data[i]);
            });
        });
    }

    // ---- backward driver ----

    void backward(Value loss) {
        const Tensor& lv = val(loss);
        if (lv.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
        if (!lv.all_finite()) throw std::runtime_error("backward: non-finite loss");
        for (auto& n : nodes_)
            if (!n.grad.shape.empty()) n.grad.zero();
        ensure_grad(loss.idx);
        nodes_[loss.idx].grad.data[0] = 1.0f;
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.back || n.grad.shape.empty()) continue;
            n.back(*this, i);
        }
        for (auto& [p, idx] : param_nodes_) {
            Node& n = nodes_[idx];
            if (n.grad.shape.empty()) continue;
            if (!n.grad.all_finite()) throw std::runtime_error("backward: non-finite gradient");
            for (size_t i = 0; i < p->grad.data.size(); ++i) p->grad.data[i] += n.grad.data[i];
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    friend struct Node;
    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, int> param_nodes_;

    static void softmax_inplace(const float* in, float* out, int n) {
        float mx = -std::numeric_limits<float>::infinity();
        for (int i = 0; i < n; ++i) mx = std::max(mx, in[i]);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            out[i] = std::isinf(in[i]) && in[i] < 0 ? 0.0f : std::exp(in[i] - mx);
            sum += out[i];
        }
        float inv = static_cast<float>(1.0 / sum);
        for (int i = 0; i < n; ++i) out[i] *= inv;
    }

    static void rope_apply(const Tensor& in, Tensor& out, const std::vector<int>& positions,
                           int n_heads, int head_dim, float base, float sign) {
        int L = in.rows();
        int half = head_dim / 2;
        for (int i = 0; i < L; ++i) {
            float pos = static_cast<float>(positions[i]);
            for (int h = 0; h < n_heads; ++h) {
                const float* src = in.data.data() + static_cast<size_t>(i) * in.cols() + h * head_dim;
                float* dst = out.data.data() + static_cast<size_t>(i) * out.cols() + h * head_dim;
                for (int d = 0; d < half; ++d) {
                    float theta = pos * std::pow(base, -2.0f * d / head_dim) * sign;
                    float c = std::cos(theta), s = std::sin(theta);
                    float x0 = src[2 * d], x1 = src[2 * d + 1];
                    dst[2 * d] = x0 * c - x1 * s;
                    dst[2 * d + 1] = x0 * s + x1 * c;
                }
            }
        }
    }

    int push(Tensor t, std::function<void(Tape&, int)> back, bool needs_grad) {
        Node n;
        n.val = std::move(t);
        n.back = std::move(back);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Value make(Tensor out, std::initializer_list<Value> parents,
               std::function<void(Tape&, int)> back) {
        bool ng = false;
        for (Value p : parents) ng = ng || nodes_[p.idx].needs_grad;
        int idx = push(std::move(out), ng ? std::move(back) : nullptr, ng);
        return {idx};
    }

    // Run f on the parent's grad buffer, iff the parent participates in autodiff.
    template <class F>
    void accum(Value parent, F&& f) {
        Node& n = nodes_[parent.idx];
        if (!n.needs_grad) return;
        ensure_grad(parent.idx);
        f(n.grad);
    }

    void ensure_grad(int idx) {
        Node& n = nodes_[idx];
        if (n.grad.shape.empty()) n.grad = Tensor::zeros(n.val.shape);
    }
};

}  // namespace uflow
