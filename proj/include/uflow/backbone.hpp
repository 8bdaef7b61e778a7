#pragma once

// Transformer trunk with pluggable capacity separation: shared FFN,
// modality-specific FFN, modality-specific attention projections, and
// fine-grained MoE with shared-expert variants; plus parameter accounting.

#include "uflow/mask.hpp"
#include "uflow/optim.hpp"

namespace uflow {

enum class FfnMode { Shared, PerModality, MoE };
enum class AttnMode { Shared, PerModality };
enum class SharedExpertMode { None, Global, PerModality };

struct MoEConfig {
    int experts = 8;        // E, including any reserved shared experts
    int d_expert = 32;
    int top_k = 2;          // active experts per token, shared included
    SharedExpertMode shared_mode = SharedExpertMode::None;
    float balance_coeff = 0.01f;

    int reserved() const {
        switch (shared_mode) {
            case SharedExpertMode::None: return 0;
            case SharedExpertMode::Global: return 1;
            case SharedExpertMode::PerModality: return 2;
        }
        return 0;
    }
    // reserved experts occupy the top ids; the router picks from the rest
    int routed_pool() const { return experts - reserved(); }
    int routed_k() const { return top_k - (reserved() > 0 ? 1 : 0); }
    int text_shared_id() const { return experts - reserved(); }
    int vision_shared_id() const { return experts - 1; }

    void validate() const {
        if (experts < 1 || d_expert < 1) throw std::invalid_argument("moe: dims must be positive");
        if (top_k < 1 || top_k > experts) throw std::invalid_argument("moe: top_k out of range");
        if (routed_k() < 1) throw std::invalid_argument("moe: no routed slots left after shared experts");
        if (routed_k() > routed_pool()) throw std::invalid_argument("moe: routed slots exceed pool");
    }
};

struct BackboneConfig {
    int d_model = 64;
    int n_layers = 2;
    AttentionConfig attn;
    FfnMode ffn_mode = FfnMode::Shared;
    float ffn_multiplier = 1.5f;
    AttnMode attn_mode = AttnMode::Shared;
    int vocab = Vocab::kSize;
    int d_latent = 48;
    int tokens_per_frame = 16;
    MoEConfig moe;  // used iff ffn_mode == MoE

    // Gated-FFN hidden width: multiplier x (8/3) x d_model, so that the
    // parameter count of the 3-matrix FFN matches a multiplier x 4 d_model
    // two-matrix FFN.
    int ffn_hidden() const {
        return std::max(1, static_cast<int>(std::lround(ffn_multiplier * 8.0 / 3.0 * d_model)));
    }

    void validate() const {
        if (d_model < 1 || n_layers < 0 || vocab < 1 || d_latent < 1 || tokens_per_frame < 1)
            throw std::invalid_argument("backbone: dims must be positive");
        attn.validate();
        if (ffn_mode == FfnMode::MoE) moe.validate();
    }
};

inline double granularity(int d_model, int d_expert) {
    if (d_expert <= 0) throw std::invalid_argument("granularity: d_expert must be positive");
    return 4.0 * d_model / d_expert;
}

// Switch-style load balance: E * sum_i f_i * P_i over the routed pool.
inline double load_balance_loss(const std::vector<double>& f, const std::vector<double>& p) {
    if (f.size() != p.size()) throw std::invalid_argument("load_balance: length mismatch");
    double acc = 0;
    for (size_t i = 0; i < f.size(); ++i) acc += f[i] * p[i];
    return acc * static_cast<double>(f.size());
}

// ---------------------------------------------------------------- accounting

struct ParamCount {
    double total = 0;
    double active = 0;  // values touched per token
};

inline constexpr int kTimeFeatures = 16;

inline ParamCount param_count(const BackboneConfig& cfg) {
    cfg.validate();
    double d = cfg.d_model;
    double embeds = cfg.vocab * d          // token embedding
                    + cfg.d_latent * d     // visual input projection
                    + kTimeFeatures * d    // timestep embedding
                    + d * cfg.vocab        // lm head (untied)
                    + d * cfg.d_latent;    // flow head
    double attn_branch = d * cfg.attn.q_dim() + 2.0 * d * cfg.attn.kv_dim() + cfg.attn.q_dim() * d;
    int attn_copies = cfg.attn_mode == AttnMode::PerModality ? 2 : 1;
    double norms = cfg.n_layers * 2.0 * d + d;

    double ffn_total = 0, ffn_active = 0;
    switch (cfg.ffn_mode) {
        case FfnMode::Shared:
            ffn_total = ffn_active = 3.0 * d * cfg.ffn_hidden();
            break;
        case FfnMode::PerModality:
            ffn_active = 3.0 * d * cfg.ffn_hidden();
            ffn_total = 2.0 * ffn_active;
            break;
        case FfnMode::MoE: {
            double expert = 3.0 * d * cfg.moe.d_expert;
            double router = d * cfg.moe.experts;
            ffn_total = router + cfg.moe.experts * expert;
            ffn_active = router + cfg.moe.top_k * expert;
            break;
        }
    }
    ParamCount out;
    out.total = embeds + norms + cfg.n_layers * (attn_copies * attn_branch + ffn_total);
    out.active = embeds + norms + cfg.n_layers * (attn_branch + ffn_active);
    return out;
}

// ---------------------------------------------------------------- routing

struct RoutingRecord {
    int layer = 0;
    int position = 0;
    char modality = 't';  // 't' text, 'v' visual
    TaskTag task = TaskTag::Lm;
    int timestep_bin = -1;  // floor(10 t) for visual tokens in a flow batch
    std::vector<int> experts;
    std::vector<float> gates;
};

inline const char* task_name(TaskTag t) {
    switch (t) {
        case TaskTag::Lm: return "lm";
        case TaskTag::Gen: return "gen";
        case TaskTag::Und: return "und";
    }
    return "?";
}

inline TaskTag parse_task(const std::string& s) {
    if (s == "lm") return TaskTag::Lm;
    if (s == "gen") return TaskTag::Gen;
    if (s == "und") return TaskTag::Und;
    throw std::invalid_argument("routing csv: bad task tag " + s);
}

inline void write_routing_csv(std::ostream& os, const std::vector<RoutingRecord>& records) {
    if (records.empty()) return;
    size_t k = records[0].experts.size();
    os << "layer,position,modality,task,timestep_bin";
    for (size_t i = 0; i < k; ++i) os << ",expert" << i;
    for (size_t i = 0; i < k; ++i) os << ",gate" << i;
    os << "\n";
    for (const auto& r : records) {
        os << r.layer << "," << r.position << "," << r.modality << "," << task_name(r.task) << ","
           << r.timestep_bin;
        for (int e : r.experts) os << "," << e;
        for (float g : r.gates) os << "," << g;
        os << "\n";
    }
}

inline std::vector<RoutingRecord> read_routing_csv(std::istream& is) {
    std::vector<RoutingRecord> out;
    std::string line;
    if (!std::getline(is, line)) return out;
    size_t cols = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (cols < 7 || (cols - 5) % 2 != 0) throw std::runtime_error("routing csv: bad header");
    size_t k = (cols - 5) / 2;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        auto next = [&] {
            if (!std::getline(ss, field, ',')) throw std::runtime_error("routing csv: short row");
            return field;
        };
        RoutingRecord r;
        r.layer = std::stoi(next());
        r.position = std::stoi(next());
        r.modality = next()[0];
        r.task = parse_task(next());
        r.timestep_bin = std::stoi(next());
        for (size_t i = 0; i < k; ++i) r.experts.push_back(std::stoi(next()));
        for (size_t i = 0; i < k; ++i) r.gates.push_back(std::stof(next()));
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- model input

struct ModelInput {
    std::vector<int> ids;         // vocab ids; 0 placeholder at visual rows
    Tensor latents;               // (L x d_latent), zero rows at text positions
    std::vector<uint8_t> visual;
    std::vector<float> t;         // per-row timestep; 1 = clean context
    std::vector<int> positions;
    MaskSpec mask;
    TaskTag task = TaskTag::Lm;

    int length() const { return static_cast<int>(ids.size()); }

    static ModelInput from_sequence(const MixedSequence& seq, int d_latent) {
        ModelInput in;
        int L = seq.length();
        in.ids.resize(L, 0);
        in.latents = Tensor::zeros({L, d_latent});
        in.visual = seq.vision_mask;
        in.t.assign(L, 0.0f);
        in.positions.resize(L);
        for (int i = 0; i < L; ++i) {
            in.positions[i] = i;
            const TokenItem& it = seq.items[i];
            if (it.is_visual()) {
                if (static_cast<int>(it.latent.size()) != d_latent)
                    throw std::invalid_argument("model input: latent width mismatch");
                std::copy(it.latent.begin(), it.latent.end(),
                          in.latents.data.begin() + static_cast<size_t>(i) * d_latent);
                in.t[i] = 1.0f;
            } else {
                in.ids[i] = it.id;
            }
        }
        in.mask = MaskSpec::from_sequence(seq);
        return in;
    }
};

// Sinusoidal timestep features, nonzero only at visual rows.
inline Tensor timestep_features(const ModelInput& in) {
    int L = in.length();
    Tensor out = Tensor::zeros({L, kTimeFeatures});
    for (int i = 0; i < L; ++i) {
        if (!in.visual[i]) continue;
        for (int f = 0; f < kTimeFeatures / 2; ++f) {
            float w = std::pow(200.0f, static_cast<float>(f) / (kTimeFeatures / 2 - 1));
            out.at(i, 2 * f) = std::sin(in.t[i] * w);
            out.at(i, 2 * f + 1) = std::cos(in.t[i] * w);
        }
    }
    return out;
}

// ---------------------------------------------------------------- model

struct ForwardOutput {
    Value logits;     // (L x vocab)
    Value flow_pred;  // (L x d_latent); meaningful at visual rows only
    Value aux;        // scalar load-balance loss (zero value when not MoE)
};

class UnifiedModel {
public:
    BackboneConfig cfg;
    ParamStore params;

    UnifiedModel(const BackboneConfig& config, uint64_t seed) : cfg(config) {
        cfg.validate();
        Rng rng(seed ^ 0x6a09e667f3bcc909ull);
        auto w = [&](const std::string& name, int in_dim, int out_dim) {
            params.create(name, Tensor::randn({in_dim, out_dim}, rng,
                                              1.0f / std::sqrt(static_cast<float>(in_dim))));
        };
        int d = cfg.d_model;
        params.create("embed.tok",
                      Tensor::randn({cfg.vocab, d}, rng, 1.0f / std::sqrt(static_cast<float>(d))));
        w("embed.vis", cfg.d_latent, d);
        w("embed.time", kTimeFeatures, d);
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            params.create(p + "norm1.g", Tensor::full({d}, 1.0f));
            params.create(p + "norm2.g", Tensor::full({d}, 1.0f));
            auto attn_set = [&](const std::string& b) {
                w(p + b + "q", d, cfg.attn.q_dim());
                w(p + b + "k", d, cfg.attn.kv_dim());
                w(p + b + "v", d, cfg.attn.kv_dim());
                w(p + b + "o", cfg.attn.q_dim(), d);
            };
            if (cfg.attn_mode == AttnMode::Shared) {
                attn_set("attn.");
            } else {
                attn_set("attn.text.");
                attn_set("attn.vis.");
            }
            switch (cfg.ffn_mode) {
                case FfnMode::Shared:
                    w(p + "ffn.w1", d, cfg.ffn_hidden());
                    w(p + "ffn.w3", d, cfg.ffn_hidden());
                    w(p + "ffn.w2", cfg.ffn_hidden(), d);
                    break;
                case FfnMode::PerModality:
                    for (const char* b : {"ffn.text.", "ffn.vis."}) {
                        w(p + b + "w1", d, cfg.ffn_hidden());
                        w(p + b + "w3", d, cfg.ffn_hidden());
                        w(p + b + "w2", cfg.ffn_hidden(), d);
                    }
                    break;
                case FfnMode::MoE:
                    w(p + "moe.router", d, cfg.moe.experts);
                    for (int e = 0; e < cfg.moe.experts; ++e) {
                        std::string ep = p + "moe.expert" + std::to_string(e) + ".";
                        w(ep + "w1", d, cfg.moe.d_expert);
                        w(ep + "w3", d, cfg.moe.d_expert);
                        w(ep + "w2", cfg.moe.d_expert, d);
                    }
                    break;
            }
        }
        params.create("final_norm.g", Tensor::full({d}, 1.0f));
        // near-zero head init keeps the initial lm loss at ~ln(V) while still
        // letting outputs respond to the trunk
        params.create("head.lm", Tensor::randn({d, cfg.vocab}, rng, 1e-3f));
        params.create("head.flow", Tensor::randn({d, cfg.d_latent}, rng, 1e-3f));
    }

    ForwardOutput forward(Tape& tape, const ModelInput& in,
                          std::vector<RoutingRecord>* recorder = nullptr) {
        tape_ = &tape;
        int L = in.length();
        if (L < 1) throw std::invalid_argument("forward: empty input");
        std::vector<uint8_t> text_active(L);
        for (int i = 0; i < L; ++i) text_active[i] = in.visual[i] ? 0 : 1;

        Value x = tape.embed(leaf("embed.tok"), in.ids, text_active);
        x = tape.add(x, tape.matmul(tape.constant(in.latents), leaf("embed.vis")));
        x = tape.add(x, tape.matmul(tape.constant(timestep_features(in)), leaf("embed.time")));

        std::vector<int> text_rows, vis_rows;
        for (int i = 0; i < L; ++i) (in.visual[i] ? vis_rows : text_rows).push_back(i);
        const MaskSpec& mask = in.mask;
        auto allowed = [&mask](int i, int j) { return mask.allowed(i, j); };

        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            Value xn = tape.rmsnorm(x, leaf(p + "norm1.g"));
            Value q, k, v;
            if (cfg.attn_mode == AttnMode::Shared) {
                q = tape.matmul(xn, leaf(p + "attn.q"));
                k = tape.matmul(xn, leaf(p + "attn.k"));
                v = tape.matmul(xn, leaf(p + "attn.v"));
            } else {
                q = branch_proj(tape, xn, text_rows, vis_rows, p + "attn.text.q", p + "attn.vis.q", L);
                k = branch_proj(tape, xn, text_rows, vis_rows, p + "attn.text.k", p + "attn.vis.k", L);
                v = branch_proj(tape, xn, text_rows, vis_rows, p + "attn.text.v", p + "attn.vis.v", L);
            }
            q = tape.rope(q, in.positions, cfg.attn.head_dim, cfg.attn.rope_base);
            k = tape.rope(k, in.positions, cfg.attn.head_dim, cfg.attn.rope_base);
            Value att = tape.attention(q, k, v, allowed, cfg.attn.n_q_heads, cfg.attn.n_kv_heads);
            Value att_o = cfg.attn_mode == AttnMode::Shared
                              ? tape.matmul(att, leaf(p + "attn.o"))
                              : branch_proj(tape, att, text_rows, vis_rows, p + "attn.text.o",
                                            p + "attn.vis.o", L);
            x = tape.add(x, att_o);

            Value yn = tape.rmsnorm(x, leaf(p + "norm2.g"));
            Value ffn_out;
            switch (cfg.ffn_mode) {
                case FfnMode::Shared:
                    ffn_out = gated_ffn(tape, yn, p + "ffn.");
                    break;
                case FfnMode::PerModality: {
                    std::optional<Value> acc;
                    if (!text_rows.empty())
                        acc = tape.rows_scatter(
                            gated_ffn(tape, tape.rows_select(yn, text_rows), p + "ffn.text."),
                            text_rows, L);
                    if (!vis_rows.empty()) {
                        Value vz = tape.rows_scatter(
                            gated_ffn(tape, tape.rows_select(yn, vis_rows), p + "ffn.vis."),
                            vis_rows, L);
                        acc = acc ? tape.add(*acc, vz) : vz;
                    }
                    ffn_out = *acc;
                    break;
                }
                case FfnMode::MoE: {
                    auto [y, aux] = moe_forward(tape, yn, in, l, recorder);
                    ffn_out = y;
                    aux_acc_ = aux_acc_ ? std::optional<Value>(tape.add(*aux_acc_, aux)) : std::optional<Value>(aux);
                    break;
                }
            }
            x = tape.add(x, ffn_out);
        }
        Value h = tape.rmsnorm(x, leaf("final_norm.g"));
        ForwardOutput out;
        out.logits = tape.matmul(h, leaf("head.lm"));
        out.flow_pred = tape.matmul(h, leaf("head.flow"));
        if (cfg.ffn_mode == FfnMode::MoE && aux_acc_) {
            out.aux = tape.scale(*aux_acc_, 1.0f / std::max(1, cfg.n_layers));
            aux_acc_.reset();
        } else {
            out.aux = tape.constant(Tensor::scalar(0.0f));
        }
        tape_ = nullptr;
        return out;
    }

private:
    std::optional<Value> aux_acc_;
    Tape* tape_ = nullptr;

    Value leaf(const std::string& name) {
        Parameter* p = params.find(name);
        if (!p) throw std::logic_error("missing parameter " + name);
        return tape_->leaf(*p);
    }

    Value gated_ffn(Tape& tape, Value x, const std::string& prefix) {
        Value gate = tape.silu(tape.matmul(x, leaf(prefix + "w1")));
        Value up = tape.matmul(x, leaf(prefix + "w3"));
        return tape.matmul(tape.mul(gate, up), leaf(prefix + "w2"));
    }

    Value branch_proj(Tape& tape, Value x, const std::vector<int>& text_rows,
                      const std::vector<int>& vis_rows, const std::string& wt,
                      const std::string& wv, int L) {
        std::optional<Value> acc;
        if (!text_rows.empty())
            acc = tape.rows_scatter(tape.matmul(tape.rows_select(x, text_rows), leaf(wt)),
                                    text_rows, L);
        if (!vis_rows.empty()) {
            Value vz = tape.rows_scatter(tape.matmul(tape.rows_select(x, vis_rows), leaf(wv)),
                                         vis_rows, L);
            acc = acc ? tape.add(*acc, vz) : vz;
        }
        return *acc;
    }

    std::pair<Value, Value> moe_forward(Tape& tape, Value x, const ModelInput& in, int layer,
                                        std::vector<RoutingRecord>* recorder) {
        const MoEConfig& mc = cfg.moe;
        int L = in.length(), E = mc.experts, k = mc.top_k;
        Value probs = tape.softmax_rows(tape.matmul(x, leaf("layer" + std::to_string(layer) + ".moe.router")));
        const Tensor& P = tape.val(probs);

        // per-row selection: routed top-(k - shared) from the non-reserved pool,
        // plus the applicable shared expert
        int pool = mc.routed_pool(), rk = mc.routed_k();
        std::vector<std::vector<int>> sel(L);
        for (int i = 0; i < L; ++i) {
            std::vector<int> order(pool);
            for (int e = 0; e < pool; ++e) order[e] = e;
            std::partial_sort(order.begin(), order.begin() + rk, order.end(), [&](int a, int b) {
                float pa = P.at(i, a), pb = P.at(i, b);
                return pa != pb ? pa > pb : a < b;
            });
            sel[i].assign(order.begin(), order.begin() + rk);
            if (mc.shared_mode == SharedExpertMode::Global)
                sel[i].push_back(mc.vision_shared_id());
            else if (mc.shared_mode == SharedExpertMode::PerModality)
                sel[i].push_back(in.visual[i] ? mc.vision_shared_id() : mc.text_shared_id());
        }

        Value gates = tape.select_renorm(probs, sel);
        const Tensor& G = tape.val(gates);
        if (recorder)
            for (int i = 0; i < L; ++i) {
                RoutingRecord r;
                r.layer = layer;
                r.position = i;
                r.modality = in.visual[i] ? 'v' : 't';
                r.task = in.task;
                r.timestep_bin = in.visual[i]
                                     ? std::min(9, static_cast<int>(in.t[i] * 10.0f))
                                     : -1;
                r.experts = sel[i];
                for (int j = 0; j < k; ++j) r.gates.push_back(G.at(i, j));
                recorder->push_back(std::move(r));
            }

        // group tokens by expert and accumulate gated outputs
        std::optional<Value> acc;
        for (int e = 0; e < E; ++e) {
            std::vector<int> rows;
            std::vector<std::pair<int, int>> slots;
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < k; ++j)
                    if (sel[i][j] == e) {
                        rows.push_back(i);
                        slots.emplace_back(i, j);
                    }
            if (rows.empty()) continue;
            std::string ep = "layer" + std::to_string(layer) + ".moe.expert" + std::to_string(e) + ".";
            Value h = gated_ffn(tape, tape.rows_select(x, rows), ep);
            Value scaled = tape.scale_rows(h, tape.gather_elems(gates, slots));
            Value placed = tape.rows_scatter(scaled, rows, L);
            acc = acc ? tape.add(*acc, placed) : placed;
        }

        // load balance over the routed pool: f from discrete picks, P from the
        // pool-renormalized router probabilities
        std::vector<float> f(pool, 0.0f);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < rk; ++j) f[sel[i][j]] += 1.0f / (static_cast<float>(L) * rk);
        std::vector<int> pool_ids(pool);
        for (int e = 0; e < pool; ++e) pool_ids[e] = e;
        Value pool_probs = tape.select_renorm(probs, std::vector<std::vector<int>>(L, pool_ids));
        Value aux = tape.scale(tape.dot_const(tape.mean_cols(pool_probs), f),
                               static_cast<float>(pool));
        return {*acc, aux};
    }
};

}  // namespace uflow
