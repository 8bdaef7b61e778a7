#pragma once

// Joint training objective: autoregressive cross-entropy for text, flow
// matching for visual frames, timestep shifting, conditioning dropout, fixed
// lambda weighting, and EMA loss centering.

#include "uflow/backbone.hpp"
#include "uflow/data.hpp"

namespace uflow {

enum class FlowMode { VPred, XPred };

struct LossWeights {
    float lambda_lm = 1.0f;
    float lambda_flow = 3.0f;

    void validate() const {
        if (lambda_lm < 0 || lambda_flow < 0)
            throw std::invalid_argument("loss weights must be nonnegative");
    }
};

// Timestep shift t = u / (s - (s-1) u); s = 1 is the identity, larger s
// biases mass toward the noisy end (t = 0 is pure noise).
inline float shift_timestep(float u, float s) {
    if (s < 1.0f) throw std::invalid_argument("sample_t: shift must be >= 1");
    return u / (s - (s - 1.0f) * u);
}

inline float sample_t(Rng& rng, float s = 3.0f) {
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    return shift_timestep(u01(rng), s);
}

// z_t = (1 - t) eps + t z0
inline Tensor interpolate(const Tensor& z0, const Tensor& eps, float t) {
    if (z0.shape != eps.shape) throw std::invalid_argument("interpolate: shape mismatch");
    Tensor out(z0.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (1.0f - t) * eps.data[i] + t * z0.data[i];
    return out;
}

// Velocity consistent with the interpolation when the x-prediction is exact.
inline Tensor xpred_to_velocity(const Tensor& xhat, const Tensor& z_t, float t) {
    if (xhat.shape != z_t.shape) throw std::invalid_argument("xpred_to_velocity: shape mismatch");
    constexpr float kDelta = 1e-3f;
    float denom = std::max(1.0f - t, kDelta);
    Tensor out(xhat.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (xhat.data[i] - z_t.data[i]) / denom;
    return out;
}

// Plain (non-autodiff) flow loss for evaluation and tests.
inline double flow_loss(const Tensor& pred, const Tensor& z0, const Tensor& eps, FlowMode mode) {
    if (pred.shape != z0.shape || z0.shape != eps.shape)
        throw std::invalid_argument("flow_loss: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        double target = mode == FlowMode::VPred ? static_cast<double>(z0.data[i]) - eps.data[i]
                                                : static_cast<double>(z0.data[i]);
        double d = pred.data[i] - target;
        acc += d * d;
    }
    return acc / static_cast<double>(pred.data.size());
}

inline double joint_loss(double lm, double flow, const LossWeights& w) {
    if (!std::isfinite(lm) || !std::isfinite(flow))
        throw std::invalid_argument("joint_loss: non-finite input");
    w.validate();
    return w.lambda_lm * lm + w.lambda_flow * flow;
}

// ---------------------------------------------------------------- centering

struct CenteringState {
    float alpha = 0.5f;   // vision emphasis
    float momentum = 0.99f;
    double c_target = 0;
    bool initialized = false;
};

struct CenteringWeights {
    double w_lm = 1, w_flow = 1;
};

inline CenteringWeights centering_update(CenteringState& st, double lm, double flow) {
    if (lm <= 0 || flow <= 0) throw std::invalid_argument("centering: losses must be positive");
    double c_current = st.alpha * flow + (1.0 - st.alpha) * lm;
    if (!st.initialized) {
        st.c_target = c_current;
        st.initialized = true;
    } else {
        st.c_target = st.momentum * st.c_target + (1.0 - st.momentum) * c_current;
    }
    return {st.c_target / lm, st.c_target / flow};
}

// ---------------------------------------------------------------- cfg dropout

// With probability p, replace every token of the conditioning span with the
// null-condition id (lengths stay stable). Returns whether the span was dropped.
inline bool cfg_dropout(MixedSequence& seq, int begin, int end, Rng& rng, float p = 0.1f) {
    if (p < 0.0f || p > 1.0f) throw std::invalid_argument("cfg_dropout: p out of range");
    if (begin < 0 || end < begin) return false;
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    if (u01(rng) >= p) return false;
    for (int i = begin; i <= end && i < seq.length(); ++i) {
        if (seq.items[i].kind != TokenItem::Kind::Text)
            throw std::invalid_argument("cfg_dropout: condition span must be text");
        seq.items[i].id = Vocab::kNullCond;
    }
    return true;
}

// Unconditional variant used by the guidance branch at inference: always null.
inline void null_condition(MixedSequence& seq, int begin, int end) {
    for (int i = begin; i <= end && i < seq.length(); ++i) seq.items[i].id = Vocab::kNullCond;
}

// ---------------------------------------------------------------- training batch

// A sample prepared for the joint objective: frames noised with per-frame t,
// LM targets masked per the loss-routing rules.
struct PreparedSample {
    ModelInput input;
    Tensor clean;               // (L x d_latent) z0 rows at visual positions
    Tensor noise;               // (L x d_latent) eps rows at visual positions
    std::vector<int> lm_targets;        // next-token ids; -1 where masked
    std::vector<uint8_t> flow_rows;     // 1 where the flow loss applies
    bool cond_dropped = false;
};

// Noise every frame with an independent t, apply CFG dropout, and derive the
// shifted LM targets. Positions whose own token or next token is visual are
// excluded from the LM loss, as are pads.
// fixed_t >= 0 pins every frame to that timestep (held-out evaluation runs a
// fixed t grid for variance reduction instead of sampling).
inline PreparedSample prepare_sample(const Sample& sample, int d_latent, Rng& rng,
                                     float shift = 3.0f, float dropout_p = 0.1f,
                                     float fixed_t = -1.0f) {
    PreparedSample out;
    Sample s = sample;
    out.cond_dropped = cfg_dropout(s.seq, s.cond_begin, s.cond_end, rng, dropout_p);
    out.input = ModelInput::from_sequence(s.seq, d_latent);
    out.input.task = s.task;
    int L = out.input.length();
    out.clean = out.input.latents;
    out.noise = Tensor::zeros({L, d_latent});

    for (const auto& [frame, span] : s.seq.frame_table) {
        float t = fixed_t >= 0.0f ? fixed_t : sample_t(rng, shift);
        for (int i = span.begin; i <= span.end; ++i) {
            out.input.t[i] = t;
            for (int c = 0; c < d_latent; ++c) {
                float eps = std::normal_distribution<float>(0.0f, 1.0f)(rng);
                out.noise.at(i, c) = eps;
                out.input.latents.at(i, c) = (1.0f - t) * eps + t * out.clean.at(i, c);
            }
        }
    }

    out.lm_targets.assign(L, -1);
    out.flow_rows.assign(L, 0);
    for (int i = 0; i < L; ++i) {
        if (out.input.visual[i]) {
            out.flow_rows[i] = 1;
            continue;
        }
        if (s.seq.items[i].id == Vocab::kPad) continue;
        if (i + 1 >= L) continue;
        const TokenItem& next = s.seq.items[i + 1];
        if (next.is_visual() || next.id == Vocab::kPad) continue;
        out.lm_targets[i] = next.id;
    }
    return out;
}

struct ObjectiveValues {
    Value total;           // weighted joint loss + scaled aux
    Value lm;              // unweighted means (constant zero when absent)
    Value flow;
    Value aux;
    int lm_positions = 0;
    int flow_positions = 0;
};

// Runs the model and assembles the joint objective on the tape.
inline ObjectiveValues joint_objective(UnifiedModel& model, Tape& tape, const PreparedSample& ps,
                                       FlowMode mode, const LossWeights& weights,
                                       std::vector<RoutingRecord>* recorder = nullptr) {
    weights.validate();
    ForwardOutput fw = model.forward(tape, ps.input, recorder);
    int L = ps.input.length();

    std::vector<int> lm_rows, lm_tgts;
    for (int i = 0; i < L; ++i)
        if (ps.lm_targets[i] >= 0) {
            lm_rows.push_back(i);
            lm_tgts.push_back(ps.lm_targets[i]);
        }
    std::vector<int> fl_rows;
    for (int i = 0; i < L; ++i)
        if (ps.flow_rows[i]) fl_rows.push_back(i);

    ObjectiveValues out;
    out.lm_positions = static_cast<int>(lm_rows.size());
    out.flow_positions = static_cast<int>(fl_rows.size());
    if (lm_rows.empty() && fl_rows.empty())
        throw std::runtime_error("objective: every position is masked");

    out.lm = lm_rows.empty()
                 ? tape.constant(Tensor::scalar(0.0f))
                 : tape.cross_entropy(tape.rows_select(fw.logits, lm_rows), lm_tgts);
    if (fl_rows.empty()) {
        out.flow = tape.constant(Tensor::scalar(0.0f));
    } else {
        int d = model.cfg.d_latent;
        Tensor target({static_cast<int>(fl_rows.size()), d});
        for (size_t r = 0; r < fl_rows.size(); ++r)
            for (int c = 0; c < d; ++c)
                target.at(static_cast<int>(r), c) =
                    mode == FlowMode::VPred
                        ? ps.clean.at(fl_rows[r], c) - ps.noise.at(fl_rows[r], c)
                        : ps.clean.at(fl_rows[r], c);
        out.flow = tape.mse(tape.rows_select(fw.flow_pred, fl_rows), target);
    }
    out.aux = fw.aux;
    Value weighted = tape.add(tape.scale(out.lm, weights.lambda_lm),
                              tape.scale(out.flow, weights.lambda_flow));
    float coeff = model.cfg.ffn_mode == FfnMode::MoE ? model.cfg.moe.balance_coeff : 0.0f;
    out.total = tape.add(weighted, tape.scale(out.aux, coeff));
    return out;
}

// ---------------------------------------------------------------- metrics log

struct StepMetrics {
    int step = 0;
    double lm_loss = 0, flow_loss = 0, aux_loss = 0;
    double w_lm = 1, w_flow = 1;
    double lr = 0;
    long long tokens_seen = 0;
};

inline std::string metrics_json_line(const StepMetrics& m) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "{\"step\":%d,\"lm_loss\":%.6f,\"flow_loss\":%.6f,\"aux_loss\":%.6f,"
                  "\"w_lm\":%.6f,\"w_flow\":%.6f,\"lr\":%.8f,\"tokens_seen\":%lld}",
                  m.step, m.lm_loss, m.flow_loss, m.aux_loss, m.w_lm, m.w_flow, m.lr,
                  m.tokens_seen);
    return buf;
}

}  // namespace uflow
