#pragma once

// Modal-switching decoding: autoregressive text sampling that suspends on BOI,
// denoises a frame with an Euler sampler under classifier-free guidance, then
// resumes text; plus the action-conditioned rollout loop.

#include "uflow/objectives.hpp"

namespace uflow {

// Decoding interface; the production implementation wraps UnifiedModel, tests
// substitute stubs (constant velocity fields, scripted token emitters).
class Decoder {
public:
    virtual ~Decoder() = default;
    virtual int vocab_size() const = 0;
    virtual int d_latent() const = 0;
    virtual int tokens_per_frame() const = 0;
    // vocabulary logits at the last position of the prefix
    virtual Tensor next_logits(const MixedSequence& prefix) = 0;
    // flow-head outputs at the given rows
    virtual Tensor flow_at(const ModelInput& in, const std::vector<int>& rows) = 0;
};

class ModelDecoder : public Decoder {
public:
    explicit ModelDecoder(UnifiedModel& m) : model_(m) {}
    int vocab_size() const override { return model_.cfg.vocab; }
    int d_latent() const override { return model_.cfg.d_latent; }
    int tokens_per_frame() const override { return model_.cfg.tokens_per_frame; }

    Tensor next_logits(const MixedSequence& prefix) override {
        Tape tape;
        ModelInput in = ModelInput::from_sequence(prefix, model_.cfg.d_latent);
        ForwardOutput fw = model_.forward(tape, in);
        const Tensor& logits = tape.val(fw.logits);
        int last = in.length() - 1;
        Tensor out({1, model_.cfg.vocab});
        for (int c = 0; c < model_.cfg.vocab; ++c) out.at(0, c) = logits.at(last, c);
        return out;
    }

    Tensor flow_at(const ModelInput& in, const std::vector<int>& rows) override {
        Tape tape;
        ForwardOutput fw = model_.forward(tape, in);
        return tape.val(tape.rows_select(fw.flow_pred, rows));
    }

private:
    UnifiedModel& model_;
};

// ---------------------------------------------------------------- sampling

struct SamplingConfig {
    float temperature = 1.0f;
    int top_k = 0;  // 0 = no truncation
};

inline int sample_from_logits(const Tensor& logits, Rng& rng, const SamplingConfig& sc) {
    int v = logits.numel();
    const float* x = logits.data.data();
    int argmax = 0;
    for (int i = 1; i < v; ++i)
        if (x[i] > x[argmax]) argmax = i;
    if (sc.temperature <= 1e-6f) return argmax;

    std::vector<int> pool;
    if (sc.top_k > 0 && sc.top_k < v) {
        pool.resize(v);
        for (int i = 0; i < v; ++i) pool[i] = i;
        std::partial_sort(pool.begin(), pool.begin() + sc.top_k, pool.end(),
                          [&](int a, int b) { return x[a] != x[b] ? x[a] > x[b] : a < b; });
        pool.resize(sc.top_k);
    } else {
        pool.resize(v);
        for (int i = 0; i < v; ++i) pool[i] = i;
    }
    double mx = x[argmax];
    std::vector<double> w(pool.size());
    double z = 0;
    for (size_t i = 0; i < pool.size(); ++i) {
        w[i] = std::exp((x[pool[i]] - mx) / sc.temperature);
        z += w[i];
    }
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double u = u01(rng) * z, acc = 0;
    for (size_t i = 0; i < pool.size(); ++i) {
        acc += w[i];
        if (u < acc) return pool[i];
    }
    return pool.back();
}

inline int ar_next_token(Decoder& dec, const MixedSequence& prefix, Rng& rng,
                         const SamplingConfig& sc = {}) {
    if (prefix.length() < 1) throw std::invalid_argument("ar_next_token: empty prefix");
    return sample_from_logits(dec.next_logits(prefix), rng, sc);
}

// ---------------------------------------------------------------- denoising

struct DenoiseConfig {
    int steps = 25;
    float cfg_scale = 3.0f;
    FlowMode mode = FlowMode::VPred;
};

// Appends BOI plus zeroed visual placeholders for one frame (no EOI yet);
// returns the new frame id.
inline int append_placeholder_frame(MixedSequence& seq, int tokens_per_frame, int d_latent) {
    int frame = seq.frame_count();
    seq.push(TokenItem::boi(frame));
    for (int i = 0; i < tokens_per_frame; ++i)
        seq.push(TokenItem::visual(std::vector<float>(d_latent, 0.0f), frame));
    return frame;
}

// Euler integration from noise (t=0) to data (t=1) over the trailing open
// frame. The condition span [cond_begin, cond_end] is replaced by the null
// token for the unconditional branch; cfg_scale 1 skips that branch entirely,
// making the result bit-identical to conditional-only denoising.
inline Tensor euler_denoise(Decoder& dec, const MixedSequence& context, int cond_begin,
                            int cond_end, const DenoiseConfig& cfg, Rng& rng) {
    if (cfg.steps < 1) throw std::invalid_argument("euler_denoise: steps must be >= 1");
    int tpf = dec.tokens_per_frame(), d = dec.d_latent();
    int L = context.length();
    if (L < tpf + 1) throw std::invalid_argument("euler_denoise: missing placeholder frame");
    for (int i = L - tpf; i < L; ++i)
        if (!context.items[i].is_visual())
            throw std::invalid_argument("euler_denoise: context must end with placeholder tokens");
    if (context.items[L - tpf - 1].kind != TokenItem::Kind::Boi)
        throw std::invalid_argument("euler_denoise: placeholders must follow a BOI");

    ModelInput cond = ModelInput::from_sequence(context, d);
    ModelInput uncond = cond;
    bool use_cfg = cfg.cfg_scale != 1.0f;
    if (use_cfg)
        for (int i = std::max(0, cond_begin); i <= cond_end && i < L; ++i)
            if (!uncond.visual[i]) uncond.ids[i] = Vocab::kNullCond;

    std::vector<int> rows(tpf);
    for (int i = 0; i < tpf; ++i) rows[i] = L - tpf + i;

    Tensor z({tpf, d});
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    for (auto& v : z.data) v = gauss(rng);

    float dt = 1.0f / cfg.steps;
    for (int n = 0; n < cfg.steps; ++n) {
        float t = static_cast<float>(n) / cfg.steps;
        for (int i = 0; i < tpf; ++i) {
            cond.t[rows[i]] = t;
            for (int c = 0; c < d; ++c) cond.latents.at(rows[i], c) = z.at(i, c);
        }
        Tensor v_c = dec.flow_at(cond, rows);
        if (cfg.mode == FlowMode::XPred) v_c = xpred_to_velocity(v_c, z, t);
        Tensor v = v_c;
        if (use_cfg) {
            for (int i = 0; i < tpf; ++i) {
                uncond.t[rows[i]] = t;
                for (int c = 0; c < d; ++c) uncond.latents.at(rows[i], c) = z.at(i, c);
            }
            Tensor v_u = dec.flow_at(uncond, rows);
            if (cfg.mode == FlowMode::XPred) v_u = xpred_to_velocity(v_u, z, t);
            for (size_t i = 0; i < v.data.size(); ++i)
                v.data[i] = v_u.data[i] + cfg.cfg_scale * (v_c.data[i] - v_u.data[i]);
        }
        for (size_t i = 0; i < z.data.size(); ++i) {
            z.data[i] += v.data[i] * dt;
            if (!std::isfinite(z.data[i]))
                throw std::runtime_error("euler_denoise: non-finite latent during integration");
        }
    }
    return z;
}

// ---------------------------------------------------------------- generation

struct GenerateLimits {
    int max_tokens = 128;  // generated items, visual tokens included
    int max_frames = 4;
};

enum class StopReason { EndOfText, TokenLimit, FrameLimit };

struct GenerateResult {
    MixedSequence seq;
    StopReason reason = StopReason::EndOfText;
    int generated_tokens = 0;
    int frames = 0;
};

// Nulls every text token of the prompt for the unconditional branch; markers
// keep their ids so the frame structure stays announced.
inline std::pair<int, int> full_prefix_condition(const MixedSequence& seq, int frame_start) {
    return {0, frame_start - 1};
}

inline GenerateResult generate(Decoder& dec, const MixedSequence& prompt, const GenerateLimits& lim,
                               const SamplingConfig& sc, const DenoiseConfig& dn, Rng& rng) {
    if (prompt.length() < 1) throw std::invalid_argument("generate: empty prompt");
    GenerateResult res;
    res.seq = prompt;
    res.frames = res.seq.frame_count();
    while (true) {
        if (res.generated_tokens >= lim.max_tokens) {
            res.reason = StopReason::TokenLimit;
            break;
        }
        int tok = ar_next_token(dec, res.seq, rng, sc);
        if (tok == Vocab::kEot) {
            res.seq.push(TokenItem::text(tok));
            ++res.generated_tokens;
            res.reason = StopReason::EndOfText;
            break;
        }
        if (tok == Vocab::kBoi) {
            if (res.frames >= lim.max_frames) {
                res.reason = StopReason::FrameLimit;
                break;
            }
            int frame_start = res.seq.length();
            int frame = append_placeholder_frame(res.seq, dec.tokens_per_frame(), dec.d_latent());
            auto [cb, ce] = full_prefix_condition(res.seq, frame_start);
            Tensor z = euler_denoise(dec, res.seq, cb, ce, dn, rng);
            FrameSpan span = res.seq.frame_table.at(frame);
            for (int i = 0; i < dec.tokens_per_frame(); ++i)
                for (int c = 0; c < dec.d_latent(); ++c)
                    res.seq.items[span.begin + i].latent[c] = z.at(i, c);
            res.seq.push(TokenItem::eoi(frame));
            res.generated_tokens += dec.tokens_per_frame() + 2;
            ++res.frames;
            continue;
        }
        res.seq.push(TokenItem::text(tok));
        ++res.generated_tokens;
    }
    return res;
}

// ---------------------------------------------------------------- rollout

// Autoregressive world-model rollout: append each action as text, denoise one
// frame conditioned on it, feed the frame back as context.
inline std::vector<Tensor> rollout(Decoder& dec, const std::vector<Tensor>& context_frames,
                                   const std::vector<ActionDelta>& actions, const DenoiseConfig& dn,
                                   Rng& rng) {
    if (context_frames.empty()) throw std::invalid_argument("rollout: need at least one context frame");
    int tpf = dec.tokens_per_frame(), d = dec.d_latent();
    MixedSequence seq;
    std::vector<SeqPart> parts;
    for (const auto& f : context_frames) parts.push_back(SeqPart::frame_latents(f));
    seq = assemble_sequence(parts, tpf);

    std::vector<Tensor> predicted;
    for (const auto& a : actions) {
        std::vector<int> ids = encode_action(a);
        int cb = seq.length();
        for (int id : ids) seq.push(TokenItem::text(id));
        int ce = seq.length() - 1;
        int frame = append_placeholder_frame(seq, tpf, d);
        Tensor z = euler_denoise(dec, seq, cb, ce, dn, rng);
        FrameSpan span = seq.frame_table.at(frame);
        for (int i = 0; i < tpf; ++i)
            for (int c = 0; c < d; ++c) seq.items[span.begin + i].latent[c] = z.at(i, c);
        seq.push(TokenItem::eoi(frame));
        predicted.push_back(std::move(z));
    }
    return predicted;
}

// Plugs a learned world model into the CEM planner: the score of an action
// sequence is taken from the rollout's final predicted frame.
class LearnedScorer : public RolloutScorer {
public:
    LearnedScorer(Decoder& dec, std::vector<Tensor> context, DenoiseConfig dn, uint64_t seed)
        : dec_(dec), context_(std::move(context)), dn_(dn), seed_(seed) {}

    Tensor final_latent(const std::vector<ActionDelta>& actions) override {
        Rng rng(seed_);  // frozen noise keeps candidate scoring comparable
        auto frames = rollout(dec_, context_, actions, dn_, rng);
        return frames.back();
    }

private:
    Decoder& dec_;
    std::vector<Tensor> context_;
    DenoiseConfig dn_;
    uint64_t seed_;
};

}  // namespace uflow
