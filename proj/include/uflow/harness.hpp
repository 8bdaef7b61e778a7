#pragma once

// Experiment orchestration: the training loop (batching, loss centering,
// scheduled AdamW, checkpoints, JSONL metrics), held-out evaluation on
// disjointly seeded generators, and the sweep runner that emits scaling CSVs.

#include <filesystem>
#include <functional>

#include "uflow/analysis.hpp"
#include "uflow/config.hpp"
#include "uflow/inference.hpp"

namespace uflow {

// NaN loss aborts training; the offending step travels with the exception.
class TrainAbort : public std::runtime_error {
public:
    TrainAbort(int step, const std::string& what)
        : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

struct EvalResult {
    double lm_loss = 0;
    double perplexity = 0;
    double flow_loss = 0;
};

inline UnifiedModel build_model(const ExperimentConfig& cfg) {
    cfg.validate();
    return UnifiedModel(cfg.model, cfg.seed);
}

// Held-out metrics: mean LM loss -> perplexity, flow loss averaged over a
// fixed timestep grid. Conditioning is never dropped during evaluation.
inline EvalResult evaluate(UnifiedModel& model, const ExperimentConfig& cfg,
                           uint64_t heldout_seed, int n_samples,
                           std::vector<RoutingRecord>* recorder = nullptr) {
    static constexpr float kTGrid[] = {0.1f, 0.3f, 0.5f, 0.7f, 0.9f};
    DataSpec data = cfg.data_spec();
    MixtureSpec mix = cfg.mixture;
    for (auto& s : mix.source_seeds) s ^= heldout_seed * 0x9e3779b97f4a7c15ull + 0x5eedull;
    Rng rng(heldout_seed);

    double lm_sum = 0, flow_sum = 0;
    long long lm_n = 0, flow_n = 0;
    auto batch = sample_batch(data, mix, rng, n_samples, cfg.seq_len);
    for (const auto& sample : batch) {
        bool has_frames = sample.seq.frame_count() > 0;
        int passes = has_frames ? static_cast<int>(std::size(kTGrid)) : 1;
        for (int g = 0; g < passes; ++g) {
            Rng noise_rng(heldout_seed ^ (0xabcdull + g));
            PreparedSample ps = prepare_sample(sample, cfg.model.d_latent, noise_rng, cfg.shift,
                                               0.0f, has_frames ? kTGrid[g] : -1.0f);
            Tape tape;
            ObjectiveValues obj =
                joint_objective(model, tape, ps, cfg.flow_mode, cfg.weights, recorder);
            if (g == 0 && obj.lm_positions > 0) {
                lm_sum += tape.val(obj.lm).data[0] * obj.lm_positions;
                lm_n += obj.lm_positions;
            }
            if (obj.flow_positions > 0) {
                flow_sum += tape.val(obj.flow).data[0];
                flow_n += 1;
            }
        }
    }
    EvalResult r;
    r.lm_loss = lm_n > 0 ? lm_sum / lm_n : 0.0;
    r.perplexity = std::exp(r.lm_loss);
    r.flow_loss = flow_n > 0 ? flow_sum / flow_n : 0.0;
    return r;
}

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    EvalResult final_eval;
    StepMetrics last_step;
};

// Seed-deterministic training loop. Writes under run_dir: config.txt,
// manifest.txt, metrics.jsonl, checkpoint files.
inline TrainResult train(const ExperimentConfig& cfg, const std::string& run_dir,
                         const std::function<std::vector<Sample>(int)>* batch_override = nullptr) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(run_dir);
    {
        std::ofstream os(run_dir + "/config.txt");
        os << cfg.canonical();
        std::ofstream ms(run_dir + "/manifest.txt");
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(cfg.digest()));
        ms << "config_digest " << buf << "\n"
           << "seed " << cfg.seed << "\n"
           << "total_tokens " << cfg.total_tokens() << "\n";
    }

    UnifiedModel model = build_model(cfg);
    AdamW opt(cfg.adam);
    CenteringState centering{cfg.centering_alpha, cfg.centering_momentum, 0, false};
    CenteringWeights cw;  // identity until the first update
    DataSpec data = cfg.data_spec();

    std::ofstream metrics(run_dir + "/metrics.jsonl");
    if (!metrics) throw std::runtime_error("train: cannot write metrics in " + run_dir);
    Rng data_rng(cfg.seed ^ 0xda7aull);

    TrainResult result;
    result.metrics_path = run_dir + "/metrics.jsonl";
    result.checkpoint_path = run_dir + "/final.ufl";

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<Sample> batch = batch_override
                                        ? (*batch_override)(step)
                                        : sample_batch(data, cfg.mixture, data_rng, cfg.batch,
                                                       cfg.seq_len);
        model.params.zero_grads();
        double lm_sum = 0, flow_sum = 0, aux_sum = 0;
        long long lm_n = 0;
        int flow_batches = 0;
        Rng noise_rng(cfg.seed ^ (static_cast<uint64_t>(step) * 0x9e3779b97f4a7c15ull + 0x401cull));

        for (const auto& sample : batch) {
            try {
                PreparedSample ps = prepare_sample(sample, cfg.model.d_latent, noise_rng,
                                                   cfg.shift, cfg.cond_dropout);
                Tape tape;
                ObjectiveValues obj = joint_objective(model, tape, ps, cfg.flow_mode, cfg.weights);
                double lm_v = tape.val(obj.lm).data[0];
                double flow_v = tape.val(obj.flow).data[0];
                double aux_v = tape.val(obj.aux).data[0];
                if (!std::isfinite(lm_v) || !std::isfinite(flow_v) || !std::isfinite(aux_v))
                    throw std::runtime_error("non-finite loss");
                Value total = obj.total;
                if (cfg.centering) {
                    // weights from the EMA state of previous steps (identity at step 1)
                    float coeff = cfg.model.ffn_mode == FfnMode::MoE ? cfg.model.moe.balance_coeff
                                                                     : 0.0f;
                    total = tape.add(tape.add(tape.scale(obj.lm, static_cast<float>(cw.w_lm)),
                                              tape.scale(obj.flow, static_cast<float>(cw.w_flow))),
                                     tape.scale(obj.aux, coeff));
                }
                tape.backward(total);
                if (obj.lm_positions > 0) {
                    lm_sum += lm_v * obj.lm_positions;
                    lm_n += obj.lm_positions;
                }
                if (obj.flow_positions > 0) {
                    flow_sum += flow_v;
                    ++flow_batches;
                }
                aux_sum += aux_v;
            } catch (const std::runtime_error& e) {
                metrics << "{\"step\":" << step << ",\"abort\":\"" << e.what() << "\"}\n";
                metrics.flush();
                throw TrainAbort(step, e.what());
            }
        }
        float inv_b = 1.0f / static_cast<float>(batch.size());
        for (auto& p : model.params.items)
            for (auto& g : p.grad.data) g *= inv_b;
        float lr = lr_at_step(cfg.schedule, step);
        opt.step(model.params, lr);

        StepMetrics m;
        m.step = step;
        m.lm_loss = lm_n > 0 ? lm_sum / lm_n : 0.0;
        m.flow_loss = flow_batches > 0 ? flow_sum / flow_batches : 0.0;
        m.aux_loss = aux_sum / batch.size();
        m.w_lm = cw.w_lm;
        m.w_flow = cw.w_flow;
        m.lr = lr;
        m.tokens_seen = static_cast<long long>(step) * cfg.batch * cfg.seq_len;
        metrics << metrics_json_line(m) << "\n";
        result.last_step = m;
        if (cfg.centering && m.lm_loss > 0 && m.flow_loss > 0)
            cw = centering_update(centering, m.lm_loss, m.flow_loss);

        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            EvalResult ev = evaluate(model, cfg, cfg.heldout_seed, cfg.eval_samples);
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "{\"step\":%d,\"eval_lm_loss\":%.6f,\"eval_perplexity\":%.6f,"
                          "\"eval_flow_loss\":%.6f}",
                          step, ev.lm_loss, ev.perplexity, ev.flow_loss);
            metrics << buf << "\n";
            result.final_eval = ev;
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            save_checkpoint(run_dir + "/step" + std::to_string(step) + ".ufl", model.params,
                            cfg.digest());
    }
    save_checkpoint(result.checkpoint_path, model.params, cfg.digest());
    return result;
}

// ---------------------------------------------------------------- sweep

struct SweepCell {
    std::string name;
    ExperimentConfig cfg;
};

struct SweepCellResult {
    std::string name;
    bool ok = false;
    std::string error;
    ScalingPoint point;  // valid iff ok
};

// Runs every cell (failures recorded, sweep continues) and returns one
// ScalingPoint per successful cell: N = active params, D = tokens, C = 6ND,
// loss = lambda-weighted held-out loss.
inline std::vector<SweepCellResult> run_sweep(const std::vector<SweepCell>& cells,
                                              const std::string& sweep_dir) {
    std::vector<SweepCellResult> out;
    for (const auto& cell : cells) {
        SweepCellResult r;
        r.name = cell.name;
        try {
            TrainResult tr = train(cell.cfg, sweep_dir + "/" + cell.name);
            ParamCount pc = param_count(cell.cfg.model);
            r.point.n = pc.active;
            r.point.d = static_cast<double>(cell.cfg.total_tokens());
            r.point.c = flops(r.point.n, r.point.d);
            r.point.loss = cell.cfg.weights.lambda_lm * tr.final_eval.lm_loss +
                           cell.cfg.weights.lambda_flow * tr.final_eval.flow_loss;
            r.point.validate();
            r.ok = true;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Cross product of per-key value lists applied on top of a base ConfigMap.
inline std::vector<SweepCell> expand_grid(
    const ConfigMap& base, const std::vector<std::pair<std::string, std::vector<std::string>>>& grid) {
    std::vector<std::map<std::string, std::string>> combos = {{}};
    for (const auto& [key, values] : grid) {
        if (values.empty()) throw std::invalid_argument("sweep: empty value list for " + key);
        std::vector<std::map<std::string, std::string>> next;
        for (const auto& combo : combos)
            for (const auto& v : values) {
                auto c = combo;
                c[key] = v;
                next.push_back(std::move(c));
            }
        combos = std::move(next);
    }
    std::vector<SweepCell> cells;
    for (size_t i = 0; i < combos.size(); ++i) {
        ConfigMap cm = base;
        std::string name = "cell" + std::to_string(i);
        for (const auto& [k, v] : combos[i]) cm.set(k, v);
        cells.push_back({name, ExperimentConfig::from_map(cm)});
    }
    return cells;
}

}  // namespace uflow
