// Command-line front end: training, evaluation, sweeps, MoE routing analysis,
// scaling-law fitting, planning, world-model rollout, and text-to-frame
// generation. Every command is byte-deterministic under a fixed seed.

#include <CLI11.hpp>
#include <json.hpp>

#include "uflow/harness.hpp"

using json = nlohmann::json;
using namespace uflow;

namespace {

ConfigMap load_config(const std::string& path, const std::vector<std::string>& sets) {
    ConfigMap cm = path.empty() ? ConfigMap{} : ConfigMap::parse_file(path);
    for (const auto& s : sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got: " + s);
        cm.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return cm;
}

std::string digest_hex(uint64_t d) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

UnifiedModel load_model(const ExperimentConfig& cfg, const std::string& ckpt, bool ignore_digest) {
    UnifiedModel model = build_model(cfg);
    uint64_t digest = load_checkpoint(ckpt, model.params);
    if (!ignore_digest && digest != cfg.digest())
        throw std::runtime_error("checkpoint digest " + digest_hex(digest) +
                                 " does not match config digest " + digest_hex(cfg.digest()) +
                                 " (pass --ignore-digest to override)");
    return model;
}

json eval_json(const EvalResult& ev) {
    return json{{"lm_loss", ev.lm_loss}, {"perplexity", ev.perplexity},
                {"flow_loss", ev.flow_loss}};
}

json action_json(const ActionDelta& a) {
    return json{{"dx", a.dx}, {"dy", a.dy}, {"dyaw", a.dyaw}, {"text", format_action(a)}};
}

// ---------------------------------------------------------------- commands

int cmd_train(const std::string& config, const std::vector<std::string>& sets,
              const std::string& run_dir) {
    ExperimentConfig cfg = ExperimentConfig::from_map(load_config(config, sets));
    TrainResult res = train(cfg, run_dir);
    json out{{"run_dir", run_dir},
             {"checkpoint", res.checkpoint_path},
             {"metrics", res.metrics_path},
             {"config_digest", digest_hex(cfg.digest())},
             {"tokens_seen", res.last_step.tokens_seen},
             {"final_train", {{"lm_loss", res.last_step.lm_loss},
                              {"flow_loss", res.last_step.flow_loss}}},
             {"final_eval", eval_json(res.final_eval)}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_eval(const std::string& config, const std::vector<std::string>& sets,
             const std::string& ckpt, int samples, uint64_t seed, bool seed_given,
             const std::string& routing_out, bool ignore_digest) {
    ExperimentConfig cfg = ExperimentConfig::from_map(load_config(config, sets));
    UnifiedModel model = load_model(cfg, ckpt, ignore_digest);
    std::vector<RoutingRecord> records;
    std::vector<RoutingRecord>* rec = routing_out.empty() ? nullptr : &records;
    EvalResult ev = evaluate(model, cfg, seed_given ? seed : cfg.heldout_seed, samples, rec);
    if (rec) {
        std::ofstream os(routing_out);
        if (!os) throw std::runtime_error("cannot write " + routing_out);
        write_routing_csv(os, records);
    }
    json out = eval_json(ev);
    out["samples"] = samples;
    if (rec) out["routing_csv"] = routing_out;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_sweep(const std::string& config, const std::vector<std::string>& sets,
              const std::vector<std::string>& grids, const std::string& out_dir) {
    ConfigMap base = load_config(config, sets);
    std::vector<std::pair<std::string, std::vector<std::string>>> grid;
    for (const auto& g : grids) {
        auto eq = g.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--grid expects key=v1|v2|..., got: " + g);
        std::vector<std::string> values;
        std::string rest = g.substr(eq + 1);
        size_t pos = 0;
        while (true) {
            auto bar = rest.find('|', pos);
            values.push_back(rest.substr(pos, bar - pos));
            if (bar == std::string::npos) break;
            pos = bar + 1;
        }
        grid.emplace_back(g.substr(0, eq), std::move(values));
    }
    auto cells = expand_grid(base, grid);
    auto results = run_sweep(cells, out_dir);

    std::vector<ScalingPoint> pts;
    json cell_log = json::array();
    for (const auto& r : results) {
        json c{{"name", r.name}, {"ok", r.ok}};
        if (r.ok) {
            pts.push_back(r.point);
            c["point"] = {{"n", r.point.n}, {"d", r.point.d}, {"c", r.point.c},
                          {"loss", r.point.loss}};
        } else {
            c["error"] = r.error;
        }
        cell_log.push_back(std::move(c));
    }
    std::ostringstream csv;
    write_scaling_csv(csv, pts);
    write_text(out_dir + "/scaling.csv", csv.str());
    json out{{"cells", cell_log}, {"scaling_csv", out_dir + "/scaling.csv"},
             {"ok", static_cast<int>(pts.size())},
             {"failed", static_cast<int>(results.size() - pts.size())}};
    write_text(out_dir + "/sweep.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_analyze_moe(const std::string& routing_csv, int experts, const std::string& out_path) {
    std::ifstream is(routing_csv);
    if (!is) throw std::runtime_error("cannot open " + routing_csv);
    std::vector<RoutingRecord> records = read_routing_csv(is);
    if (records.empty()) throw std::runtime_error("routing csv has no records");

    std::set<int> layer_set;
    for (const auto& r : records) layer_set.insert(r.layer);
    std::vector<RoutingRecord> gen_recs, und_recs;
    for (const auto& r : records) {
        if (r.task == TaskTag::Gen) gen_recs.push_back(r);
        if (r.task == TaskTag::Und) und_recs.push_back(r);
    }

    json layers = json::array();
    std::vector<double> all_scores;
    for (int layer : layer_set) {
        ExpertStats st = ExpertStats::from_records(records, experts, layer);
        int n_text = 0, n_vision = 0, n_multi = 0, n_dead = 0;
        for (int e = 0; e < experts; ++e) {
            auto s = specialization_score(st, e);
            if (!s) {
                ++n_dead;
                continue;
            }
            all_scores.push_back(*s);
            switch (classify_expert(*s)) {
                case ExpertClass::Text: ++n_text; break;
                case ExpertClass::Vision: ++n_vision; break;
                case ExpertClass::Multimodal: ++n_multi; break;
            }
        }
        json lj{{"layer", layer},
                {"class_counts", {{"text", n_text}, {"vision", n_vision},
                                  {"multimodal", n_multi}}},
                {"dead", n_dead}};
        try {
            auto r = routing_correlation(gen_recs, und_recs, experts, layer);
            lj["gen_und_r"] = r ? json(*r) : json(nullptr);
        } catch (const std::exception&) {
            lj["gen_und_r"] = nullptr;  // one of the tasks has no records here
        }
        layers.push_back(std::move(lj));
    }

    // histogram of specialization scores over [-1, 1], 10 bins
    std::vector<int> score_hist(10, 0);
    for (double s : all_scores)
        ++score_hist[std::min(9, static_cast<int>((s + 1.0) / 0.2))];
    // histogram of timestep CVs, 12 bins of width 0.25 with overflow in the last
    auto cvs = timestep_cv(records, experts);
    std::vector<int> cv_hist(12, 0);
    int cv_defined = 0;
    for (const auto& cv : cvs)
        if (cv) {
            ++cv_defined;
            ++cv_hist[std::min(11, static_cast<int>(*cv / 0.25))];
        }

    json out{{"n_experts", experts},
             {"n_records", static_cast<int>(records.size())},
             {"layers", layers},
             {"score_histogram", {{"lo", -1.0}, {"hi", 1.0}, {"counts", score_hist}}},
             {"cv_histogram", {{"bin_width", 0.25}, {"counts", cv_hist},
                               {"defined", cv_defined}}}};
    if (!out_path.empty()) write_text(out_path, out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_fit_scaling(const std::string& csv_path, const std::string& out_dir) {
    std::ifstream is(csv_path);
    if (!is) throw std::runtime_error("cannot open " + csv_path);
    std::vector<ScalingPoint> pts = read_scaling_csv(is);
    if (pts.empty()) throw std::runtime_error("no scaling points in " + csv_path);
    std::sort(pts.begin(), pts.end(),
              [](const ScalingPoint& a, const ScalingPoint& b) { return a.c < b.c; });

    // cluster points into compute budgets (2% relative tolerance on C)
    struct Budget {
        double c = 0;
        std::vector<ScalingPoint> pts;
    };
    std::vector<Budget> budgets;
    for (const auto& p : pts) {
        if (budgets.empty() || p.c > budgets.back().pts.front().c * 1.02)
            budgets.push_back({0, {}});
        budgets.back().pts.push_back(p);
    }
    for (auto& b : budgets) {
        double lg = 0;
        for (const auto& p : b.pts) lg += std::log(p.c);
        b.c = std::exp(lg / b.pts.size());
    }

    json budget_log = json::array();
    std::vector<std::pair<double, double>> c_nopt, c_minloss;
    for (const auto& b : budgets) {
        json bj{{"c", b.c}, {"points", static_cast<int>(b.pts.size())}};
        double min_loss = b.pts.front().loss;
        std::vector<std::pair<double, double>> logn_loss;
        for (const auto& p : b.pts) {
            logn_loss.push_back({std::log(p.n), p.loss});
            min_loss = std::min(min_loss, p.loss);
        }
        c_minloss.push_back({b.c, min_loss});
        bj["min_loss"] = min_loss;
        try {
            double n_opt = isoflop_vertex(logn_loss);
            c_nopt.push_back({b.c, n_opt});
            bj["n_opt"] = n_opt;
        } catch (const std::exception& e) {
            bj["n_opt_error"] = e.what();
        }
        budget_log.push_back(std::move(bj));
    }

    json out{{"budgets", budget_log}};
    std::optional<PowerLawFit> pl;
    if (c_nopt.size() >= 2) {
        pl = powerlaw_fit(c_nopt);
        out["power_law"] = {{"a", pl->a}, {"b", pl->b}, {"prefactor", pl->prefactor}};
    } else {
        out["power_law"] = nullptr;
    }
    std::optional<SaturatingFit> sat;
    if (c_minloss.size() >= 3) {
        sat = saturating_fit(c_minloss);
        out["saturating"] = {{"a", sat->a}, {"alpha", sat->alpha}, {"e", sat->e},
                             {"log_mse", sat->log_mse}};
    } else {
        out["saturating"] = nullptr;
    }

    // plot-ready fitted curves over the observed compute range
    std::ostringstream curves;
    curves << "c,n_opt_fit,loss_fit\n";
    double c_lo = pts.front().c, c_hi = pts.back().c;
    for (int i = 0; i < 50; ++i) {
        double c = c_lo * std::pow(c_hi / c_lo, i / 49.0);
        char buf[128];
        std::string n_fit = pl ? std::to_string(pl->prefactor * std::pow(c, pl->a)) : "";
        std::string l_fit = sat ? std::to_string(sat->a * std::pow(c, -sat->alpha) + sat->e) : "";
        std::snprintf(buf, sizeof(buf), "%.10g,%s,%s\n", c, n_fit.c_str(), l_fit.c_str());
        curves << buf;
    }
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/fit.json", out.dump(2) + "\n");
    write_text(out_dir + "/curves.csv", curves.str());
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_gen(const std::string& config, const std::vector<std::string>& sets,
            const std::string& ckpt, const std::string& prompt, const std::string& out_dir,
            uint64_t seed, int frames, int steps, float cfg_scale, bool ignore_digest) {
    ExperimentConfig cfg = ExperimentConfig::from_map(load_config(config, sets));
    UnifiedModel model = load_model(cfg, ckpt, ignore_digest);
    ModelDecoder dec(model);
    EncoderSpec enc = cfg.encoder();
    DenoiseConfig dn{steps, cfg_scale, cfg.flow_mode};

    std::vector<int> prompt_ids = Vocab::encode(prompt);
    if (prompt_ids.empty()) throw std::runtime_error("gen: empty prompt");
    MixedSequence seq = assemble_sequence({SeqPart::text_span(prompt_ids)}, enc.tokens_per_frame());
    Rng rng(seed);

    std::filesystem::create_directories(out_dir);
    json frame_files = json::array();
    for (int f = 0; f < frames; ++f) {
        int frame_start = seq.length();
        int frame = append_placeholder_frame(seq, enc.tokens_per_frame(), enc.d_latent());
        auto [cb, ce] = full_prefix_condition(seq, frame_start);
        Tensor z = euler_denoise(dec, seq, cb, ce, dn, rng);
        FrameSpan span = seq.frame_table.at(frame);
        for (int i = 0; i < enc.tokens_per_frame(); ++i)
            for (int c = 0; c < enc.d_latent(); ++c)
                seq.items[span.begin + i].latent[c] = z.at(i, c);
        seq.push(TokenItem::eoi(frame));
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%02d.ppm", f);
        write_ppm(out_dir + "/" + name, unpatchify(z, enc));
        frame_files.push_back(name);
    }
    seq.revalidate(enc.tokens_per_frame());  // emitted sequence must be well-formed

    json out{{"prompt", prompt},
             {"seed", seed},
             {"frames", frames},
             {"sequence_length", seq.length()},
             {"frame_files", frame_files},
             {"config_digest", digest_hex(cfg.digest())},
             {"denoise", {{"steps", steps}, {"cfg_scale", cfg_scale}}}};
    write_text(out_dir + "/gen.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_rollout(const std::string& config, const std::vector<std::string>& sets,
                const std::string& ckpt, const std::string& actions_str, uint64_t episode_seed,
                const std::string& out_dir, int steps, float cfg_scale, bool ignore_digest) {
    ExperimentConfig cfg = ExperimentConfig::from_map(load_config(config, sets));
    UnifiedModel model = load_model(cfg, ckpt, ignore_digest);
    ModelDecoder dec(model);
    EncoderSpec enc = cfg.encoder();
    DataSpec data = cfg.data_spec();

    NavSample nav = make_nav_episode(data, episode_seed, 0);
    std::vector<Tensor> context;
    for (const auto& pose : nav.context_poses)
        context.push_back(patchify(render_pose(pose, data.map, enc.image_side).image, enc));
    std::vector<ActionDelta> actions;
    for (char ch : actions_str) actions.push_back(wasd_action(ch));

    DenoiseConfig dn{steps, cfg_scale, cfg.flow_mode};
    Rng rng(episode_seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<Tensor> frames = rollout(dec, context, actions, dn, rng);

    std::filesystem::create_directories(out_dir);
    json files = json::array(), action_log = json::array();
    for (size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%02zu.ppm", i);
        write_ppm(out_dir + "/" + name, unpatchify(frames[i], enc));
        files.push_back(name);
        action_log.push_back(action_json(actions[i]));
    }
    json out{{"actions", action_log},
             {"episode_seed", episode_seed},
             {"config_digest", digest_hex(cfg.digest())},
             {"context_frames", static_cast<int>(context.size())},
             {"frame_files", files},
             {"denoise", {{"steps", steps}, {"cfg_scale", cfg_scale}}}};
    write_text(out_dir + "/manifest.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_plan(const std::string& config, const std::vector<std::string>& sets,
             const std::string& ckpt, bool oracle, uint64_t episode_seed,
             const std::string& out_dir, int horizon, int samples, int elites, int iterations,
             int steps, float cfg_scale, bool ignore_digest) {
    ExperimentConfig cfg = ExperimentConfig::from_map(load_config(config, sets));
    EncoderSpec enc = cfg.encoder();
    WorldMap map = WorldMap::make(cfg.world_seed);

    // seeded expert episode: random start, random WASD expert actions
    Rng rng(episode_seed ^ 0x7fb5d329728ea185ull);
    std::uniform_real_distribution<float> upos(-4.0f, 4.0f);
    std::uniform_real_distribution<float> uyaw(-static_cast<float>(M_PI),
                                               static_cast<float>(M_PI));
    Pose start{upos(rng), upos(rng), uyaw(rng)};
    static constexpr char keys[4] = {'W', 'A', 'S', 'D'};
    std::vector<Pose> reference = {start};
    for (int i = 0; i < horizon; ++i) {
        char k = keys[std::uniform_int_distribution<int>(0, 3)(rng)];
        reference.push_back(env_step(reference.back(), wasd_action(k)));
    }
    Tensor goal = patchify(render_pose(reference.back(), map, enc.image_side).image, enc);

    CEMConfig cem;
    cem.horizon = horizon;
    cem.samples = samples;
    cem.elites = elites;
    cem.iterations = iterations;
    cem.seed = episode_seed;

    std::optional<UnifiedModel> model;
    std::unique_ptr<ModelDecoder> dec;
    std::unique_ptr<RolloutScorer> scorer;
    if (oracle) {
        scorer = std::make_unique<OracleScorer>(start, map, enc);
    } else {
        if (ckpt.empty()) throw std::runtime_error("plan: need --checkpoint or --oracle");
        model.emplace(load_model(cfg, ckpt, ignore_digest));
        dec = std::make_unique<ModelDecoder>(*model);
        std::vector<Tensor> ctx = {patchify(render_pose(start, map, enc.image_side).image, enc)};
        scorer = std::make_unique<LearnedScorer>(*dec, ctx,
                                                 DenoiseConfig{steps, cfg_scale, cfg.flow_mode},
                                                 episode_seed);
    }
    CEMResult res = cem_plan(*scorer, goal, cem);

    std::vector<Pose> planned = {start};
    for (const auto& a : res.plan) planned.push_back(env_step(planned.back(), a));
    TrajectoryError err = ate_rpe(planned, reference);

    std::filesystem::create_directories(out_dir);
    json plan_actions = json::array();
    for (const auto& a : res.plan) plan_actions.push_back(action_json(a));
    json plan_json{{"episode_seed", episode_seed},
                   {"oracle", oracle},
                   {"actions", plan_actions},
                   {"elite_mean_score", res.elite_mean_score},
                   {"best_score", res.best_score},
                   {"cem", {{"horizon", horizon}, {"samples", samples}, {"elites", elites},
                            {"iterations", iterations}}}};
    write_text(out_dir + "/plan.json", plan_json.dump(2) + "\n");
    json metrics{{"ate", err.ate}, {"rpe", err.rpe}, {"score", res.best_score}};
    write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");
    for (size_t i = 0; i < planned.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "step_%02zu.ppm", i);
        write_ppm(out_dir + "/" + name, render_pose(planned[i], map, enc.image_side).image);
    }
    std::cout << metrics.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified multimodal pretraining toolkit"};
    app.require_subcommand(1);

    std::string config, run_dir, ckpt, routing_out, out_path, prompt, actions;
    std::vector<std::string> sets, grids;
    int samples = 8, experts = 8, frames = 1, steps = 25, horizon = 8;
    int cem_samples = 120, cem_elites = 5, cem_iterations = 3;
    uint64_t seed = 0, episode_seed = 0;
    float cfg_scale = 3.0f;
    bool ignore_digest = false, oracle = false;

    auto add_config = [&](CLI::App* c, bool required) {
        auto* opt = c->add_option("--config", config, "experiment config file");
        if (required) opt->required();
        c->add_option("--set", sets, "override: key=value (repeatable)");
    };

    auto* t = app.add_subcommand("train", "train a model");
    add_config(t, false);
    t->add_option("--run-dir", run_dir, "output directory")->required();

    auto* e = app.add_subcommand("eval", "held-out evaluation of a checkpoint");
    add_config(e, false);
    e->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    e->add_option("--samples", samples, "held-out samples");
    auto* seed_opt = e->add_option("--seed", seed, "held-out generator seed");
    e->add_option("--routing-out", routing_out, "write routing records CSV");
    e->add_flag("--ignore-digest", ignore_digest, "skip config digest check");

    auto* s = app.add_subcommand("sweep", "run a config grid and emit scaling points");
    add_config(s, false);
    s->add_option("--grid", grids, "axis: key=v1|v2|... (repeatable)")->required();
    s->add_option("--out", out_path, "sweep output directory")->required();

    auto* a = app.add_subcommand("analyze-moe", "summarize routing records");
    a->add_option("--routing", routing_out, "routing CSV from eval")->required();
    a->add_option("--experts", experts, "expert count")->required();
    a->add_option("--out", out_path, "report JSON path");

    auto* f = app.add_subcommand("fit-scaling", "fit scaling laws to a point CSV");
    f->add_option("--csv", routing_out, "ScalingPoint CSV")->required();
    f->add_option("--out", out_path, "output directory")->required();

    auto* g = app.add_subcommand("gen", "text-to-frame generation");
    add_config(g, false);
    g->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    g->add_option("--prompt", prompt, "conditioning text")->required();
    g->add_option("--out", out_path, "output directory")->required();
    g->add_option("--seed", seed, "noise seed");
    g->add_option("--frames", frames, "frames to generate");
    g->add_option("--steps", steps, "denoising steps");
    g->add_option("--cfg-scale", cfg_scale, "guidance scale");
    g->add_flag("--ignore-digest", ignore_digest, "skip config digest check");

    auto* r = app.add_subcommand("rollout", "action-conditioned world-model rollout");
    add_config(r, false);
    r->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    r->add_option("--actions", actions, "WASD string, one frame per key")->required();
    r->add_option("--episode-seed", episode_seed, "episode seed");
    r->add_option("--out", out_path, "output directory")->required();
    r->add_option("--steps", steps, "denoising steps");
    r->add_option("--cfg-scale", cfg_scale, "guidance scale");
    r->add_flag("--ignore-digest", ignore_digest, "skip config digest check");

    auto* p = app.add_subcommand("plan", "CEM planning toward a goal view");
    add_config(p, false);
    p->add_option("--checkpoint", ckpt, "world-model checkpoint");
    p->add_flag("--oracle", oracle, "use ground-truth dynamics");
    p->add_option("--episode-seed", episode_seed, "episode seed");
    p->add_option("--out", out_path, "output directory")->required();
    p->add_option("--horizon", horizon, "plan length");
    p->add_option("--samples", cem_samples, "CEM samples per iteration");
    p->add_option("--elites", cem_elites, "CEM elites");
    p->add_option("--iterations", cem_iterations, "CEM iterations");
    p->add_option("--steps", steps, "denoising steps (learned model)");
    p->add_option("--cfg-scale", cfg_scale, "guidance scale (learned model)");
    p->add_flag("--ignore-digest", ignore_digest, "skip config digest check");

    CLI11_PARSE(app, argc, argv);
    try {
        if (t->parsed()) return cmd_train(config, sets, run_dir);
        if (e->parsed())
            return cmd_eval(config, sets, ckpt, samples, seed, seed_opt->count() > 0, routing_out,
                            ignore_digest);
        if (s->parsed()) return cmd_sweep(config, sets, grids, out_path);
        if (a->parsed()) return cmd_analyze_moe(routing_out, experts, out_path);
        if (f->parsed()) return cmd_fit_scaling(routing_out, out_path);
        if (g->parsed())
            return cmd_gen(config, sets, ckpt, prompt, out_path, seed, frames, steps, cfg_scale,
                           ignore_digest);
        if (r->parsed())
            return cmd_rollout(config, sets, ckpt, actions, episode_seed, out_path, steps,
                               cfg_scale, ignore_digest);
        if (p->parsed())
            return cmd_plan(config, sets, ckpt, oracle, episode_seed, out_path, horizon,
                            cem_samples, cem_elites, cem_iterations, steps, cfg_scale,
                            ignore_digest);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
