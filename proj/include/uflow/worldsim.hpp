#pragma once

// 2-D egocentric navigation world: ground-truth SE(2) dynamics, a procedural
// landmark map with deterministic egocentric rendering, WASD action presets,
// the CEM planner, and ATE/RPE trajectory metrics.

#include "uflow/modality.hpp"

namespace uflow {

inline float wrap_angle(float a) {
    while (a > static_cast<float>(M_PI)) a -= 2.0f * static_cast<float>(M_PI);
    while (a <= -static_cast<float>(M_PI)) a += 2.0f * static_cast<float>(M_PI);
    return a;
}

struct Pose {
    float x = 0, y = 0, yaw = 0;
};

// Agent-frame deltas rotated into the world frame; +x forward, +y left,
// yaw counter-clockwise.
inline Pose env_step(const Pose& p, const ActionDelta& a) {
    float c = std::cos(p.yaw), s = std::sin(p.yaw);
    Pose out;
    out.x = p.x + c * a.dx - s * a.dy;
    out.y = p.y + s * a.dx + c * a.dy;
    out.yaw = wrap_angle(p.yaw + a.dyaw);
    return out;
}

inline ActionDelta wasd_action(char key) {
    switch (key) {
        case 'W': case 'w': return {0.5f, 0.0f, 0.0f};
        case 'S': case 's': return {-0.5f, 0.0f, 0.0f};
        case 'A': case 'a': return {0.2f, 0.0f, 0.5f};
        case 'D': case 'd': return {0.2f, 0.0f, -0.5f};
        default: throw std::invalid_argument("wasd_action: unknown key");
    }
}

struct WorldMap {
    struct Disk {
        float x, y, r;
        float color[3];
    };
    std::vector<Disk> disks;
    float extent = 8.0f;  // poses expected within [-extent, extent]^2

    static WorldMap make(uint64_t seed) {
        static constexpr float palette[6][3] = {
            {0.9f, 0.2f, 0.2f}, {0.2f, 0.8f, 0.3f}, {0.25f, 0.4f, 0.95f},
            {0.95f, 0.85f, 0.2f}, {0.85f, 0.3f, 0.85f}, {0.2f, 0.85f, 0.85f},
        };
        WorldMap map;
        Rng rng(seed ^ 0xa24baed4963ee407ull);
        std::uniform_real_distribution<float> upos(-6.0f, 6.0f);
        std::uniform_real_distribution<float> urad(0.8f, 1.8f);
        for (int i = 0; i < 6; ++i) {
            Disk d;
            d.x = upos(rng);
            d.y = upos(rng);
            d.r = urad(rng);
            for (int c = 0; c < 3; ++c) d.color[c] = palette[i][c];
            map.disks.push_back(d);
        }
        return map;
    }

    void color_at(float x, float y, float out[3]) const {
        // checkerboard ground, two-unit cells
        int cell = (static_cast<int>(std::floor(x / 2.0f)) +
                    static_cast<int>(std::floor(y / 2.0f))) & 1;
        float base = cell ? 0.32f : 0.22f;
        out[0] = base * 0.8f;
        out[1] = base;
        out[2] = base * 0.85f;
        for (const auto& d : disks) {
            float dx = x - d.x, dy = y - d.y;
            if (dx * dx + dy * dy <= d.r * d.r) {
                out[0] = d.color[0];
                out[1] = d.color[1];
                out[2] = d.color[2];
            }
        }
    }
};

struct RenderResult {
    Image image;
    bool clamped = false;  // pose was outside the map bounds
};

// Egocentric top-down view centered on the agent; forward (+x in the agent
// frame) points up. Pixel centers are symmetric about the agent so a pose
// rotation by pi is exactly a 180-degree image rotation.
inline RenderResult render_pose(const Pose& pose, const WorldMap& map, int side = 16,
                                float units_per_px = 0.5f) {
    RenderResult res;
    Pose p = pose;
    if (std::abs(p.x) > map.extent || std::abs(p.y) > map.extent) {
        p.x = std::clamp(p.x, -map.extent, map.extent);
        p.y = std::clamp(p.y, -map.extent, map.extent);
        res.clamped = true;
    }
    Image img(side, side);
    float c = std::cos(p.yaw), s = std::sin(p.yaw);
    float half = (side - 1) * 0.5f;
    for (int r = 0; r < side; ++r)
        for (int col = 0; col < side; ++col) {
            float fwd = (half - r) * units_per_px;   // up in the image
            float left = (half - col) * units_per_px;  // +y (left) on the image's left
            float wx = p.x + c * fwd - s * left;
            float wy = p.y + s * fwd + c * left;
            float rgb[3];
            map.color_at(wx, wy, rgb);
            img.at(r, col, 0) = rgb[0];
            img.at(r, col, 1) = rgb[1];
            img.at(r, col, 2) = rgb[2];
        }
    res.image = std::move(img);
    return res;
}

// ---------------------------------------------------------------- metrics

struct TrajectoryError {
    double ate = 0;
    double rpe = 0;
};

// ATE: RMS of per-step position distances (no alignment).
// RPE: RMS of the distances between consecutive-step position deltas.
inline TrajectoryError ate_rpe(const std::vector<Pose>& planned, const std::vector<Pose>& reference) {
    if (planned.size() != reference.size() || planned.size() < 2)
        throw std::invalid_argument("ate_rpe: trajectories must have equal length >= 2");
    size_t n = planned.size();
    double ate_acc = 0;
    for (size_t i = 0; i < n; ++i) {
        double dx = planned[i].x - reference[i].x;
        double dy = planned[i].y - reference[i].y;
        ate_acc += dx * dx + dy * dy;
    }
    double rpe_acc = 0;
    for (size_t i = 1; i < n; ++i) {
        double ddx = (planned[i].x - planned[i - 1].x) - (reference[i].x - reference[i - 1].x);
        double ddy = (planned[i].y - planned[i - 1].y) - (reference[i].y - reference[i - 1].y);
        rpe_acc += ddx * ddx + ddy * ddy;
    }
    return {std::sqrt(ate_acc / n), std::sqrt(rpe_acc / (n - 1))};
}

// ---------------------------------------------------------------- CEM

// Anything that can predict the final-frame latent of an action sequence.
struct RolloutScorer {
    virtual ~RolloutScorer() = default;
    virtual Tensor final_latent(const std::vector<ActionDelta>& actions) = 0;
};

// Ground-truth dynamics: step the true pose and encode the rendered view.
class OracleScorer : public RolloutScorer {
public:
    OracleScorer(Pose start, const WorldMap& map, const EncoderSpec& spec)
        : start_(start), map_(map), spec_(spec) {}

    Tensor final_latent(const std::vector<ActionDelta>& actions) override {
        Pose p = start_;
        for (const auto& a : actions) p = env_step(p, a);
        return patchify(render_pose(p, map_, spec_.image_side).image, spec_);
    }

private:
    Pose start_;
    const WorldMap& map_;
    EncoderSpec spec_;
};

struct CEMConfig {
    int horizon = 8;
    int samples = 120;
    int elites = 5;
    int iterations = 3;
    float init_mean[3] = {0.0f, 0.0f, 0.0f};
    float init_std[3] = {0.5f, 0.2f, 0.5f};
    float bound = 2.0f;  // per-component clamp
    uint64_t seed = 0;

    void validate() const {
        if (elites > samples) throw std::invalid_argument("cem: elites must not exceed samples");
        if (horizon < 1) throw std::invalid_argument("cem: horizon must be >= 1");
    }
};

struct CEMResult {
    std::vector<ActionDelta> plan;
    double best_score = 0;                 // latent-space squared distance
    std::vector<double> elite_mean_score;  // per iteration
};

inline double latent_sqdist(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return acc;
}

inline CEMResult cem_plan(RolloutScorer& model, const Tensor& goal_latent, const CEMConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed ^ 0xc3a5c85c97cb3127ull);
    int dims = cfg.horizon * 3;
    std::vector<float> mean(dims), stddev(dims);
    for (int t = 0; t < cfg.horizon; ++t)
        for (int c = 0; c < 3; ++c) {
            mean[t * 3 + c] = cfg.init_mean[c];
            stddev[t * 3 + c] = cfg.init_std[c];
        }

    std::normal_distribution<float> gauss(0.0f, 1.0f);
    CEMResult result;
    std::vector<std::vector<float>> elite_samples;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<std::pair<double, int>> scored(cfg.samples);
        std::vector<std::vector<float>> samples(cfg.samples);
        for (int s = 0; s < cfg.samples; ++s) {
            auto& flat = samples[s];
            flat.resize(dims);
            std::vector<ActionDelta> actions(cfg.horizon);
            for (int d = 0; d < dims; ++d)
                flat[d] = std::clamp(mean[d] + stddev[d] * gauss(rng), -cfg.bound, cfg.bound);
            for (int t = 0; t < cfg.horizon; ++t)
                actions[t] = {flat[t * 3], flat[t * 3 + 1], flat[t * 3 + 2]};
            scored[s] = {latent_sqdist(model.final_latent(actions), goal_latent), s};
        }
        std::sort(scored.begin(), scored.end());
        elite_samples.clear();
        double mean_score = 0;
        for (int e = 0; e < cfg.elites; ++e) {
            elite_samples.push_back(samples[scored[e].second]);
            mean_score += scored[e].first;
        }
        result.elite_mean_score.push_back(mean_score / cfg.elites);
        result.best_score = scored[0].first;
        // refit the Gaussian to the elites
        for (int d = 0; d < dims; ++d) {
            double m = 0;
            for (const auto& es : elite_samples) m += es[d];
            m /= cfg.elites;
            double var = 0;
            for (const auto& es : elite_samples) var += (es[d] - m) * (es[d] - m);
            var /= cfg.elites;
            mean[d] = static_cast<float>(m);
            stddev[d] = std::max(static_cast<float>(std::sqrt(var)), 1e-3f);
        }
    }
    result.plan.resize(cfg.horizon);
    for (int t = 0; t < cfg.horizon; ++t)
        result.plan[t] = {mean[t * 3], mean[t * 3 + 1], mean[t * 3 + 2]};
    return result;
}

}  // namespace uflow
