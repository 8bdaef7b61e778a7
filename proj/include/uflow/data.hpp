#pragma once

// Procedural training data: toy text grammar, rendered image/caption pairs,
// short videos of a moving shape, and action-conditioned navigation samples.
// Every generator is a pure function of (spec, seed, index).

#include "uflow/worldsim.hpp"

namespace uflow {

enum class SourceTag { Text, Video, ImageText, Action };

inline const char* source_name(SourceTag s) {
    switch (s) {
        case SourceTag::Text: return "text";
        case SourceTag::Video: return "video";
        case SourceTag::ImageText: return "image_text";
        case SourceTag::Action: return "action";
    }
    return "?";
}

struct Sample {
    MixedSequence seq;
    SourceTag source = SourceTag::Text;
    TaskTag task = TaskTag::Lm;
    int cond_begin = -1;  // conditioning text span, inclusive begin
    int cond_end = -1;    // inclusive end; -1 when there is no condition
};

struct DataSpec {
    EncoderSpec encoder;
    WorldMap map;
    uint64_t world_seed = 0;
    int video_frames = 3;
    int text_sentences = 4;

    static DataSpec make(const EncoderSpec& enc, uint64_t world_seed = 0) {
        DataSpec d;
        d.encoder = enc;
        d.world_seed = world_seed;
        d.map = WorldMap::make(world_seed);
        return d;
    }
};

// ---------------------------------------------------------------- toy text

namespace toytext {
inline const std::vector<std::string>& colors() {
    static const std::vector<std::string> v = {"red", "green", "blue", "yellow", "pink", "cyan"};
    return v;
}
inline const std::vector<std::string>& shapes() {
    static const std::vector<std::string> v = {"square", "circle", "triangle", "star"};
    return v;
}
inline const std::vector<std::string>& verbs() {
    static const std::vector<std::string> v = {"moves", "slides", "jumps", "drifts"};
    return v;
}
inline const std::vector<std::string>& dirs() {
    static const std::vector<std::string> v = {"north", "south", "east", "west"};
    return v;
}

inline std::string sentence(Rng& rng) {
    auto pick = [&](const std::vector<std::string>& v) {
        return v[std::uniform_int_distribution<size_t>(0, v.size() - 1)(rng)];
    };
    return "the " + pick(colors()) + " " + pick(shapes()) + " " + pick(verbs()) + " " +
           pick(dirs()) + " . ";
}
}  // namespace toytext

inline Sample make_text_sample(const DataSpec& spec, uint64_t seed, uint64_t index) {
    Rng rng(seed ^ (index * 0x9e3779b97f4a7c15ull + 1));
    std::string text;
    for (int i = 0; i < spec.text_sentences; ++i) text += toytext::sentence(rng);
    std::vector<int> ids = Vocab::encode(text);
    ids.push_back(Vocab::kEot);
    Sample s;
    s.seq = assemble_sequence({SeqPart::text_span(ids)}, spec.encoder.tokens_per_frame());
    s.source = SourceTag::Text;
    s.task = TaskTag::Lm;
    return s;
}

// ---------------------------------------------------------------- toy images

// A colored shape on a dark canvas, positioned on the patch grid.
inline Image render_shape(const EncoderSpec& enc, int shape, int color, int gx, int gy) {
    static constexpr float palette[6][3] = {
        {0.9f, 0.15f, 0.15f}, {0.15f, 0.8f, 0.25f}, {0.2f, 0.35f, 0.9f},
        {0.9f, 0.85f, 0.15f}, {0.85f, 0.3f, 0.8f}, {0.15f, 0.8f, 0.8f},
    };
    Image img(enc.image_side, enc.image_side);
    for (auto& v : img.rgb) v = 0.08f;
    int p = enc.patch_side;
    float cx = (gx + 0.5f) * p, cy = (gy + 0.5f) * p;
    float radius = p * 0.9f;
    for (int r = 0; r < enc.image_side; ++r)
        for (int c = 0; c < enc.image_side; ++c) {
            float dx = c + 0.5f - cx, dy = r + 0.5f - cy;
            bool inside = false;
            switch (shape) {
                case 0: inside = std::max(std::abs(dx), std::abs(dy)) <= radius; break;       // square
                case 1: inside = dx * dx + dy * dy <= radius * radius; break;                 // circle
                case 2: inside = dy <= radius * 0.6f && std::abs(dx) <= (radius * 0.6f - dy); break;  // triangle
                case 3: inside = std::abs(dx) + std::abs(dy) <= radius; break;                // star (diamond)
            }
            if (inside)
                for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = palette[color][ch];
        }
    return img;
}

inline Sample make_image_text_sample(const DataSpec& spec, uint64_t seed, uint64_t index) {
    Rng rng(seed ^ (index * 0x9e3779b97f4a7c15ull + 2));
    const auto& enc = spec.encoder;
    int g = enc.grid_side();
    int shape = std::uniform_int_distribution<int>(0, 3)(rng);
    int color = std::uniform_int_distribution<int>(0, 5)(rng);
    int gx = std::uniform_int_distribution<int>(0, g - 1)(rng);
    int gy = std::uniform_int_distribution<int>(0, g - 1)(rng);
    bool t2i = std::uniform_int_distribution<int>(0, 1)(rng) == 0;

    std::string caption = "a " + toytext::colors()[color] + " " + toytext::shapes()[shape] +
                          " at " + std::to_string(gx) + " " + std::to_string(gy) + " .";
    Tensor latents = patchify(render_shape(enc, shape, color, gx, gy), enc);

    Sample s;
    s.source = SourceTag::ImageText;
    if (t2i) {
        std::vector<int> ids = Vocab::encode(caption);
        s.seq = assemble_sequence({SeqPart::text_span(ids), SeqPart::frame_latents(latents)},
                                  enc.tokens_per_frame());
        s.task = TaskTag::Gen;
        s.cond_begin = 0;
        s.cond_end = static_cast<int>(ids.size()) - 1;
    } else {
        std::vector<int> ids = Vocab::encode(caption);
        ids.push_back(Vocab::kEot);
        s.seq = assemble_sequence({SeqPart::frame_latents(latents), SeqPart::text_span(ids)},
                                  enc.tokens_per_frame());
        s.task = TaskTag::Und;
    }
    return s;
}

// ---------------------------------------------------------------- toy video

inline Sample make_video_sample(const DataSpec& spec, uint64_t seed, uint64_t index) {
    Rng rng(seed ^ (index * 0x9e3779b97f4a7c15ull + 3));
    const auto& enc = spec.encoder;
    int g = enc.grid_side();
    int shape = std::uniform_int_distribution<int>(0, 3)(rng);
    int color = std::uniform_int_distribution<int>(0, 5)(rng);
    int gx = std::uniform_int_distribution<int>(0, g - 1)(rng);
    int gy = std::uniform_int_distribution<int>(0, g - 1)(rng);
    int dir = std::uniform_int_distribution<int>(0, 3)(rng);
    static constexpr int step[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

    std::vector<SeqPart> parts;
    for (int f = 0; f < spec.video_frames; ++f) {
        parts.push_back(SeqPart::frame_latents(patchify(render_shape(enc, shape, color, gx, gy), enc)));
        gx = (gx + step[dir][0] + g) % g;
        gy = (gy + step[dir][1] + g) % g;
    }
    Sample s;
    s.seq = assemble_sequence(parts, enc.tokens_per_frame());
    s.source = SourceTag::Video;
    s.task = TaskTag::Gen;
    return s;
}

// ---------------------------------------------------------------- navigation

struct NavSample {
    std::vector<Pose> context_poses;  // 4 poses
    ActionDelta action;
    Pose target_pose;
};

inline NavSample make_nav_episode(const DataSpec& spec, uint64_t seed, uint64_t index) {
    Rng rng(seed ^ (index * 0x9e3779b97f4a7c15ull + 4));
    std::uniform_real_distribution<float> upos(-4.0f, 4.0f);
    std::uniform_real_distribution<float> uyaw(-static_cast<float>(M_PI), static_cast<float>(M_PI));
    Pose p{upos(rng), upos(rng), uyaw(rng)};
    static constexpr char keys[4] = {'W', 'A', 'S', 'D'};
    NavSample nav;
    for (int i = 0; i < 4; ++i) {
        nav.context_poses.push_back(p);
        if (i < 3) p = env_step(p, wasd_action(keys[std::uniform_int_distribution<int>(0, 3)(rng)]));
    }
    nav.action = wasd_action(keys[std::uniform_int_distribution<int>(0, 3)(rng)]);
    nav.target_pose = env_step(nav.context_poses.back(), nav.action);
    return nav;
}

inline Sample make_action_sample(const DataSpec& spec, uint64_t seed, uint64_t index) {
    NavSample nav = make_nav_episode(spec, seed, index);
    const auto& enc = spec.encoder;
    std::vector<SeqPart> parts;
    for (const auto& pose : nav.context_poses)
        parts.push_back(SeqPart::frame_latents(patchify(render_pose(pose, spec.map, enc.image_side).image, enc)));
    std::vector<int> act_ids = encode_action(nav.action);
    parts.push_back(SeqPart::text_span(act_ids));
    parts.push_back(SeqPart::frame_latents(patchify(render_pose(nav.target_pose, spec.map, enc.image_side).image, enc)));

    Sample s;
    s.seq = assemble_sequence(parts, enc.tokens_per_frame());
    s.source = SourceTag::Action;
    s.task = TaskTag::Gen;
    // the action text span conditions the target frame
    int ctx_len = 4 * (enc.tokens_per_frame() + 2);
    s.cond_begin = ctx_len;
    s.cond_end = ctx_len + static_cast<int>(act_ids.size()) - 1;
    return s;
}

// ---------------------------------------------------------------- mixture

struct MixtureSpec {
    float weights[4] = {0.25f, 0.25f, 0.25f, 0.25f};  // text, video, image_text, action
    uint64_t source_seeds[4] = {11, 22, 33, 44};

    void validate() const {
        float sum = 0;
        for (float w : weights) {
            if (w < 0) throw std::invalid_argument("mixture: negative weight");
            sum += w;
        }
        if (sum <= 0) throw std::invalid_argument("mixture: all-zero weights");
    }

    MixtureSpec normalized() const {
        validate();
        MixtureSpec out = *this;
        float sum = out.weights[0] + out.weights[1] + out.weights[2] + out.weights[3];
        for (auto& w : out.weights) w /= sum;
        return out;
    }
};

inline Sample make_sample(const DataSpec& spec, SourceTag source, uint64_t seed, uint64_t index) {
    switch (source) {
        case SourceTag::Text: return make_text_sample(spec, seed, index);
        case SourceTag::Video: return make_video_sample(spec, seed, index);
        case SourceTag::ImageText: return make_image_text_sample(spec, seed, index);
        case SourceTag::Action: return make_action_sample(spec, seed, index);
    }
    throw std::logic_error("make_sample: bad source");
}

// Truncate to max_len at item granularity (frames are atomic; a frame that no
// longer fits is dropped) and right-pad with the pad token.
inline void fit_to_length(Sample& s, int max_len, int tokens_per_frame) {
    if (s.seq.length() > max_len) {
        MixedSequence cut;
        int pos = 0;
        while (pos < s.seq.length()) {
            const TokenItem& it = s.seq.items[pos];
            if (it.kind == TokenItem::Kind::Boi) {
                if (pos + tokens_per_frame + 2 > max_len) break;
                for (int j = 0; j <= tokens_per_frame + 1; ++j) cut.push(s.seq.items[pos + j]);
                pos += tokens_per_frame + 2;
            } else {
                if (pos + 1 > max_len) break;
                cut.push(it);
                ++pos;
            }
        }
        s.seq = std::move(cut);
        if (s.cond_end >= s.seq.length()) s.cond_begin = s.cond_end = -1;
    }
    while (s.seq.length() < max_len) s.seq.push(TokenItem::text(Vocab::kPad));
    s.seq.revalidate(tokens_per_frame);
}

inline std::vector<Sample> sample_batch(const DataSpec& spec, const MixtureSpec& mix, Rng& rng,
                                        int batch_size, int max_len, uint64_t index_base = 0) {
    MixtureSpec m = mix.normalized();
    std::vector<Sample> out;
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);
    for (int b = 0; b < batch_size; ++b) {
        float u = u01(rng);
        int src = 0;
        float acc = 0;
        for (int i = 0; i < 4; ++i) {
            acc += m.weights[i];
            if (u < acc) {
                src = i;
                break;
            }
        }
        uint64_t index = index_base + rng();
        Sample s = make_sample(spec, static_cast<SourceTag>(src), m.source_seeds[src], index);
        fit_to_length(s, max_len, spec.encoder.tokens_per_frame());
        out.push_back(std::move(s));
    }
    return out;
}

// Line-delimited dataset manifest: source tag, seed, index.
inline void write_manifest(const std::string& path, const std::vector<std::tuple<SourceTag, uint64_t, uint64_t>>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("manifest: cannot write " + path);
    for (const auto& [src, seed, index] : records)
        os << source_name(src) << " " << seed << " " << index << "\n";
}

}  // namespace uflow
