#pragma once

// Mixed-modal sequence container, the stand-in frozen encoder (patchify /
// unpatchify), the action<->text codec, and PPM image IO.

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>

#include "uflow/vocab.hpp"

namespace uflow {

// What a sequence is asking of the model; used for loss bookkeeping and
// routing-analysis labels.
enum class TaskTag { Lm, Gen, Und };

// ---------------------------------------------------------------- images

struct Image {
    int h = 0, w = 0;
    std::vector<float> rgb;  // row-major, values in [0, 1]

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0.0f) {}
    float& at(int r, int c, int ch) { return rgb[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
    float at(int r, int c, int ch) const { return rgb[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
};

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("ppm: cannot write " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (float v : img.rgb) {
        float c = std::clamp(v, 0.0f, 1.0f);
        os.put(static_cast<char>(std::lround(c * 255.0f)));
    }
}

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ppm: cannot open " + path);
    std::string magic;
    int w, h, maxval;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw std::runtime_error("ppm: unsupported format");
    is.get();
    Image img(h, w);
    for (auto& v : img.rgb) v = static_cast<float>(static_cast<unsigned char>(is.get())) / 255.0f;
    return img;
}

// ---------------------------------------------------------------- encoder

// Stand-in for a frozen visual encoder. Raw mode flattens patches (scaled to
// [-1, 1]); projected mode additionally applies a fixed orthogonal rotation.
struct EncoderSpec {
    enum class Mode { RawPixel, Projected };
    Mode mode = Mode::RawPixel;
    int image_side = 16;
    int patch_side = 4;
    Tensor projection;  // (d_latent x d_latent), orthogonal; projected mode only

    int grid_side() const { return image_side / patch_side; }
    int tokens_per_frame() const { return grid_side() * grid_side(); }
    int d_latent() const { return patch_side * patch_side * 3; }

    void validate() const {
        if (image_side % patch_side != 0)
            throw std::invalid_argument("encoder: image side not divisible by patch side");
        if (mode == Mode::Projected) {
            int d = d_latent();
            if (projection.shape != std::vector<int>{d, d})
                throw std::invalid_argument("encoder: projection shape mismatch");
        }
    }

    static EncoderSpec make(Mode mode, int image_side, int patch_side, uint64_t seed = 0) {
        EncoderSpec spec;
        spec.mode = mode;
        spec.image_side = image_side;
        spec.patch_side = patch_side;
        if (mode == Mode::Projected) spec.projection = random_orthogonal(spec.d_latent(), seed);
        spec.validate();
        return spec;
    }

    // QR of a seeded Gaussian via Gram-Schmidt.
    static Tensor random_orthogonal(int d, uint64_t seed) {
        Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
        Tensor q = Tensor::randn({d, d}, rng);
        for (int i = 0; i < d; ++i) {
            float* qi = q.data.data() + static_cast<size_t>(i) * d;
            for (int rep = 0; rep < 2; ++rep) {  // reorthogonalize once for stability
                for (int j = 0; j < i; ++j) {
                    const float* qj = q.data.data() + static_cast<size_t>(j) * d;
                    float dot = dotf(qi, qj, d);
                    for (int c = 0; c < d; ++c) qi[c] -= dot * qj[c];
                }
            }
            float norm = std::sqrt(dotf(qi, qi, d));
            for (int c = 0; c < d; ++c) qi[c] /= norm;
        }
        return q;
    }
};

// Latent tokens in raster order; one row per patch.
inline Tensor patchify(const Image& img, const EncoderSpec& spec) {
    spec.validate();
    if (img.h != spec.image_side || img.w != spec.image_side)
        throw std::invalid_argument("patchify: image size does not match spec");
    int p = spec.patch_side, g = spec.grid_side(), d = spec.d_latent();
    Tensor out({g * g, d});
    for (int gr = 0; gr < g; ++gr)
        for (int gc = 0; gc < g; ++gc) {
            float* tok = out.data.data() + static_cast<size_t>(gr * g + gc) * d;
            int idx = 0;
            for (int r = 0; r < p; ++r)
                for (int c = 0; c < p; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        tok[idx++] = img.at(gr * p + r, gc * p + c, ch) * 2.0f - 1.0f;
        }
    if (spec.mode == EncoderSpec::Mode::Projected) {
        Tensor proj({g * g, d});
        gemm_nt(out.data.data(), spec.projection.data.data(), proj.data.data(), g * g, d, d);
        return proj;
    }
    return out;
}

inline Image unpatchify(const Tensor& tokens, const EncoderSpec& spec) {
    spec.validate();
    int p = spec.patch_side, g = spec.grid_side(), d = spec.d_latent();
    if (tokens.rows() != g * g || tokens.cols() != d)
        throw std::invalid_argument("unpatchify: token grid mismatch");
    const Tensor* flat = &tokens;
    Tensor unproj;
    if (spec.mode == EncoderSpec::Mode::Projected) {
        unproj = Tensor({g * g, d});
        gemm_nn(tokens.data.data(), spec.projection.data.data(), unproj.data.data(), g * g, d, d);
        flat = &unproj;
    }
    Image img(spec.image_side, spec.image_side);
    for (int gr = 0; gr < g; ++gr)
        for (int gc = 0; gc < g; ++gc) {
            const float* tok = flat->data.data() + static_cast<size_t>(gr * g + gc) * d;
            int idx = 0;
            for (int r = 0; r < p; ++r)
                for (int c = 0; c < p; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        img.at(gr * p + r, gc * p + c, ch) = (tok[idx++] + 1.0f) * 0.5f;
        }
    return img;
}

// ---------------------------------------------------------------- sequences

struct TokenItem {
    enum class Kind { Text, Boi, Eoi, Visual };
    Kind kind = Kind::Text;
    int id = -1;                // vocab index (text/markers)
    std::vector<float> latent;  // visual tokens only
    int frame_id = -1;          // visual tokens and markers of that frame

    static TokenItem text(int id) { return {Kind::Text, id, {}, -1}; }
    static TokenItem boi(int frame) { return {Kind::Boi, Vocab::kBoi, {}, frame}; }
    static TokenItem eoi(int frame) { return {Kind::Eoi, Vocab::kEoi, {}, frame}; }
    static TokenItem visual(std::vector<float> z, int frame) {
        return {Kind::Visual, -1, std::move(z), frame};
    }
    bool is_visual() const { return kind == Kind::Visual; }
};

struct FrameSpan {
    int begin = 0;  // first visual token position
    int end = 0;    // last visual token position, inclusive
};

// Parts fed to assemble_sequence.
struct SeqPart {
    std::vector<int> text;  // used when frame is empty
    Tensor frame;           // (tokens_per_frame x d_latent)
    bool is_frame = false;

    static SeqPart text_span(std::vector<int> ids) { return {std::move(ids), {}, false}; }
    static SeqPart frame_latents(Tensor t) { return {{}, std::move(t), true}; }
};

struct MixedSequence {
    std::vector<TokenItem> items;
    std::map<int, FrameSpan> frame_table;   // frame-id -> visual token span
    std::vector<uint8_t> vision_mask;       // 1 = visual token (markers are text)

    int length() const { return static_cast<int>(items.size()); }
    int frame_count() const { return static_cast<int>(frame_table.size()); }

    void push(TokenItem item) {
        if (item.is_visual()) {
            auto [it, fresh] = frame_table.try_emplace(item.frame_id, FrameSpan{length(), length()});
            if (!fresh) it->second.end = length();
        }
        vision_mask.push_back(item.is_visual() ? 1 : 0);
        items.push_back(std::move(item));
    }

    // Re-derive the frame table and mask from items; throws if malformed.
    void revalidate(int tokens_per_frame) {
        std::map<int, FrameSpan> table;
        std::vector<uint8_t> mask;
        int open_frame = -1;
        std::map<int, int> counts;
        for (int pos = 0; pos < length(); ++pos) {
            const TokenItem& it = items[pos];
            switch (it.kind) {
                case TokenItem::Kind::Boi:
                    if (open_frame >= 0) throw std::runtime_error("sequence: nested frame");
                    open_frame = it.frame_id;
                    table[open_frame] = {pos + 1, pos};
                    mask.push_back(0);
                    break;
                case TokenItem::Kind::Eoi:
                    if (open_frame < 0) throw std::runtime_error("sequence: stray EOI");
                    if (counts[open_frame] != tokens_per_frame)
                        throw std::runtime_error("sequence: frame size mismatch");
                    open_frame = -1;
                    mask.push_back(0);
                    break;
                case TokenItem::Kind::Visual:
                    if (open_frame < 0 || it.frame_id != open_frame)
                        throw std::runtime_error("sequence: visual token outside its frame");
                    table[open_frame].end = pos;
                    ++counts[open_frame];
                    mask.push_back(1);
                    break;
                case TokenItem::Kind::Text:
                    if (open_frame >= 0) throw std::runtime_error("sequence: text inside frame");
                    mask.push_back(0);
                    break;
            }
        }
        if (open_frame >= 0) throw std::runtime_error("sequence: unterminated frame");
        frame_table = std::move(table);
        vision_mask = std::move(mask);
    }
};

inline MixedSequence assemble_sequence(const std::vector<SeqPart>& parts, int tokens_per_frame) {
    if (parts.empty()) throw std::invalid_argument("assemble: empty input");
    MixedSequence seq;
    int next_frame = 0;
    for (const auto& part : parts) {
        if (part.is_frame) {
            if (part.frame.rows() != tokens_per_frame)
                throw std::invalid_argument("assemble: frame size mismatch");
            int f = next_frame++;
            seq.push(TokenItem::boi(f));
            int d = part.frame.cols();
            for (int i = 0; i < tokens_per_frame; ++i) {
                std::vector<float> z(part.frame.data.begin() + static_cast<size_t>(i) * d,
                                     part.frame.data.begin() + static_cast<size_t>(i + 1) * d);
                seq.push(TokenItem::visual(std::move(z), f));
            }
            seq.push(TokenItem::eoi(f));
        } else {
            for (int id : part.text) seq.push(TokenItem::text(id));
        }
    }
    seq.revalidate(tokens_per_frame);
    return seq;
}

// ---------------------------------------------------------------- actions

struct ActionDelta {
    float dx = 0, dy = 0, dyaw = 0;
};

inline std::string format_action(const ActionDelta& a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "act dx=%+.3f dy=%+.3f dyaw=%+.3f", a.dx, a.dy, a.dyaw);
    return buf;
}

inline std::vector<int> encode_action(const ActionDelta& a) {
    if (std::abs(a.dx) > 2.0f || std::abs(a.dy) > 2.0f || std::abs(a.dyaw) > 2.0f)
        throw std::invalid_argument("action: component out of bounds");
    return Vocab::encode(format_action(a));
}

inline ActionDelta decode_action(const std::string& text) {
    ActionDelta a;
    if (std::sscanf(text.c_str(), "act dx=%f dy=%f dyaw=%f", &a.dx, &a.dy, &a.dyaw) != 3)
        throw std::invalid_argument("action: malformed string: " + text);
    return a;
}

inline ActionDelta decode_action_tokens(const std::vector<int>& ids) {
    return decode_action(Vocab::decode(ids));
}

}  // namespace uflow
