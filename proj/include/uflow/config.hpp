#pragma once

// Flat typed key=value configuration with dotted section names. Unknown keys
// are hard errors so that typos fail fast.

#include <array>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "uflow/checkpoint.hpp"
#include "uflow/objectives.hpp"

namespace uflow {

class ConfigMap {
public:
    static ConfigMap parse(std::istream& is) {
        ConfigMap cm;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": expected key = value");
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) +
                                                      ": empty key");
            if (cm.kv_.count(key))
                throw std::runtime_error("config: duplicate key: " + key);
            cm.kv_[key] = value;
        }
        return cm;
    }

    static ConfigMap parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open " + path);
        return parse(is);
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        used_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? def : it->second;
    }
    long long get_int(const std::string& key, long long def) const {
        return parse_num<long long>(key, def, "integer");
    }
    double get_double(const std::string& key, double def) const {
        return parse_num<double>(key, def, "number");
    }
    uint64_t get_u64(const std::string& key, uint64_t def) const {
        return parse_num<uint64_t>(key, def, "unsigned integer");
    }
    bool get_bool(const std::string& key, bool def) const {
        used_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::runtime_error("config: key " + key + ": expected true/false, got " + it->second);
    }

    // Every key must have been consumed by a getter; leftovers are typos.
    void reject_unknown() const {
        std::string unknown;
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
        if (!unknown.empty()) throw std::runtime_error("config: unknown keys: " + unknown);
    }

    // Canonical sorted text form; digest input and run-manifest payload.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    template <class T>
    T parse_num(const std::string& key, T def, const char* what) const {
        used_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        std::istringstream ss(it->second);
        T v{};
        ss >> v;
        if (ss.fail() || !ss.eof())
            throw std::runtime_error("config: key " + key + ": expected " + what + ", got " +
                                     it->second);
        return v;
    }

    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> used_;
};

// ---------------------------------------------------------------- experiment

struct ExperimentConfig {
    BackboneConfig model;
    EncoderSpec::Mode encoder_mode = EncoderSpec::Mode::RawPixel;
    int image_side = 16, patch_side = 4;
    uint64_t encoder_seed = 0;
    uint64_t world_seed = 0;
    int video_frames = 3, text_sentences = 4;
    MixtureSpec mixture;
    LossWeights weights;
    bool centering = false;
    float centering_alpha = 0.5f, centering_momentum = 0.99f;
    FlowMode flow_mode = FlowMode::VPred;
    float shift = 3.0f;
    float cond_dropout = 0.1f;
    ScheduleConfig schedule;
    AdamConfig adam;
    int steps = 200, batch = 4, seq_len = 96;
    uint64_t seed = 0;
    int eval_every = 100, eval_samples = 8, checkpoint_every = 0;  // 0 = final only
    uint64_t heldout_seed = 0x48454c44ull;  // disjoint from the training streams

    EncoderSpec encoder() const {
        return EncoderSpec::make(encoder_mode, image_side, patch_side, encoder_seed);
    }
    DataSpec data_spec() const {
        DataSpec d = DataSpec::make(encoder(), world_seed);
        d.video_frames = video_frames;
        d.text_sentences = text_sentences;
        return d;
    }
    long long total_tokens() const {
        return static_cast<long long>(steps) * batch * seq_len;
    }

    void validate() const {
        model.validate();
        encoder().validate();
        mixture.validate();
        weights.validate();
        schedule.validate();
        if (steps < 1 || batch < 1 || seq_len < 1)
            throw std::invalid_argument("experiment: steps/batch/seq_len must be positive");
        if (cond_dropout < 0.0f || cond_dropout > 1.0f)
            throw std::invalid_argument("experiment: cond_dropout out of [0,1]");
        if (shift < 1.0f) throw std::invalid_argument("experiment: shift must be >= 1");
        if (eval_every < 1 || eval_samples < 1)
            throw std::invalid_argument("experiment: eval cadence must be positive");
        EncoderSpec enc = encoder();
        if (model.d_latent != enc.d_latent() || model.tokens_per_frame != enc.tokens_per_frame())
            throw std::invalid_argument(
                "experiment: model latent geometry must match the encoder (d_latent " +
                std::to_string(enc.d_latent()) + ", tokens_per_frame " +
                std::to_string(enc.tokens_per_frame()) + ")");
    }

    static ExperimentConfig from_map(const ConfigMap& cm) {
        ExperimentConfig c;
        c.image_side = static_cast<int>(cm.get_int("encoder.image_side", c.image_side));
        c.patch_side = static_cast<int>(cm.get_int("encoder.patch_side", c.patch_side));
        std::string em = cm.get_string("encoder.mode", "raw");
        if (em == "raw") c.encoder_mode = EncoderSpec::Mode::RawPixel;
        else if (em == "projected") c.encoder_mode = EncoderSpec::Mode::Projected;
        else throw std::runtime_error("config: encoder.mode must be raw|projected");
        c.encoder_seed = cm.get_u64("encoder.seed", c.encoder_seed);

        EncoderSpec enc = EncoderSpec::make(c.encoder_mode, c.image_side, c.patch_side, 0);
        c.model.d_model = static_cast<int>(cm.get_int("model.d_model", 64));
        c.model.n_layers = static_cast<int>(cm.get_int("model.n_layers", 4));
        c.model.attn.n_q_heads = static_cast<int>(cm.get_int("model.n_q_heads", 4));
        c.model.attn.n_kv_heads = static_cast<int>(cm.get_int("model.n_kv_heads", 2));
        c.model.attn.head_dim = static_cast<int>(cm.get_int("model.head_dim", 16));
        c.model.attn.rope_base = static_cast<float>(cm.get_double("model.rope_base", 10000.0));
        c.model.ffn_multiplier = static_cast<float>(cm.get_double("model.ffn_multiplier", 1.5));
        c.model.vocab = static_cast<int>(cm.get_int("model.vocab", Vocab::kSize));
        c.model.d_latent = enc.d_latent();
        c.model.tokens_per_frame = enc.tokens_per_frame();

        std::string fm = cm.get_string("model.ffn_mode", "shared");
        if (fm == "shared") c.model.ffn_mode = FfnMode::Shared;
        else if (fm == "per_modality") c.model.ffn_mode = FfnMode::PerModality;
        else if (fm == "moe") c.model.ffn_mode = FfnMode::MoE;
        else throw std::runtime_error("config: model.ffn_mode must be shared|per_modality|moe");
        std::string am = cm.get_string("model.attn_mode", "shared");
        if (am == "shared") c.model.attn_mode = AttnMode::Shared;
        else if (am == "per_modality") c.model.attn_mode = AttnMode::PerModality;
        else throw std::runtime_error("config: model.attn_mode must be shared|per_modality");

        c.model.moe.experts = static_cast<int>(cm.get_int("moe.experts", 8));
        c.model.moe.d_expert = static_cast<int>(cm.get_int("moe.d_expert", 32));
        c.model.moe.top_k = static_cast<int>(cm.get_int("moe.top_k", 2));
        c.model.moe.balance_coeff = static_cast<float>(cm.get_double("moe.balance_coeff", 0.01));
        std::string sm = cm.get_string("moe.shared", "none");
        if (sm == "none") c.model.moe.shared_mode = SharedExpertMode::None;
        else if (sm == "global") c.model.moe.shared_mode = SharedExpertMode::Global;
        else if (sm == "per_modality") c.model.moe.shared_mode = SharedExpertMode::PerModality;
        else throw std::runtime_error("config: moe.shared must be none|global|per_modality");

        c.world_seed = cm.get_u64("data.world_seed", 0);
        c.video_frames = static_cast<int>(cm.get_int("data.video_frames", 3));
        c.text_sentences = static_cast<int>(cm.get_int("data.text_sentences", 4));
        c.mixture.weights[0] = static_cast<float>(cm.get_double("data.w_text", 0.25));
        c.mixture.weights[1] = static_cast<float>(cm.get_double("data.w_video", 0.25));
        c.mixture.weights[2] = static_cast<float>(cm.get_double("data.w_image_text", 0.25));
        c.mixture.weights[3] = static_cast<float>(cm.get_double("data.w_action", 0.25));
        for (int i = 0; i < 4; ++i)
            c.mixture.source_seeds[i] = cm.get_u64(
                std::string("data.seed_") +
                    std::array<const char*, 4>{"text", "video", "image_text", "action"}[i],
                c.mixture.source_seeds[i]);

        c.weights.lambda_lm = static_cast<float>(cm.get_double("loss.lambda_lm", 1.0));
        c.weights.lambda_flow = static_cast<float>(cm.get_double("loss.lambda_flow", 3.0));
        c.centering = cm.get_bool("loss.centering", false);
        c.centering_alpha = static_cast<float>(cm.get_double("loss.centering_alpha", 0.5));
        c.centering_momentum = static_cast<float>(cm.get_double("loss.centering_momentum", 0.99));
        std::string flm = cm.get_string("loss.flow_mode", "v");
        if (flm == "v") c.flow_mode = FlowMode::VPred;
        else if (flm == "x") c.flow_mode = FlowMode::XPred;
        else throw std::runtime_error("config: loss.flow_mode must be v|x");
        c.shift = static_cast<float>(cm.get_double("loss.shift", 3.0));
        c.cond_dropout = static_cast<float>(cm.get_double("loss.cond_dropout", 0.1));

        c.steps = static_cast<int>(cm.get_int("train.steps", 200));
        c.batch = static_cast<int>(cm.get_int("train.batch", 4));
        c.seq_len = static_cast<int>(cm.get_int("train.seq_len", 96));
        c.seed = cm.get_u64("train.seed", 0);
        c.eval_every = static_cast<int>(cm.get_int("train.eval_every", 100));
        c.eval_samples = static_cast<int>(cm.get_int("train.eval_samples", 8));
        c.checkpoint_every = static_cast<int>(cm.get_int("train.checkpoint_every", 0));
        c.heldout_seed = cm.get_u64("train.heldout_seed", c.heldout_seed);

        c.schedule.peak_lr = static_cast<float>(cm.get_double("schedule.peak_lr", 3e-4));
        long long default_warmup = std::min<long long>(1000, std::max<long long>(1, c.steps / 10));
        c.schedule.warmup_steps =
            static_cast<int>(cm.get_int("schedule.warmup_steps", default_warmup));
        c.schedule.total_steps = c.steps;
        c.schedule.floor_fraction =
            static_cast<float>(cm.get_double("schedule.floor_fraction", 0.05));

        c.adam.beta1 = static_cast<float>(cm.get_double("adam.beta1", 0.9));
        c.adam.beta2 = static_cast<float>(cm.get_double("adam.beta2", 0.95));
        c.adam.eps = static_cast<float>(cm.get_double("adam.eps", 1e-8));
        c.adam.weight_decay = static_cast<float>(cm.get_double("adam.weight_decay", 0.1));

        cm.reject_unknown();
        // environment override wins over the file
        if (const char* env = std::getenv("UFL_SEED")) c.seed = std::strtoull(env, nullptr, 10);
        c.validate();
        return c;
    }

    // Canonical text of every effective field; digested into checkpoints.
    std::string canonical() const;
    uint64_t digest() const { return fnv1a(canonical()); }
};

inline std::string ExperimentConfig::canonical() const {
    std::ostringstream os;
    os << "adam.beta1 = " << adam.beta1 << "\n"
       << "adam.beta2 = " << adam.beta2 << "\n"
       << "adam.eps = " << adam.eps << "\n"
       << "adam.weight_decay = " << adam.weight_decay << "\n"
       << "data.seed_action = " << mixture.source_seeds[3] << "\n"
       << "data.seed_image_text = " << mixture.source_seeds[2] << "\n"
       << "data.seed_text = " << mixture.source_seeds[0] << "\n"
       << "data.seed_video = " << mixture.source_seeds[1] << "\n"
       << "data.text_sentences = " << text_sentences << "\n"
       << "data.video_frames = " << video_frames << "\n"
       << "data.w_action = " << mixture.weights[3] << "\n"
       << "data.w_image_text = " << mixture.weights[2] << "\n"
       << "data.w_text = " << mixture.weights[0] << "\n"
       << "data.w_video = " << mixture.weights[1] << "\n"
       << "data.world_seed = " << world_seed << "\n"
       << "encoder.image_side = " << image_side << "\n"
       << "encoder.mode = " << (encoder_mode == EncoderSpec::Mode::RawPixel ? "raw" : "projected")
       << "\n"
       << "encoder.patch_side = " << patch_side << "\n"
       << "encoder.seed = " << encoder_seed << "\n"
       << "loss.centering = " << (centering ? "true" : "false") << "\n"
       << "loss.centering_alpha = " << centering_alpha << "\n"
       << "loss.centering_momentum = " << centering_momentum << "\n"
       << "loss.cond_dropout = " << cond_dropout << "\n"
       << "loss.flow_mode = " << (flow_mode == FlowMode::VPred ? "v" : "x") << "\n"
       << "loss.lambda_flow = " << weights.lambda_flow << "\n"
       << "loss.lambda_lm = " << weights.lambda_lm << "\n"
       << "loss.shift = " << shift << "\n"
       << "model.attn_mode = " << (model.attn_mode == AttnMode::Shared ? "shared" : "per_modality")
       << "\n"
       << "model.d_model = " << model.d_model << "\n"
       << "model.ffn_mode = "
       << (model.ffn_mode == FfnMode::Shared
               ? "shared"
               : model.ffn_mode == FfnMode::PerModality ? "per_modality" : "moe")
       << "\n"
       << "model.ffn_multiplier = " << model.ffn_multiplier << "\n"
       << "model.head_dim = " << model.attn.head_dim << "\n"
       << "model.n_kv_heads = " << model.attn.n_kv_heads << "\n"
       << "model.n_layers = " << model.n_layers << "\n"
       << "model.n_q_heads = " << model.attn.n_q_heads << "\n"
       << "model.rope_base = " << model.attn.rope_base << "\n"
       << "model.vocab = " << model.vocab << "\n"
       << "moe.balance_coeff = " << model.moe.balance_coeff << "\n"
       << "moe.d_expert = " << model.moe.d_expert << "\n"
       << "moe.experts = " << model.moe.experts << "\n"
       << "moe.shared = "
       << (model.moe.shared_mode == SharedExpertMode::None
               ? "none"
               : model.moe.shared_mode == SharedExpertMode::Global ? "global" : "per_modality")
       << "\n"
       << "moe.top_k = " << model.moe.top_k << "\n"
       << "schedule.floor_fraction = " << schedule.floor_fraction << "\n"
       << "schedule.peak_lr = " << schedule.peak_lr << "\n"
       << "schedule.warmup_steps = " << schedule.warmup_steps << "\n"
       << "train.batch = " << batch << "\n"
       << "train.checkpoint_every = " << checkpoint_every << "\n"
       << "train.eval_every = " << eval_every << "\n"
       << "train.eval_samples = " << eval_samples << "\n"
       << "train.heldout_seed = " << heldout_seed << "\n"
       << "train.seed = " << seed << "\n"
       << "train.seq_len = " << seq_len << "\n"
       << "train.steps = " << steps << "\n";
    return os.str();
}

}  // namespace uflow
