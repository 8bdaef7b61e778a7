#pragma once

// Hybrid attention mask: strict causality for text and markers, bidirectional
// access within each visual frame.

#include "uflow/modality.hpp"

namespace uflow {

struct MaskSpec {
    int length = 0;
    std::vector<uint8_t> visual;  // 1 = visual token
    std::vector<int> frame_id;    // -1 for text and markers

    static MaskSpec from_sequence(const MixedSequence& seq) {
        MaskSpec m;
        m.length = seq.length();
        m.visual = seq.vision_mask;
        m.frame_id.resize(m.length, -1);
        for (int i = 0; i < m.length; ++i)
            if (seq.items[i].is_visual()) m.frame_id[i] = seq.items[i].frame_id;
        return m;
    }

    bool allowed(int i, int j) const {
        if (i < 0 || j < 0 || i >= length || j >= length)
            throw std::out_of_range("mask: position out of range");
        if (j <= i) return true;
        return visual[i] && visual[j] && frame_id[i] == frame_id[j];
    }

    // Text grid for golden-file tests: '#' allowed, '.' blocked; row = query.
    std::string dump() const {
        std::string out;
        out.reserve(static_cast<size_t>(length) * (length + 1));
        for (int i = 0; i < length; ++i) {
            for (int j = 0; j < length; ++j) out.push_back(allowed(i, j) ? '#' : '.');
            out.push_back('\n');
        }
        return out;
    }
};

struct AttentionConfig {
    int n_q_heads = 4;
    int n_kv_heads = 2;
    int head_dim = 16;
    float rope_base = 10000.0f;

    int q_dim() const { return n_q_heads * head_dim; }
    int kv_dim() const { return n_kv_heads * head_dim; }

    void validate() const {
        if (n_q_heads <= 0 || n_kv_heads <= 0 || head_dim <= 0)
            throw std::invalid_argument("attention: dims must be positive");
        if (n_q_heads % n_kv_heads != 0)
            throw std::invalid_argument("attention: query heads not divisible by kv heads");
        if (head_dim % 2 != 0) throw std::invalid_argument("attention: head_dim must be even");
    }
};

}  // namespace uflow
