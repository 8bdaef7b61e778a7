#pragma once

// Dense row-major float32 tensor plus the seeded RNG used everywhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace uflow {

using Rng = std::mt19937_64;

struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
    }
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(numel_of(shape)))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    long long numel() const { return static_cast<long long>(data.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        if (shape.size() < 2) return 1;
        int c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void zero() { std::fill(data.begin(), data.end(), 0.0f); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    static Tensor randn(std::vector<int> s, Rng& rng, float std_dev = 1.0f) {
        Tensor t(std::move(s));
        std::normal_distribution<float> dist(0.0f, std_dev);
        for (auto& v : t.data) v = dist(rng);
        return t;
    }

    static Tensor uniform(std::vector<int> s, Rng& rng, float lo, float hi) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<float> dist(lo, hi);
        for (auto& v : t.data) v = dist(rng);
        return t;
    }
};

inline float dotf(const float* a, const float* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return static_cast<float>(acc);
}

// C (m x n) += A (m x k) * B (k x n)
inline void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = ai[p];
            if (av == 0.0f) continue;
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C (m x n) += A (m x k) * B^T, where B is (n x k)
inline void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += dotf(ai, b + static_cast<size_t>(j) * k, k);
    }
}

// C (m x n) += A^T * B, where A is (k x m), B is (k x n)
inline void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* ap = a + static_cast<size_t>(p) * m;
        const float* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = ap[i];
            if (av == 0.0f) continue;
            float* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace uflow
