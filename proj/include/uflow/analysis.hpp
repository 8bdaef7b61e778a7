#pragma once

// MoE interpretability (specialization scores, timestep CV, task routing
// correlation) and scaling-law estimation (FLOP accounting, IsoFLOP parabolas,
// power laws, saturating fits). Everything here computes in double precision.

#include <optional>

#include "uflow/backbone.hpp"

namespace uflow {

// ---------------------------------------------------------------- expert stats

struct ExpertStats {
    int n_experts = 0;
    int k = 0;
    std::vector<long long> count_text, count_img;  // per-expert selections
    long long tokens_text = 0, tokens_img = 0;

    // layer = -1 aggregates all layers
    static ExpertStats from_records(const std::vector<RoutingRecord>& records, int n_experts,
                                    int layer = -1) {
        ExpertStats st;
        st.n_experts = n_experts;
        st.count_text.assign(n_experts, 0);
        st.count_img.assign(n_experts, 0);
        for (const auto& r : records) {
            if (layer >= 0 && r.layer != layer) continue;
            st.k = static_cast<int>(r.experts.size());
            auto& counts = r.modality == 'v' ? st.count_img : st.count_text;
            auto& tokens = r.modality == 'v' ? st.tokens_img : st.tokens_text;
            ++tokens;
            for (int e : r.experts) {
                if (e < 0 || e >= n_experts) throw std::out_of_range("expert id out of range");
                ++counts[e];
            }
        }
        return st;
    }
};

inline double selection_rate(const ExpertStats& st, int expert, char modality) {
    long long n = modality == 'v' ? st.tokens_img : st.tokens_text;
    if (n <= 0) throw std::invalid_argument("selection_rate: no tokens for modality");
    long long c = modality == 'v' ? st.count_img.at(expert) : st.count_text.at(expert);
    return static_cast<double>(c) / (static_cast<double>(n) * st.k);
}

// (R_text - R_img) / (R_text + R_img); nullopt marks a dead expert.
inline std::optional<double> specialization_score(const ExpertStats& st, int expert) {
    double rt = selection_rate(st, expert, 't');
    double ri = selection_rate(st, expert, 'v');
    if (rt + ri == 0.0) return std::nullopt;
    return (rt - ri) / (rt + ri);
}

enum class ExpertClass { Text, Vision, Multimodal };

inline ExpertClass classify_expert(double score) {
    if (score < -1.0 || score > 1.0) throw std::invalid_argument("classify: score out of [-1,1]");
    if (score > 0.5) return ExpertClass::Text;
    if (score < -0.5) return ExpertClass::Vision;
    return ExpertClass::Multimodal;
}

inline const char* expert_class_name(ExpertClass c) {
    switch (c) {
        case ExpertClass::Text: return "text";
        case ExpertClass::Vision: return "vision";
        case ExpertClass::Multimodal: return "multimodal";
    }
    return "?";
}

// ---------------------------------------------------------------- timestep CV

// Per-expert coefficient of variation of selection rates across timestep bins.
// Only visual records with a timestep bin participate; empty bins count as
// zero-rate bins; experts never selected return nullopt.
inline std::vector<std::optional<double>> timestep_cv(const std::vector<RoutingRecord>& records,
                                                      int n_experts, int bins = 10) {
    std::vector<std::vector<long long>> counts(n_experts, std::vector<long long>(bins, 0));
    std::vector<long long> bin_tokens(bins, 0);
    int k = 1;
    for (const auto& r : records) {
        if (r.modality != 'v' || r.timestep_bin < 0) continue;
        if (r.timestep_bin >= bins) throw std::out_of_range("timestep_cv: bin out of range");
        k = static_cast<int>(r.experts.size());
        ++bin_tokens[r.timestep_bin];
        for (int e : r.experts) ++counts.at(e)[r.timestep_bin];
    }
    std::vector<std::optional<double>> out(n_experts);
    for (int e = 0; e < n_experts; ++e) {
        std::vector<double> rates(bins, 0.0);
        for (int b = 0; b < bins; ++b)
            if (bin_tokens[b] > 0)
                rates[b] = static_cast<double>(counts[e][b]) /
                           (static_cast<double>(bin_tokens[b]) * k);
        double mean = 0;
        for (double r : rates) mean += r;
        mean /= bins;
        if (mean == 0.0) continue;
        double var = 0;
        for (double r : rates) var += (r - mean) * (r - mean);
        var /= bins;
        out[e] = std::sqrt(var) / mean;
    }
    return out;
}

// ---------------------------------------------------------------- correlation

inline std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: length mismatch");
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return std::nullopt;  // undefined for constant vectors
    return num / std::sqrt(va * vb);
}

// Pearson correlation of per-expert selection-rate vectors at one layer.
inline std::optional<double> routing_correlation(const std::vector<RoutingRecord>& a,
                                                 const std::vector<RoutingRecord>& b,
                                                 int n_experts, int layer) {
    auto rates = [&](const std::vector<RoutingRecord>& recs) {
        std::vector<double> r(n_experts, 0.0);
        long long total = 0;
        int k = 1;
        for (const auto& rec : recs) {
            if (rec.layer != layer) continue;
            ++total;
            k = static_cast<int>(rec.experts.size());
            for (int e : rec.experts) r.at(e) += 1.0;
        }
        if (total == 0) throw std::invalid_argument("routing_correlation: no records at layer");
        for (auto& v : r) v /= static_cast<double>(total) * k;
        return r;
    };
    return pearson(rates(a), rates(b));
}

// ---------------------------------------------------------------- scaling

inline double flops(double n_active, double d_tokens) {
    if (n_active <= 0 || d_tokens <= 0) throw std::invalid_argument("flops: inputs must be positive");
    return 6.0 * n_active * d_tokens;
}

struct ScalingPoint {
    double n = 0;     // parameters (active for MoE)
    double d = 0;     // tokens
    double c = 0;     // FLOPs
    double loss = 0;

    void validate() const {
        if (n <= 0 || d <= 0 || c <= 0 || loss <= 0)
            throw std::invalid_argument("scaling point: fields must be positive");
        double expect = flops(n, d);
        if (std::abs(c - expect) > 0.01 * expect)
            throw std::invalid_argument("scaling point: C deviates from 6ND by more than 1%");
    }
};

inline void write_scaling_csv(std::ostream& os, const std::vector<ScalingPoint>& pts) {
    os << "n,d,c,loss\n";
    char buf[160];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g\n", p.n, p.d, p.c, p.loss);
        os << buf;
    }
}

inline std::vector<ScalingPoint> read_scaling_csv(std::istream& is) {
    std::vector<ScalingPoint> out;
    std::string line;
    if (!std::getline(is, line) || line != "n,d,c,loss")
        throw std::runtime_error("scaling csv: bad header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ScalingPoint p;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &p.n, &p.d, &p.c, &p.loss) != 4)
            throw std::runtime_error("scaling csv: bad row: " + line);
        p.validate();
        out.push_back(p);
    }
    return out;
}

enum class FitKind { Parabola, Power, Saturating };

struct FitResult {
    FitKind kind = FitKind::Power;
    std::vector<double> coefficients;
    double log_mse = 0;
};

namespace detail {
// least squares y = b0 + b1 x
inline std::pair<double, double> linreg(const std::vector<double>& x, const std::vector<double>& y) {
    double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw std::invalid_argument("linreg: degenerate inputs");
    double b1 = (n * sxy - sx * sy) / denom;
    double b0 = (sy - b1 * sx) / n;
    return {b0, b1};
}
}  // namespace detail

// Quadratic fit in log N for one compute budget; returns N at the vertex.
inline double isoflop_vertex(const std::vector<std::pair<double, double>>& logn_loss) {
    std::vector<double> xs;
    for (const auto& [x, y] : logn_loss)
        if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
    if (xs.size() < 3) throw std::invalid_argument("isoflop: need >= 3 distinct model sizes");

    // center x for conditioning, then solve the 3x3 normal equations
    double xm = 0;
    for (const auto& [x, y] : logn_loss) xm += x;
    xm /= logn_loss.size();
    double s[5] = {0, 0, 0, 0, 0};  // sums of x^0..x^4
    double t[3] = {0, 0, 0};        // sums of y x^0..x^2
    for (const auto& [xr, y] : logn_loss) {
        double x = xr - xm, p = 1;
        for (int i = 0; i < 5; ++i) {
            s[i] += p;
            if (i < 3) t[i] += y * p;
            p *= x;
        }
    }
    // solve [s0 s1 s2; s1 s2 s3; s2 s3 s4] [c0 c1 c2]^T = t via Cramer
    auto det3 = [](double a, double b, double c, double d, double e, double f, double g, double h,
                   double i) { return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g); };
    double D = det3(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]);
    if (std::abs(D) < 1e-12) throw std::runtime_error("isoflop: degenerate quadratic fit");
    double c1 = det3(s[0], t[0], s[2], s[1], t[1], s[3], s[2], t[2], s[4]) / D;
    double c2 = det3(s[0], s[1], t[0], s[1], s[2], t[1], s[2], s[3], t[2]) / D;
    if (c2 <= 0) throw std::runtime_error("isoflop: parabola is not convex");
    return std::exp(xm - c1 / (2.0 * c2));
}

struct PowerLawFit {
    double a = 0;          // N_opt exponent
    double b = 0;          // 1 - a
    double prefactor = 0;  // N_opt = prefactor * C^a
};

inline PowerLawFit powerlaw_fit(const std::vector<std::pair<double, double>>& c_nopt) {
    if (c_nopt.size() < 2) throw std::invalid_argument("powerlaw: need >= 2 budgets");
    std::vector<double> x, y;
    for (const auto& [c, n] : c_nopt) {
        if (c <= 0 || n <= 0) throw std::invalid_argument("powerlaw: inputs must be positive");
        x.push_back(std::log(c));
        y.push_back(std::log(n));
    }
    auto [b0, b1] = detail::linreg(x, y);
    return {b1, 1.0 - b1, std::exp(b0)};
}

struct SaturatingFit {
    double a = 0;      // prefactor A
    double alpha = 0;  // exponent
    double e = 0;      // irreducible loss
    double log_mse = 0;
};

inline std::vector<double> default_e_grid(const std::vector<std::pair<double, double>>& c_loss,
                                          int size = 64) {
    double min_loss = c_loss[0].second;
    for (const auto& [c, l] : c_loss) min_loss = std::min(min_loss, l);
    double top = 0.99 * min_loss;
    std::vector<double> grid = {0.0};
    for (int i = 0; i < size - 1; ++i)
        grid.push_back(top * std::pow(1e-4, 1.0 - static_cast<double>(i) / (size - 2)));
    return grid;
}

// L(C) = A C^-alpha + E; E chosen from the grid by log-space MSE.
inline SaturatingFit saturating_fit(const std::vector<std::pair<double, double>>& c_loss,
                                    std::vector<double> e_grid = {}) {
    if (c_loss.size() < 3) throw std::invalid_argument("saturating: need >= 3 points");
    if (e_grid.empty()) e_grid = default_e_grid(c_loss);
    std::optional<SaturatingFit> best;
    for (double e : e_grid) {
        bool feasible = true;
        std::vector<double> x, y;
        for (const auto& [c, l] : c_loss) {
            if (l <= e) {
                feasible = false;
                break;
            }
            x.push_back(std::log(c));
            y.push_back(std::log(l - e));
        }
        if (!feasible) continue;
        auto [b0, b1] = detail::linreg(x, y);
        double mse = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            double r = y[i] - (b0 + b1 * x[i]);
            mse += r * r;
        }
        mse /= static_cast<double>(x.size());
        if (!best || mse < best->log_mse) best = SaturatingFit{std::exp(b0), -b1, e, mse};
    }
    if (!best) throw std::runtime_error("saturating: no feasible E candidate");
    return *best;
}

}  // namespace uflow
