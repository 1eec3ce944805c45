#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rhizon/errors.hpp"

namespace rhizon {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// The (d, beta0, T_train) triple every frequency / scaling formula consumes.
struct RopeConfig {
    int head_dim = 128;          ///< d, even
    double rotary_base = 10000.0; ///< beta0
    long train_len = 4096;       ///< T_train, tokens

    void validate() const {
        if (head_dim < 2 || head_dim % 2 != 0)
            throw ConfigError("head_dim must be even and >= 2, got " + std::to_string(head_dim));
        if (!(rotary_base > 1.0))
            throw ConfigError("rotary_base must be > 1");
        if (train_len < 1)
            throw ConfigError("train_len must be >= 1");
    }
};

/// Per-plane rotary angles theta_n = beta0^(-2n/d) and sinusoid periods
/// T_n = 2*pi*beta0^(2n/d), n = 0..d/2-1. Angles decrease with n, periods
/// increase. All values double precision.
struct FreqTable {
    std::vector<double> angles;
    std::vector<double> periods;

    int head_dim() const { return static_cast<int>(angles.size()) * 2; }
};

inline FreqTable build_freq_table(const RopeConfig& cfg) {
    cfg.validate();
    const int half = cfg.head_dim / 2;
    FreqTable t;
    t.angles.resize(half);
    t.periods.resize(half);
    for (int n = 0; n < half; ++n) {
        const double e = 2.0 * n / cfg.head_dim;
        t.angles[n] = std::pow(cfg.rotary_base, -e);
        t.periods[n] = kTwoPi * std::pow(cfg.rotary_base, e);
    }
    return t;
}

/// Period (in tokens) of plane n's sinusoid.
inline double period(int n, const RopeConfig& cfg) {
    cfg.validate();
    if (n < 0 || n >= cfg.head_dim / 2)
        throw IndexError("plane index " + std::to_string(n) + " out of range [0, " +
                         std::to_string(cfg.head_dim / 2) + ")");
    return kTwoPi * std::pow(cfg.rotary_base, 2.0 * n / cfg.head_dim);
}

/// Rotate each (2n, 2n+1) plane of v by angle theta_n * pos. Norm-preserving.
inline std::vector<double> apply_rotary(std::span<const double> v, long pos, const FreqTable& table) {
    const int d = table.head_dim();
    if (static_cast<int>(v.size()) != d)
        throw DimensionError("vector length " + std::to_string(v.size()) + " != head_dim " +
                             std::to_string(d));
    std::vector<double> out(v.size());
    for (int n = 0; n < d / 2; ++n) {
        const double a = table.angles[n] * static_cast<double>(pos);
        const double c = std::cos(a);
        const double s = std::sin(a);
        const double x = v[2 * n];
        const double y = v[2 * n + 1];
        out[2 * n] = x * c - y * s;
        out[2 * n + 1] = x * s + y * c;
    }
    return out;
}

/// Attention score A_{t,s} = (q R_t) . (k R_s). Depends only on t - s.
inline double attention_score(std::span<const double> q, std::span<const double> k,
                              long t, long s, const FreqTable& table) {
    const int d = table.head_dim();
    if (static_cast<int>(q.size()) != d || static_cast<int>(k.size()) != d)
        throw DimensionError("q/k length must equal head_dim " + std::to_string(d));
    const std::vector<double> qr = apply_rotary(q, t, table);
    const std::vector<double> kr = apply_rotary(k, s, table);
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += qr[i] * kr[i];
    return acc;
}

/// NTK base scaling: multiply the rotary base by lambda >= 1.
inline RopeConfig scale_base(RopeConfig cfg, double lambda) {
    cfg.validate();
    if (!(lambda >= 1.0))
        throw ParameterError("scaling factor lambda must be >= 1, got " + std::to_string(lambda));
    cfg.rotary_base = lambda * cfg.rotary_base;
    return cfg;
}

} // namespace rhizon
