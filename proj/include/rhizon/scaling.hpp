#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "rhizon/errors.hpp"
#include "rhizon/rope.hpp"

namespace rhizon {

/// Smallest even dimension count beyond which no sinusoid completes a full
/// period within the pretrained length:
///   d_extra = 2 * ceil((d/2) * log_base(T_train / 2pi)), clamped to [0, d].
/// Zero means T_train <= 2pi and the scaling law is undefined.
inline int critical_dimension(const RopeConfig& cfg) {
    cfg.validate();
    const double log_arg = static_cast<double>(cfg.train_len) / kTwoPi;
    if (log_arg <= 1.0) return 0;
    const double raw = (cfg.head_dim / 2.0) * std::log(log_arg) / std::log(cfg.rotary_base);
    long d_extra = 2 * static_cast<long>(std::ceil(raw));
    d_extra = std::clamp<long>(d_extra, 0, cfg.head_dim);
    return static_cast<int>(d_extra);
}

/// Required base scaling factor for inference length `target_len`:
///   lambda_t = beta0^-1 * (t / 2pi)^(d / d_extra).
/// May be < 1 when the target is inside the pretrained range.
inline double scaling_factor(const RopeConfig& cfg, long target_len) {
    cfg.validate();
    if (target_len < 1)
        throw ParameterError("target_len must be >= 1");
    const int d_extra = critical_dimension(cfg);
    if (d_extra == 0)
        throw UndefinedScalingError("critical dimension is 0 (train_len <= 2pi); scaling factor undefined");
    const double expo = static_cast<double>(cfg.head_dim) / d_extra;
    return std::pow(static_cast<double>(target_len) / kTwoPi, expo) / cfg.rotary_base;
}

/// Extrapolation upper bound for a scaled base:
///   T_extra = 2pi * (lambda * beta0)^(d_extra / d).
inline double extrapolation_bound(const RopeConfig& cfg, double lambda) {
    cfg.validate();
    if (!(lambda >= 1.0))
        throw ParameterError("lambda must be >= 1");
    const int d_extra = critical_dimension(cfg);
    if (d_extra == 0)
        throw UndefinedScalingError("critical dimension is 0 (train_len <= 2pi); bound undefined");
    const double expo = static_cast<double>(d_extra) / cfg.head_dim;
    return kTwoPi * std::pow(lambda * cfg.rotary_base, expo);
}

struct ScalingEntry {
    long target_len = 0;
    double lambda_raw = 0.0;
    long lambda_int = 1;               ///< max(1, ceil(lambda_raw))
    double bound_at_lambda_int = 0.0;  ///< T_extra at lambda_int, tokens
};

struct ScalingReport {
    RopeConfig config;
    int critical_dim = 0;
    std::vector<ScalingEntry> entries;
};

/// One entry per target length, with the integer policy lambda_int =
/// max(1, ceil(lambda_raw)).
inline ScalingReport plan(const RopeConfig& cfg, const std::vector<long>& targets) {
    cfg.validate();
    if (targets.empty())
        throw ParameterError("targets must be nonempty");
    ScalingReport rep;
    rep.config = cfg;
    rep.critical_dim = critical_dimension(cfg);
    rep.entries.reserve(targets.size());
    for (long t : targets) {
        ScalingEntry e;
        e.target_len = t;
        e.lambda_raw = scaling_factor(cfg, t);
        e.lambda_int = std::max<long>(1, static_cast<long>(std::ceil(e.lambda_raw)));
        e.bound_at_lambda_int = extrapolation_bound(cfg, static_cast<double>(e.lambda_int));
        rep.entries.push_back(e);
    }
    return rep;
}

inline void write_csv(const ScalingReport& rep, std::ostream& os) {
    os << "target_len,lambda_raw,lambda_int,bound\n";
    char buf[128];
    for (const auto& e : rep.entries) {
        std::snprintf(buf, sizeof(buf), "%ld,%.10g,%ld,%.10g\n", e.target_len, e.lambda_raw,
                      e.lambda_int, e.bound_at_lambda_int);
        os << buf;
    }
}

} // namespace rhizon
