#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "rhizon/rope.hpp"
#include "rhizon/scaling.hpp"

namespace rhizon {

enum class AttentionMode { causal, bidirectional };

inline const char* to_string(AttentionMode m) {
    return m == AttentionMode::causal ? "causal" : "bidirectional";
}

struct DimCoverage {
    int dim = 0;                       ///< plane index n
    double period = 0.0;               ///< T_n, tokens
    double covered_phase_width = 0.0;  ///< theta_n * |rel range|, radians
    bool full_period_covered = false;  ///< width >= 2pi
};

/// Which relative positions (and hence which sinusoid phases) training
/// exposes.  Causal attention sees [0, T_train-1]; bidirectional attention
/// sees the symmetric closure [-(T_train-1), T_train-1], twice the phase
/// width per plane.
struct CoverageReport {
    AttentionMode mode = AttentionMode::causal;
    long rel_min = 0;
    long rel_max = 0;
    std::vector<DimCoverage> per_dim;
    int critical_dim = 0;
};

inline CoverageReport coverage_report(const RopeConfig& cfg, AttentionMode mode) {
    cfg.validate();
    CoverageReport rep;
    rep.mode = mode;
    rep.rel_max = cfg.train_len - 1;
    rep.rel_min = mode == AttentionMode::causal ? 0 : -(cfg.train_len - 1);
    rep.critical_dim = critical_dimension(cfg);
    const FreqTable table = build_freq_table(cfg);
    const double range_width = static_cast<double>(rep.rel_max - rep.rel_min);
    rep.per_dim.reserve(table.angles.size());
    for (int n = 0; n < static_cast<int>(table.angles.size()); ++n) {
        DimCoverage d;
        d.dim = n;
        d.period = table.periods[n];
        d.covered_phase_width = table.angles[n] * range_width;
        d.full_period_covered = d.covered_phase_width >= kTwoPi;
        rep.per_dim.push_back(d);
    }
    return rep;
}

/// CSV rows per plane with the relative range in '#' metadata lines.
inline void write_csv(const CoverageReport& rep, std::ostream& os) {
    os << "# mode=" << to_string(rep.mode) << "\n";
    os << "# rel_range=[" << rep.rel_min << "," << rep.rel_max << "]\n";
    os << "# critical_dim=" << rep.critical_dim << "\n";
    os << "dim,period,covered_phase_width,full_period\n";
    char buf[128];
    for (const auto& d : rep.per_dim) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%d\n", d.dim, d.period,
                      d.covered_phase_width, d.full_period_covered ? 1 : 0);
        os << buf;
    }
}

} // namespace rhizon
