#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <vector>

#include "rhizon/corpus.hpp"
#include "rhizon/errors.hpp"
#include "rhizon/model.hpp"
#include "rhizon/parallel.hpp"
#include "rhizon/sampler.hpp"

namespace rhizon {

/// Needle-retrieval sweep: lengths are prompt lengths (context sizes), depths
/// the relative needle position. Every (length, depth, trial) cell derives
/// its own stream from the seed, so results do not depend on evaluation
/// order or thread count.
struct NiahSpec {
    std::vector<long> lengths = {64, 128, 192, 256, 384, 512, 768, 1024, 1536};
    std::vector<double> depths = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    int trials = 8;
    SamplerConfig sampler{};
    std::uint64_t seed = kDefaultSeed;

    void validate(const TokenLayout& lay) const {
        lay.validate();
        if (lengths.empty() || depths.empty()) throw ParameterError("empty sweep axes");
        if (trials < 1) throw ParameterError("trials must be >= 1");
        for (long l : lengths)
            if (l < lay.needle_len() + lay.query_len())
                throw ParameterError("length too short for needle plus query");
        for (double d : depths)
            if (d < 0.0 || d > 1.0) throw ParameterError("depth outside [0, 1]");
        sampler.validate();
        if (sampler.gen_len < lay.payload_len)
            throw ParameterError("gen_len shorter than payload");
    }
};

struct GridCell {
    long length = 0;
    double depth = 0.0;
    double accuracy = 0.0;
    long needle_pos = 0;  ///< from the first trial, for reference
};

struct GridResult {
    NiahSpec spec;
    std::vector<GridCell> cells;  ///< length-major, depth within

    double accuracy_at(long length, double depth) const {
        for (const auto& c : cells)
            if (c.length == length && c.depth == depth) return c.accuracy;
        throw IndexError("no such grid cell");
    }
};

/// Containment scoring: 1 iff the payload occurs contiguously anywhere in
/// the generated region. Tokens around the payload never matter; output
/// shorter than the payload scores 0.
inline bool score_case(const TokenLayout& lay, const NiahCase& c, std::span<const int> full_seq) {
    (void)lay;
    const std::size_t p = std::min(c.prompt.size(), full_seq.size());
    const auto gen = full_seq.subspan(p);
    return std::search(gen.begin(), gen.end(), c.payload.begin(), c.payload.end()) != gen.end();
}

inline std::uint64_t cell_stream(std::uint64_t seed, long length, double depth, long trial) {
    return derive_stream(seed, {0x71A8ULL, static_cast<std::uint64_t>(length),
                                std::bit_cast<std::uint64_t>(depth), static_cast<std::uint64_t>(trial)});
}

inline GridResult run_grid(const Checkpoint& ckpt, const TokenLayout& lay, const NiahSpec& spec,
                           const RopeConfig* rope_override = nullptr, int n_jobs = 1) {
    spec.validate(lay);
    const long n_len = static_cast<long>(spec.lengths.size());
    const long n_dep = static_cast<long>(spec.depths.size());
    const long n_cells = n_len * n_dep;
    const long n_items = n_cells * spec.trials;

    std::vector<char> hit(n_items, 0);
    std::vector<long> first_pos(n_cells, 0);
    parallel_for(n_jobs, n_items, [&](long item) {
        const long cell = item / spec.trials;
        const long trial = item % spec.trials;
        const long length = spec.lengths[cell / n_dep];
        const double depth = spec.depths[cell % n_dep];
        Rng rng(cell_stream(spec.seed, length, depth, trial));
        const NiahCase c = make_niah_case(lay, length, depth, rng);
        const std::uint64_t sample_seed = cell_stream(spec.seed ^ 0x5A5A5A5AULL, length, depth, trial);
        const std::vector<int> out = sample(ckpt, c.prompt, spec.sampler, sample_seed, rope_override);
        hit[item] = score_case(lay, c, out) ? 1 : 0;
        if (trial == 0) first_pos[cell] = c.needle_pos;
    });

    GridResult res;
    res.spec = spec;
    res.cells.resize(n_cells);
    for (long cell = 0; cell < n_cells; ++cell) {
        long ok = 0;
        for (long t = 0; t < spec.trials; ++t) ok += hit[cell * spec.trials + t];
        auto& c = res.cells[cell];
        c.length = spec.lengths[cell / n_dep];
        c.depth = spec.depths[cell % n_dep];
        c.accuracy = static_cast<double>(ok) / spec.trials;
        c.needle_pos = first_pos[cell];
    }
    return res;
}

/// Deepest usable band per length: the smallest depth d such that every cell
/// at this length with depth >= d clears the threshold. 1.0+ (sentinel
/// `kNoBand`) when even the deepest cell fails.
inline constexpr double kNoBand = 1.125;

struct WindowEstimate {
    long window = 0;       ///< tokens; best fit of d*(L) = max(0, 1 - W/L)
    double residual = 0.0; ///< rms of the fit
    std::vector<std::pair<long, double>> deepest_band;  ///< (length, d*)
};

inline std::vector<std::pair<long, double>> deepest_bands(const GridResult& grid, double threshold) {
    const long n_dep = static_cast<long>(grid.spec.depths.size());
    std::vector<std::pair<long, double>> out;
    for (std::size_t li = 0; li < grid.spec.lengths.size(); ++li) {
        double dstar = kNoBand;
        for (long di = n_dep - 1; di >= 0; --di) {
            const auto& c = grid.cells[li * n_dep + di];
            if (c.accuracy >= threshold)
                dstar = c.depth;
            else
                break;
        }
        out.emplace_back(grid.spec.lengths[li], dstar);
    }
    return out;
}

/// Fit the single-parameter window model to the measured bands by integer
/// grid search over W, taking the smallest minimizer.
inline WindowEstimate effective_window(const GridResult& grid, double threshold = 0.5) {
    if (threshold <= 0.0 || threshold > 1.0) throw ParameterError("threshold in (0, 1]");
    WindowEstimate est;
    est.deepest_band = deepest_bands(grid, threshold);
    long max_len = 0;
    for (auto& [l, d] : est.deepest_band) max_len = std::max(max_len, l);
    double best = std::numeric_limits<double>::infinity();
    long best_w = 0;
    for (long w = 0; w <= max_len; ++w) {
        double sse = 0.0;
        for (auto& [l, d] : est.deepest_band) {
            const double target = d >= kNoBand ? kNoBand : d;
            const double pred = std::max(0.0, 1.0 - static_cast<double>(w) / static_cast<double>(l));
            const double r = target - pred;
            sse += r * r;
        }
        if (sse < best - 1e-15) {
            best = sse;
            best_w = w;
        }
    }
    est.window = best_w;
    est.residual = std::sqrt(best / static_cast<double>(est.deepest_band.size()));
    return est;
}

/// Plot-ready cell table. Metadata rides in '#' comment lines.
inline void emit_heatmap(const GridResult& grid, std::ostream& os) {
    os << "# trials=" << grid.spec.trials << " gen_len=" << grid.spec.sampler.gen_len
       << " block_len=" << grid.spec.sampler.block_len << " steps=" << grid.spec.sampler.steps
       << " remasking=" << to_string(grid.spec.sampler.remasking) << " seed=" << grid.spec.seed
       << "\n";
    os << "length,depth,accuracy,needle_pos\n";
    char buf[128];
    for (const auto& c : grid.cells) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%ld\n", c.length, c.depth, c.accuracy,
                      c.needle_pos);
        os << buf;
    }
}

inline void emit_heatmap(const GridResult& grid, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    emit_heatmap(grid, out);
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace rhizon
