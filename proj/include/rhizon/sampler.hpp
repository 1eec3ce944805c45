#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rhizon/errors.hpp"
#include "rhizon/model.hpp"
#include "rhizon/rng.hpp"

namespace rhizon {

enum class Remasking { low_confidence, random };

inline const char* to_string(Remasking r) {
    return r == Remasking::low_confidence ? "low_confidence" : "random";
}

struct SamplerConfig {
    long gen_len = 32;
    long block_len = 32;
    long steps = 32;  ///< denoising steps per block
    Remasking remasking = Remasking::low_confidence;

    void validate() const {
        if (gen_len < 1) throw ParameterError("gen_len must be >= 1");
        if (block_len < 1 || block_len > gen_len) throw ParameterError("block_len in [1, gen_len]");
        if (gen_len % block_len != 0) throw ParameterError("gen_len must be a multiple of block_len");
        if (steps < 1 || steps > block_len) throw ParameterError("steps in [1, block_len]");
    }
};

/// Tokens to finalize at each denoising step of one block: floor(B/s) each,
/// with the remainder spread over the first B mod s steps. Sums to B, every
/// entry >= 1.
inline std::vector<long> finalize_schedule(long block_len, long steps) {
    if (block_len < 1) throw ParameterError("block_len must be >= 1");
    if (steps < 1 || steps > block_len) throw ParameterError("steps in [1, block_len]");
    std::vector<long> counts(steps, block_len / steps);
    const long rem = block_len % steps;
    for (long i = 0; i < rem; ++i) counts[i] += 1;
    return counts;
}

struct SampleStep {
    long block = 0;
    long step = 0;
    std::vector<long> finalized_pos;
    std::vector<int> finalized_tok;
    std::vector<double> confidence;
};

struct SampleTrace {
    std::vector<SampleStep> steps;
};

namespace detail {

/// argmax over the vocab excluding the mask id, with the winning probability.
/// Ties break toward the lower token id.
inline std::pair<int, double> best_token(const MatrixF& logits, long row, int vocab, int mask_id) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < vocab; ++j) mx = std::max(mx, static_cast<double>(logits(row, j)));
    double z = 0.0;
    for (int j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(logits(row, j)) - mx);
    int best = -1;
    double best_p = -1.0;
    for (int j = 0; j < vocab; ++j) {
        if (j == mask_id) continue;
        const double p = std::exp(static_cast<double>(logits(row, j)) - mx) / z;
        if (p > best_p) {
            best_p = p;
            best = j;
        }
    }
    return {best, best_p};
}

} // namespace detail

/// Generate cfg.gen_len tokens after the prompt. MDLM mode appends masked
/// positions and denoises them block by block: each step finalizes the
/// scheduled number of positions, chosen by prediction confidence
/// (low_confidence) or uniformly (random); the rest stay masked for the next
/// step. Causal mode decodes greedily one token at a time. The mask token
/// never appears in the output.
inline std::vector<int> sample(const Checkpoint& ckpt, std::span<const int> prompt,
                               const SamplerConfig& cfg, std::uint64_t seed = kDefaultSeed,
                               const RopeConfig* rope_override = nullptr,
                               SampleTrace* trace = nullptr) {
    cfg.validate();
    if (prompt.empty()) throw DataError("empty prompt");
    const ModelConfig& mc = ckpt.config;
    for (int t : prompt)
        if (t < 0 || t >= mc.vocab_size) throw DataError("prompt token outside vocab");
    ForwardOptions opts;
    opts.rope_override = rope_override;

    std::vector<int> seq(prompt.begin(), prompt.end());
    const long p_len = static_cast<long>(seq.size());

    if (mc.mode == ModelMode::causal) {
        for (long i = 0; i < cfg.gen_len; ++i) {
            const MatrixF logits = forward(ckpt, seq, opts);
            const auto [tok, conf] =
                detail::best_token(logits, static_cast<long>(seq.size()) - 1, mc.vocab_size, mc.mask_token_id);
            seq.push_back(tok);
            if (trace) {
                SampleStep st;
                st.block = i / cfg.block_len;
                st.step = i % cfg.block_len;
                st.finalized_pos.push_back(static_cast<long>(seq.size()) - 1);
                st.finalized_tok.push_back(tok);
                st.confidence.push_back(conf);
                trace->steps.push_back(std::move(st));
            }
        }
        return seq;
    }

    seq.resize(p_len + cfg.gen_len, mc.mask_token_id);
    const std::vector<long> schedule = finalize_schedule(cfg.block_len, cfg.steps);
    const long n_blocks = cfg.gen_len / cfg.block_len;
    Rng rng(derive_stream(seed, {0xDECD0ULL}));

    for (long blk = 0; blk < n_blocks; ++blk) {
        const long b0 = p_len + blk * cfg.block_len;
        for (long st = 0; st < cfg.steps; ++st) {
            const MatrixF logits = forward(ckpt, seq, opts);
            struct Cand {
                long pos;
                int tok;
                double conf;
            };
            std::vector<Cand> cands;
            for (long i = b0; i < b0 + cfg.block_len; ++i) {
                if (seq[i] != mc.mask_token_id) continue;
                const auto [tok, conf] = detail::best_token(logits, i, mc.vocab_size, mc.mask_token_id);
                cands.push_back({i, tok, conf});
            }
            long k = schedule[st];
            if (k > static_cast<long>(cands.size()))
                throw Error("finalize schedule exceeds masked positions");
            if (cfg.remasking == Remasking::low_confidence) {
                std::partial_sort(cands.begin(), cands.begin() + k, cands.end(),
                                  [](const Cand& a, const Cand& b) {
                                      if (a.conf != b.conf) return a.conf > b.conf;
                                      return a.pos < b.pos;
                                  });
            } else {
                for (long i = 0; i < k; ++i) {
                    const long j =
                        i + static_cast<long>(rng.next_below(static_cast<std::uint64_t>(cands.size() - i)));
                    std::swap(cands[i], cands[j]);
                }
            }
            SampleStep rec;
            rec.block = blk;
            rec.step = st;
            for (long i = 0; i < k; ++i) {
                seq[cands[i].pos] = cands[i].tok;
                rec.finalized_pos.push_back(cands[i].pos);
                rec.finalized_tok.push_back(cands[i].tok);
                rec.confidence.push_back(cands[i].conf);
            }
            if (trace) trace->steps.push_back(std::move(rec));
        }
    }
    return seq;
}

} // namespace rhizon
