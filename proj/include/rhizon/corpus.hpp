#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rhizon/errors.hpp"
#include "rhizon/rng.hpp"

namespace rhizon {

/// Token-id layout of the synthetic language. Disjoint alphabets: markers,
/// key ids, payload ids, filler. Payload ids never occur as filler, so a
/// retrieved payload can only come from the needle itself. Id 0 pads the
/// answer region after the echoed payload; the last id is the mask token.
struct TokenLayout {
    int vocab_size = 65;
    int mask_token_id = 64;
    int pad_id = 0;
    int key_mark = 1;
    int val_mark = 2;
    int ask_mark = 3;
    int key_base = 4;
    int n_keys = 10;
    int payload_base = 14;
    int n_payload = 20;
    int payload_len = 4;
    int filler_base = 34;
    int n_filler = 30;

    int needle_len() const { return 3 + payload_len; }  // KEY k VAL p0..p{n-1}
    int query_len() const { return 3; }                 // ASK k VAL

    void validate() const {
        if (payload_len < 1) throw ConfigError("payload_len must be >= 1");
        if (n_keys < 1 || n_payload < 1 || n_filler < 2)
            throw ConfigError("alphabets must be non-empty (filler >= 2)");
        if (filler_base + n_filler > mask_token_id || mask_token_id >= vocab_size)
            throw ConfigError("token layout exceeds vocab");
        if (key_base < 4 || payload_base != key_base + n_keys ||
            filler_base != payload_base + n_payload)
            throw ConfigError("token alphabets must be contiguous and disjoint");
    }
};

/// One retrieval case: filler haystack with the needle embedded at a depth,
/// then the query suffix. depth 0 puts the needle at the start, 1 directly
/// before the query.
struct NiahCase {
    std::vector<int> prompt;
    std::vector<int> payload;
    long needle_pos = 0;
};

inline NiahCase make_niah_case(const TokenLayout& lay, long prompt_len, double depth, Rng& rng) {
    lay.validate();
    if (depth < 0.0 || depth > 1.0) throw ParameterError("depth must be in [0, 1]");
    const long hay_len = prompt_len - lay.query_len();
    if (hay_len < lay.needle_len())
        throw ParameterError("prompt_len too short for needle plus query");

    const int key = lay.key_base + static_cast<int>(rng.next_below(lay.n_keys));
    NiahCase c;
    c.payload.resize(lay.payload_len);
    for (int& p : c.payload) p = lay.payload_base + static_cast<int>(rng.next_below(lay.n_payload));

    c.prompt.resize(prompt_len);
    for (long i = 0; i < hay_len; ++i)
        c.prompt[i] = lay.filler_base + static_cast<int>(rng.next_below(lay.n_filler));
    c.needle_pos = static_cast<long>(depth * static_cast<double>(hay_len - lay.needle_len()));
    long w = c.needle_pos;
    c.prompt[w++] = lay.key_mark;
    c.prompt[w++] = key;
    c.prompt[w++] = lay.val_mark;
    for (int p : c.payload) c.prompt[w++] = p;
    c.prompt[hay_len] = lay.ask_mark;
    c.prompt[hay_len + 1] = key;
    c.prompt[hay_len + 2] = lay.val_mark;
    return c;
}

/// Training sequence with the same geometry as evaluation: a retrieval prompt,
/// pad tokens, then the answered payload closing the answer region. Putting
/// the payload last lets tail-restricted fine-tuning supervise exactly the
/// retrieval slots at full weight; the answer region length matches the
/// generation budget used at eval time.
inline std::vector<int> make_kv_sequence(const TokenLayout& lay, long total_len, long answer_region,
                                         double depth, Rng& rng) {
    if (answer_region < lay.payload_len) throw ParameterError("answer_region shorter than payload");
    if (total_len <= answer_region) throw ParameterError("total_len must exceed answer_region");
    NiahCase c = make_niah_case(lay, total_len - answer_region, depth, rng);
    std::vector<int> seq = c.prompt;
    seq.resize(total_len - lay.payload_len, lay.pad_id);
    seq.insert(seq.end(), c.payload.begin(), c.payload.end());
    return seq;
}

/// Periodic sequence: a random motif repeated from a random phase. Motif
/// lengths default to 3..48, so continuing a sequence exercises adjacent
/// n-gram copying for short periods and a precise induction look-back for
/// medium ones.
inline std::vector<int> make_repetition_sequence(const TokenLayout& lay, long total_len, Rng& rng,
                                                 int motif_min = 3, int motif_max = 48) {
    lay.validate();
    if (total_len < 1) throw ParameterError("total_len must be >= 1");
    if (motif_min < 1 || motif_max < motif_min) throw ParameterError("bad motif range");
    const int motif_len =
        motif_min + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(motif_max - motif_min + 1)));
    const int span = lay.mask_token_id - lay.key_base;  // all non-marker ids
    std::vector<int> motif(motif_len);
    for (int& t : motif) t = lay.key_base + static_cast<int>(rng.next_below(span));
    const long phase = static_cast<long>(rng.next_below(motif_len));
    std::vector<int> seq(total_len);
    for (long i = 0; i < total_len; ++i) seq[i] = motif[(phase + i) % motif_len];
    return seq;
}

/// Mixed corpus: n_kv retrieval sequences (depth uniform per sequence) plus
/// n_rep repetition sequences. Lengths are drawn uniformly from
/// [len_min, len_max] per sequence, so the query suffix lands at many
/// positions and retrieval cannot anchor to one absolute offset.
inline std::vector<std::vector<int>> make_training_corpus(const TokenLayout& lay, long n_kv,
                                                          long n_rep, long len_min, long len_max,
                                                          long answer_region, std::uint64_t seed) {
    if (n_kv < 0 || n_rep < 0 || n_kv + n_rep < 1) throw ParameterError("corpus must be non-empty");
    if (len_min < 2 || len_min > len_max) throw ParameterError("need 2 <= len_min <= len_max");
    const std::uint64_t span = static_cast<std::uint64_t>(len_max - len_min + 1);
    std::vector<std::vector<int>> corpus;
    corpus.reserve(n_kv + n_rep);
    for (long i = 0; i < n_kv; ++i) {
        Rng rng(derive_stream(seed, {0xC09ULL, static_cast<std::uint64_t>(i)}));
        const long len = len_min + static_cast<long>(rng.next_below(span));
        const double depth = rng.next_double();
        corpus.push_back(make_kv_sequence(lay, len, answer_region, depth, rng));
    }
    for (long i = 0; i < n_rep; ++i) {
        Rng rng(derive_stream(seed, {0x9E7ULL, static_cast<std::uint64_t>(i)}));
        const long len = len_min + static_cast<long>(rng.next_below(span));
        corpus.push_back(make_repetition_sequence(lay, len, rng));
    }
    return corpus;
}

/// Fixed-length corpus: every sequence exactly total_len tokens.
inline std::vector<std::vector<int>> make_training_corpus(const TokenLayout& lay, long n_kv,
                                                          long n_rep, long total_len,
                                                          long answer_region, std::uint64_t seed) {
    return make_training_corpus(lay, n_kv, n_rep, total_len, total_len, answer_region, seed);
}

/// Held-out periodic text restricted to medium motifs: likelihood reflects a
/// precise look-back of 24..48 positions, not adjacent-token statistics.
inline std::vector<int> make_heldout_text(const TokenLayout& lay, long total_len, std::uint64_t seed) {
    Rng rng(derive_stream(seed, {0x4E1DULL}));
    return make_repetition_sequence(lay, total_len, rng, 24, 48);
}

/// One sequence per line, whitespace-separated decimal token ids.
inline void save_corpus(const std::vector<std::vector<int>>& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& seq : corpus) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (i) out << ' ';
            out << seq[i];
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<std::vector<int>> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::vector<int>> corpus;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::vector<int> seq;
        long long v;
        while (ls >> v) {
            if (v < 0 || v > 1'000'000)
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad token id");
            seq.push_back(static_cast<int>(v));
        }
        if (!ls.eof())
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric token");
        corpus.push_back(std::move(seq));
    }
    if (corpus.empty()) throw DataError(path.string() + ": no sequences");
    return corpus;
}

} // namespace rhizon
