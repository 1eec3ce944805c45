#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rhizon/errors.hpp"
#include "rhizon/rng.hpp"
#include "rhizon/rope.hpp"

namespace rhizon {

using MatrixF = Eigen::MatrixXf;
using ArrayF = Eigen::ArrayXf;
using MatrixD = Eigen::MatrixXd;

enum class ModelMode { causal, bidirectional_mdlm };

inline const char* to_string(ModelMode m) {
    return m == ModelMode::causal ? "causal" : "bidirectional_mdlm";
}

/// Toy transformer descriptor. One backbone serves both the causal AR model
/// and the bidirectional masked-diffusion model; only the attention mask and
/// the training objective differ.
struct ModelConfig {
    int vocab_size = 65;   ///< includes the reserved MASK id
    int n_layers = 2;
    int d_model = 128;
    int n_heads = 4;
    int head_dim = 32;
    double rotary_base = 10000.0;
    long train_len = 256;
    ModelMode mode = ModelMode::bidirectional_mdlm;
    int mask_token_id = 64;

    RopeConfig rope() const { return RopeConfig{head_dim, rotary_base, train_len}; }

    void validate() const {
        if (head_dim < 2 || head_dim % 2 != 0)
            throw ConfigError("head_dim must be even and >= 2");
        if (d_model != n_heads * head_dim)
            throw ConfigError("d_model must equal n_heads * head_dim");
        if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
        if (mask_token_id < 0 || mask_token_id >= vocab_size)
            throw ConfigError("mask_token_id out of vocab range");
        if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
        if (train_len < 1) throw ConfigError("train_len must be >= 1");
        rope().validate();
    }
};

struct LayerParams {
    MatrixF ln1_g;  // d_model x 1
    MatrixF wq, wk, wv, wo;  // d_model x d_model
    MatrixF ln2_g;  // d_model x 1
    MatrixF w1;  // d_model x 4*d_model
    MatrixF w2;  // 4*d_model x d_model
};

struct Params {
    MatrixF emb;  // vocab x d_model
    std::vector<LayerParams> layers;
    MatrixF lnf_g;  // d_model x 1
    MatrixF head;  // d_model x vocab
};

/// Visit every parameter tensor in a fixed order with a stable name.
/// The order defines initialization draws, optimizer slot layout and the
/// checkpoint tensor directory.
template <class P, class F>
void for_each_tensor(P& params, F&& fn) {
    fn("emb", params.emb);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& lay = params.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        fn(p + "ln1.g", lay.ln1_g);
        fn(p + "attn.wq", lay.wq);
        fn(p + "attn.wk", lay.wk);
        fn(p + "attn.wv", lay.wv);
        fn(p + "attn.wo", lay.wo);
        fn(p + "ln2.g", lay.ln2_g);
        fn(p + "mlp.w1", lay.w1);
        fn(p + "mlp.w2", lay.w2);
    }
    fn("final_norm.g", params.lnf_g);
    fn("head.w", params.head);
}

struct TrainMeta {
    long steps = 0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;
};

struct Checkpoint {
    ModelConfig config;
    TrainMeta train_meta;
    Params params;
};

inline constexpr std::uint64_t kDefaultSeed = 2025;

/// Deterministic initialization: projections N(0, 0.02^2), norm gains 1, and
/// a zero output head so an untrained model scores every token uniformly.
inline Checkpoint init_model(const ModelConfig& config, std::uint64_t seed = kDefaultSeed) {
    config.validate();
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.train_meta.seed = seed;
    Params& p = ckpt.params;
    const int dm = config.d_model;
    p.emb.resize(config.vocab_size, dm);
    p.layers.resize(config.n_layers);
    for (auto& lay : p.layers) {
        lay.ln1_g.resize(dm, 1);
        lay.wq.resize(dm, dm);
        lay.wk.resize(dm, dm);
        lay.wv.resize(dm, dm);
        lay.wo.resize(dm, dm);
        lay.ln2_g.resize(dm, 1);
        lay.w1.resize(dm, 4 * dm);
        lay.w2.resize(4 * dm, dm);
    }
    p.lnf_g.resize(dm, 1);
    p.head.resize(dm, config.vocab_size);

    Rng rng(seed);
    for_each_tensor(p, [&](const std::string& name, MatrixF& t) {
        if (name.ends_with(".g")) {
            t.setOnes();
        } else if (name == "head.w") {
            t.setZero();
        } else {
            for (Eigen::Index c = 0; c < t.cols(); ++c)
                for (Eigen::Index r = 0; r < t.rows(); ++r)
                    t(r, c) = static_cast<float>(0.02 * rng.next_normal());
        }
    });
    return ckpt;
}

/// Per-plane cos/sin at every position, computed in double and narrowed to
/// float only at application time.
struct RopePhases {
    std::vector<ArrayF> cosv, sinv;  // one (len) array per plane
};

inline RopePhases make_rope_phases(const FreqTable& table, long len) {
    const int half = static_cast<int>(table.angles.size());
    RopePhases ph;
    ph.cosv.resize(half);
    ph.sinv.resize(half);
    for (int n = 0; n < half; ++n) {
        ph.cosv[n].resize(len);
        ph.sinv[n].resize(len);
        const double theta = table.angles[n];
        for (long i = 0; i < len; ++i) {
            const double a = theta * static_cast<double>(i);
            ph.cosv[n](i) = static_cast<float>(std::cos(a));
            ph.sinv[n](i) = static_cast<float>(std::sin(a));
        }
    }
    return ph;
}

/// Rotate the (2n, 2n+1) column pairs of each head block. sign=-1 applies the
/// inverse rotation (used when back-propagating through the embedding).
inline void rotate_heads(MatrixF& m, const RopePhases& ph, int n_heads, int head_dim, float sign = 1.0f) {
    const int half = head_dim / 2;
    ArrayF tmp(m.rows());
    for (int h = 0; h < n_heads; ++h) {
        for (int n = 0; n < half; ++n) {
            const int c0 = h * head_dim + 2 * n;
            const int c1 = c0 + 1;
            const ArrayF& c = ph.cosv[n];
            const ArrayF s = sign * ph.sinv[n];
            tmp = m.col(c0).array() * c - m.col(c1).array() * s;
            m.col(c1) = (m.col(c0).array() * s + m.col(c1).array() * c).matrix();
            m.col(c0) = tmp.matrix();
        }
    }
}

/// Captured per-head Q/K states before and after rotary application.
struct ForwardCapture {
    int layer = 0;
    int head = 0;
    MatrixD pre_q, pre_k, post_q, post_k;  // len x head_dim
};

struct ForwardOptions {
    const RopeConfig* rope_override = nullptr;  ///< scaled-base injection
    ForwardCapture* capture = nullptr;
};

/// Activation stash for back-propagation. Forward fills it when given one.
struct Trace {
    struct Layer {
        MatrixF x_in;        // residual stream entering the layer
        ArrayF inv1;         // 1/rms for ln1
        MatrixF a;           // post-ln1
        MatrixF q, k, v;     // q,k post-rope
        std::vector<MatrixF> probs;  // per-head attention, len x len
        MatrixF o;           // concatenated head outputs
        MatrixF x_mid;       // after attention residual
        ArrayF inv2;
        MatrixF b;           // post-ln2
        MatrixF u;           // mlp pre-activation
        MatrixF g;           // gelu(u)
    };
    std::vector<Layer> layers;
    MatrixF x_final;  // before final norm
    ArrayF invf;
    MatrixF f;  // post final norm
};

namespace detail {

inline constexpr float kNegInf = -std::numeric_limits<float>::infinity();
inline constexpr float kRmsEps = 1e-5f;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline void rmsnorm_rows(const MatrixF& x, const MatrixF& gain, MatrixF& out, ArrayF& inv_rms) {
    const auto dm = x.cols();
    inv_rms = (x.array().square().rowwise().mean() + kRmsEps).rsqrt();
    out = (x.array().colwise() * inv_rms).rowwise() * gain.col(0).transpose().array();
}

inline void softmax_rows_masked(MatrixF& s, bool causal) {
    const auto n = s.rows();
    if (causal) {
        for (Eigen::Index i = 0; i + 1 < n; ++i)
            s.row(i).tail(n - 1 - i).setConstant(kNegInf);
    }
    ArrayF m = s.rowwise().maxCoeff();
    s = (s.array().colwise() - m).exp();
    ArrayF z = s.rowwise().sum();
    s.array().colwise() /= z;
}

inline float gelu_scalar(float x) {
    const double xd = x;
    return static_cast<float>(0.5 * xd * (1.0 + std::tanh(kGeluC * (xd + 0.044715 * xd * xd * xd))));
}

inline float gelu_grad_scalar(float x) {
    const double xd = x;
    const double inner = kGeluC * (xd + 0.044715 * xd * xd * xd);
    const double t = std::tanh(inner);
    const double di = kGeluC * (1.0 + 3.0 * 0.044715 * xd * xd);
    return static_cast<float>(0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * di);
}

} // namespace detail

/// Full forward pass. Sequences longer than train_len are allowed by design;
/// extrapolation behavior is exactly what the testbed studies.
/// Returns len x vocab logits.
inline MatrixF forward(const Checkpoint& ckpt, std::span<const int> tokens,
                       const ForwardOptions& opts = {}, Trace* trace = nullptr) {
    const ModelConfig& cfg = ckpt.config;
    const long len = static_cast<long>(tokens.size());
    if (len < 1) throw DataError("empty token sequence");
    if (len > (1L << 22)) throw Error("sequence exceeds hard resource limit");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size)
            throw DataError("token id " + std::to_string(t) + " outside vocab");

    RopeConfig rope_cfg = cfg.rope();
    if (opts.rope_override) {
        opts.rope_override->validate();
        if (opts.rope_override->head_dim != cfg.head_dim)
            throw DimensionError("rope override head_dim mismatch");
        rope_cfg = *opts.rope_override;
    }
    const FreqTable freq = build_freq_table(rope_cfg);
    const RopePhases phases = make_rope_phases(freq, len);

    const int dm = cfg.d_model;
    const int hd = cfg.head_dim;
    const int nh = cfg.n_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const bool causal = cfg.mode == ModelMode::causal;

    if (trace) trace->layers.resize(cfg.n_layers);

    MatrixF x(len, dm);
    for (long i = 0; i < len; ++i) x.row(i) = ckpt.params.emb.row(tokens[i]);

    MatrixF a, q, k, v, o(len, dm), s, b, u;
    ArrayF inv1, inv2;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& lp = ckpt.params.layers[l];
        detail::rmsnorm_rows(x, lp.ln1_g, a, inv1);
        q.noalias() = a * lp.wq;
        k.noalias() = a * lp.wk;
        v.noalias() = a * lp.wv;

        if (opts.capture && opts.capture->layer == l) {
            const int h = opts.capture->head;
            if (h < 0 || h >= nh) throw IndexError("capture head out of range");
            opts.capture->pre_q = q.middleCols(h * hd, hd).cast<double>();
            opts.capture->pre_k = k.middleCols(h * hd, hd).cast<double>();
        }
        rotate_heads(q, phases, nh, hd);
        rotate_heads(k, phases, nh, hd);
        if (opts.capture && opts.capture->layer == l) {
            const int h = opts.capture->head;
            opts.capture->post_q = q.middleCols(h * hd, hd).cast<double>();
            opts.capture->post_k = k.middleCols(h * hd, hd).cast<double>();
        }

        if (trace) {
            auto& tl = trace->layers[l];
            tl.x_in = x;
            tl.inv1 = inv1;
            tl.a = a;
            tl.q = q;
            tl.k = k;
            tl.v = v;
            tl.probs.resize(nh);
        }

        for (int h = 0; h < nh; ++h) {
            s.noalias() = q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose();
            s *= scale;
            detail::softmax_rows_masked(s, causal);
            if (trace) trace->layers[l].probs[h] = s;
            o.middleCols(h * hd, hd).noalias() = s * v.middleCols(h * hd, hd);
        }
        x.noalias() += o * lp.wo;

        detail::rmsnorm_rows(x, lp.ln2_g, b, inv2);
        u.noalias() = b * lp.w1;
        if (trace) {
            auto& tl = trace->layers[l];
            tl.o = o;
            tl.x_mid = x;
            tl.inv2 = inv2;
            tl.b = b;
            tl.u = u;
        }
        MatrixF g = u.unaryExpr([](float t) { return detail::gelu_scalar(t); });
        if (trace) trace->layers[l].g = g;
        x.noalias() += g * lp.w2;
    }

    MatrixF f;
    ArrayF invf;
    detail::rmsnorm_rows(x, ckpt.params.lnf_g, f, invf);
    if (trace) {
        trace->x_final = x;
        trace->invf = invf;
        trace->f = f;
    }
    MatrixF logits;
    logits.noalias() = f * ckpt.params.head;
    return logits;
}

/// Mean negative log-likelihood of a row's target under float logits,
/// accumulated in double.
inline double row_nll(const MatrixF& logits, long row, int target) {
    const auto v = logits.cols();
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits(row, j)));
    double z = 0.0;
    for (Eigen::Index j = 0; j < v; ++j) z += std::exp(static_cast<double>(logits(row, j)) - mx);
    return std::log(z) - (static_cast<double>(logits(row, target)) - mx);
}

/// Per-token NLL. Causal: exact teacher-forced mean over the len-1
/// predictions. MDLM: Monte-Carlo estimate of the masked-reconstruction
/// bound — mc_samples draws of (mask ratio r, mask set), each scored as the
/// 1/r-weighted masked cross-entropy over sequence length. Deterministic for
/// a fixed seed.
inline double eval_nll(const Checkpoint& ckpt, std::span<const int> tokens, int mc_samples,
                       std::uint64_t seed = kDefaultSeed, const RopeConfig* rope_override = nullptr) {
    const long len = static_cast<long>(tokens.size());
    if (len == 0) throw DataError("empty sequence");
    if (mc_samples < 1) throw ParameterError("mc_samples must be >= 1");
    ForwardOptions opts;
    opts.rope_override = rope_override;

    if (ckpt.config.mode == ModelMode::causal) {
        if (len < 2) throw DataError("causal NLL needs at least 2 tokens");
        const MatrixF logits = forward(ckpt, tokens, opts);
        double acc = 0.0;
        for (long i = 0; i + 1 < len; ++i) acc += row_nll(logits, i, tokens[i + 1]);
        return acc / static_cast<double>(len - 1);
    }

    Rng rng(seed);
    std::vector<int> masked(tokens.begin(), tokens.end());
    std::vector<long> idx(len);
    double acc = 0.0;
    for (int s = 0; s < mc_samples; ++s) {
        const double r = rng.next_open_closed();
        const long m = std::min<long>(len, static_cast<long>(std::ceil(r * static_cast<double>(len))));
        for (long i = 0; i < len; ++i) idx[i] = i;
        for (long i = 0; i < m; ++i) {
            const long j = i + static_cast<long>(rng.next_below(static_cast<std::uint64_t>(len - i)));
            std::swap(idx[i], idx[j]);
        }
        std::copy(tokens.begin(), tokens.end(), masked.begin());
        for (long i = 0; i < m; ++i) masked[idx[i]] = ckpt.config.mask_token_id;
        const MatrixF logits = forward(ckpt, masked, opts);
        double draw = 0.0;
        for (long i = 0; i < m; ++i) draw += row_nll(logits, idx[i], tokens[idx[i]]);
        // discrete ratio m/len in place of the drawn r: same bound, finite tail
        acc += draw / static_cast<double>(m);
    }
    return acc / mc_samples;
}

} // namespace rhizon
