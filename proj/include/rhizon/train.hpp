#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rhizon/errors.hpp"
#include "rhizon/model.hpp"
#include "rhizon/parallel.hpp"
#include "rhizon/rng.hpp"

namespace rhizon {

struct TrainHyper {
    long steps = 2000;
    int batch_size = 16;
    double lr = 3e-4;
    double lr_min_frac = 0.1;   ///< cosine decays to lr * lr_min_frac
    long warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int n_jobs = 1;
    long sft_tail = 0;    ///< >0: mask only the last sft_tail positions (prompt stays visible)
    long sft_anchor = 0;  ///< final positions always masked at weight 1 (answer slots)

    void validate() const {
        if (steps < 1) throw ParameterError("steps must be >= 1");
        if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
        if (lr <= 0.0) throw ParameterError("lr must be > 0");
        if (lr_min_frac < 0.0 || lr_min_frac > 1.0) throw ParameterError("lr_min_frac in [0,1]");
        if (warmup_steps < 0) throw ParameterError("warmup_steps must be >= 0");
        if (grad_clip <= 0.0) throw ParameterError("grad_clip must be > 0");
        if (n_jobs < 1) throw ParameterError("n_jobs must be >= 1");
        if (sft_tail < 0) throw ParameterError("sft_tail must be >= 0");
        if (sft_anchor < 0) throw ParameterError("sft_anchor must be >= 0");
        if (sft_anchor > 0 && sft_tail > 0 && sft_anchor > sft_tail)
            throw ParameterError("sft_anchor cannot exceed sft_tail");
    }
};

struct TrainResult {
    std::vector<double> loss_curve;  ///< batch-mean loss per step
};

namespace detail {

inline Params params_like(const Params& src) {
    Params g;
    g.emb = MatrixF::Zero(src.emb.rows(), src.emb.cols());
    g.layers.resize(src.layers.size());
    for (std::size_t l = 0; l < src.layers.size(); ++l) {
        const auto& s = src.layers[l];
        auto& d = g.layers[l];
        d.ln1_g = MatrixF::Zero(s.ln1_g.rows(), 1);
        d.wq = MatrixF::Zero(s.wq.rows(), s.wq.cols());
        d.wk = MatrixF::Zero(s.wk.rows(), s.wk.cols());
        d.wv = MatrixF::Zero(s.wv.rows(), s.wv.cols());
        d.wo = MatrixF::Zero(s.wo.rows(), s.wo.cols());
        d.ln2_g = MatrixF::Zero(s.ln2_g.rows(), 1);
        d.w1 = MatrixF::Zero(s.w1.rows(), s.w1.cols());
        d.w2 = MatrixF::Zero(s.w2.rows(), s.w2.cols());
    }
    g.lnf_g = MatrixF::Zero(src.lnf_g.rows(), 1);
    g.head = MatrixF::Zero(src.head.rows(), src.head.cols());
    return g;
}

inline void zero_params(Params& p) {
    for_each_tensor(p, [](const std::string&, MatrixF& t) { t.setZero(); });
}

/// dy through y = rmsnorm(x) * g. Adds to dgain, overwrites dx.
inline void rmsnorm_backward(const MatrixF& x, const ArrayF& inv_rms, const MatrixF& gain,
                             const MatrixF& dy, MatrixF& dx, MatrixF& dgain) {
    const auto dm = static_cast<float>(x.cols());
    Eigen::ArrayXXf dyg = dy.array().rowwise() * gain.col(0).transpose().array();
    ArrayF srow = (dyg * x.array()).rowwise().sum();
    ArrayF coef = srow * inv_rms.cube() / dm;
    dx = (dyg.colwise() * inv_rms - x.array().colwise() * coef).matrix();
    dgain.col(0) += ((dy.array() * x.array()).colwise() * inv_rms).colwise().sum().transpose().matrix();
}

} // namespace detail

/// Per-position loss weights: zero rows contribute nothing to the loss.
/// Causal uses weight 1/(len-1) on rows 0..len-2 (predicting the next token);
/// MDLM uses 1/m on the m masked rows (predicting the original token).
struct LossSpec {
    std::vector<int> targets;   // per row; ignored where weight == 0
    std::vector<double> weights;
};

/// Forward + cross-entropy + full backward for one sequence. Gradients are
/// accumulated into grads (caller zeroes them). Returns the weighted loss.
inline double forward_backward(const Checkpoint& ckpt, std::span<const int> tokens,
                               const LossSpec& loss, Params& grads) {
    const long len = static_cast<long>(tokens.size());
    if (loss.targets.size() != static_cast<std::size_t>(len) ||
        loss.weights.size() != static_cast<std::size_t>(len))
        throw DimensionError("loss spec length mismatch");

    Trace trace;
    const MatrixF logits = forward(ckpt, tokens, {}, &trace);
    const ModelConfig& cfg = ckpt.config;
    const int dm = cfg.d_model;
    const int hd = cfg.head_dim;
    const int nh = cfg.n_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    const FreqTable freq = build_freq_table(cfg.rope());
    const RopePhases phases = make_rope_phases(freq, len);

    double total = 0.0;
    MatrixF dlogits = MatrixF::Zero(len, cfg.vocab_size);
    for (long i = 0; i < len; ++i) {
        const double w = loss.weights[i];
        if (w == 0.0) continue;
        const int y = loss.targets[i];
        if (y < 0 || y >= cfg.vocab_size) throw DataError("loss target outside vocab");
        total += w * row_nll(logits, i, y);
        // softmax probabilities in double, written back as float grads
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < cfg.vocab_size; ++j) mx = std::max(mx, static_cast<double>(logits(i, j)));
        double z = 0.0;
        for (int j = 0; j < cfg.vocab_size; ++j) z += std::exp(static_cast<double>(logits(i, j)) - mx);
        for (int j = 0; j < cfg.vocab_size; ++j) {
            const double p = std::exp(static_cast<double>(logits(i, j)) - mx) / z;
            dlogits(i, j) = static_cast<float>(w * (p - (j == y ? 1.0 : 0.0)));
        }
    }

    grads.head.noalias() += trace.f.transpose() * dlogits;
    MatrixF dx;
    {
        MatrixF df;
        df.noalias() = dlogits * ckpt.params.head.transpose();
        detail::rmsnorm_backward(trace.x_final, trace.invf, ckpt.params.lnf_g, df, dx, grads.lnf_g);
    }

    MatrixF dg, du, db, dxn, do_, dq, dk, dv, da, ds;
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams& lp = ckpt.params.layers[l];
        LayerParams& gl = grads.layers[l];
        const Trace::Layer& tl = trace.layers[l];

        // mlp block: x = x_mid + gelu(b * w1) * w2
        dg.noalias() = dx * lp.w2.transpose();
        gl.w2.noalias() += tl.g.transpose() * dx;
        du = dg.binaryExpr(tl.u, [](float dgv, float uv) {
            return dgv * detail::gelu_grad_scalar(uv);
        });
        gl.w1.noalias() += tl.b.transpose() * du;
        db.noalias() = du * lp.w1.transpose();
        detail::rmsnorm_backward(tl.x_mid, tl.inv2, lp.ln2_g, db, dxn, gl.ln2_g);
        dx += dxn;

        // attention block: x_mid = x_in + concat_h(P_h V_h) * wo
        do_.noalias() = dx * lp.wo.transpose();
        gl.wo.noalias() += tl.o.transpose() * dx;
        dq.setZero(len, dm);
        dk.setZero(len, dm);
        dv.setZero(len, dm);
        for (int h = 0; h < nh; ++h) {
            const auto qh = tl.q.middleCols(h * hd, hd);
            const auto kh = tl.k.middleCols(h * hd, hd);
            const auto vh = tl.v.middleCols(h * hd, hd);
            const auto doh = do_.middleCols(h * hd, hd);
            const MatrixF& p = tl.probs[h];
            dv.middleCols(h * hd, hd).noalias() = p.transpose() * doh;
            ds.noalias() = doh * vh.transpose();
            // softmax backward: dS = P .* (dS - rowsum(dS .* P))
            ArrayF dot = (ds.array() * p.array()).rowwise().sum();
            ds = (p.array() * (ds.array().colwise() - dot)).matrix();
            ds *= scale;
            dq.middleCols(h * hd, hd).noalias() = ds * kh;
            dk.middleCols(h * hd, hd).noalias() = ds.transpose() * qh;
        }
        rotate_heads(dq, phases, nh, hd, -1.0f);
        rotate_heads(dk, phases, nh, hd, -1.0f);
        gl.wq.noalias() += tl.a.transpose() * dq;
        gl.wk.noalias() += tl.a.transpose() * dk;
        gl.wv.noalias() += tl.a.transpose() * dv;
        da.noalias() = dq * lp.wq.transpose();
        da.noalias() += dk * lp.wk.transpose();
        da.noalias() += dv * lp.wv.transpose();
        detail::rmsnorm_backward(tl.x_in, tl.inv1, lp.ln1_g, da, dxn, gl.ln1_g);
        dx += dxn;
    }

    for (long i = 0; i < len; ++i) grads.emb.row(tokens[i]) += dx.row(i);
    return total;
}

/// Build the loss spec plus model input for one training sequence of the
/// checkpoint's mode. MDLM masking draws from the given stream. A positive
/// masked_tail restricts masking to the last masked_tail positions, the
/// fine-tuning regime where the prompt is always visible. A positive anchor
/// additionally masks the final anchor positions on every draw at weight 1:
/// the answer slots, supervised at full strength regardless of the ratio.
inline void make_training_example(const ModelConfig& cfg, const std::vector<int>& seq, Rng& rng,
                                  std::vector<int>& input, LossSpec& loss, long masked_tail = 0,
                                  long anchor = 0) {
    const long len = static_cast<long>(seq.size());
    input = seq;
    loss.targets.assign(len, 0);
    loss.weights.assign(len, 0.0);
    if (cfg.mode == ModelMode::causal) {
        if (masked_tail > 0 || anchor > 0) throw ParameterError("masked_tail requires the mdlm mode");
        if (len < 2) throw DataError("causal training sequence too short");
        const double w = 1.0 / static_cast<double>(len - 1);
        for (long i = 0; i + 1 < len; ++i) {
            loss.targets[i] = seq[i + 1];
            loss.weights[i] = w;
        }
        return;
    }
    if (masked_tail > len) throw DataError("sequence shorter than masked_tail");
    if (anchor > len) throw DataError("sequence shorter than sft_anchor");
    const long region_end = len - anchor;
    const long region = (masked_tail > 0 ? masked_tail : len) - anchor;
    const long base = region_end - region;
    for (long i = region_end; i < len; ++i) {
        input[i] = cfg.mask_token_id;
        loss.targets[i] = seq[i];
        loss.weights[i] = 1.0;
    }
    if (region < 1) return;
    const double r = rng.next_open_closed();
    const long m =
        std::min<long>(region, static_cast<long>(std::ceil(r * static_cast<double>(region))));
    std::vector<long> idx(region);
    for (long i = 0; i < region; ++i) idx[i] = base + i;
    for (long i = 0; i < m; ++i) {
        const long j = i + static_cast<long>(rng.next_below(static_cast<std::uint64_t>(region - i)));
        std::swap(idx[i], idx[j]);
    }
    // 1/m per masked token: the discrete form of the 1/(r*region) weight,
    // identical in expectation but without the unbounded r -> 0 tail
    const double w = 1.0 / static_cast<double>(m);
    for (long i = 0; i < m; ++i) {
        input[idx[i]] = cfg.mask_token_id;
        loss.targets[idx[i]] = seq[idx[i]];
        loss.weights[idx[i]] = w;
    }
}

/// Adam with linear warmup and cosine decay. Batches are sampled with a
/// per-step stream and per-sequence mask streams; gradients are kept per
/// sequence and reduced in batch order, so results are bit-identical for any
/// n_jobs.
inline TrainResult train(Checkpoint& ckpt, const std::vector<std::vector<int>>& corpus,
                         const TrainHyper& hyper, std::uint64_t seed = kDefaultSeed) {
    hyper.validate();
    ckpt.config.validate();
    if (corpus.empty()) throw DataError("empty training corpus");
    for (const auto& seq : corpus) {
        if (seq.size() < 2) throw DataError("training sequence shorter than 2 tokens");
        for (int t : seq) {
            if (t < 0 || t >= ckpt.config.vocab_size) throw DataError("corpus token outside vocab");
            if (t == ckpt.config.mask_token_id) throw DataError("corpus contains reserved mask token");
        }
    }

    const int bs = hyper.batch_size;
    Params master = detail::params_like(ckpt.params);
    Params m_t = detail::params_like(ckpt.params);
    Params v_t = detail::params_like(ckpt.params);
    std::vector<Params> per_seq;
    per_seq.reserve(bs);
    for (int b = 0; b < bs; ++b) per_seq.push_back(detail::params_like(ckpt.params));
    std::vector<double> per_seq_loss(bs, 0.0);

    // tensor pointers in canonical order; shapes are fixed for the whole run
    auto gather = [](Params& p) {
        std::vector<MatrixF*> out;
        for_each_tensor(p, [&](const std::string&, MatrixF& t) { out.push_back(&t); });
        return out;
    };
    const std::vector<MatrixF*> t_master = gather(master);
    const std::vector<MatrixF*> t_m = gather(m_t);
    const std::vector<MatrixF*> t_v = gather(v_t);
    const std::vector<MatrixF*> t_params = gather(ckpt.params);
    std::vector<std::vector<MatrixF*>> t_seq;
    for (int b = 0; b < bs; ++b) t_seq.push_back(gather(per_seq[b]));
    const std::size_t n_tensors = t_master.size();

    TrainResult result;
    result.loss_curve.reserve(hyper.steps);

    const long start_step = ckpt.train_meta.steps;
    for (long step = 0; step < hyper.steps; ++step) {
        Rng pick(derive_stream(seed, {0xBA7C4ULL, static_cast<std::uint64_t>(start_step + step)}));
        std::vector<long> batch_idx(bs);
        for (int b = 0; b < bs; ++b)
            batch_idx[b] = static_cast<long>(pick.next_below(corpus.size()));

        parallel_for(hyper.n_jobs, bs, [&](long b) {
            detail::zero_params(per_seq[b]);
            Rng mask_rng(derive_stream(seed, {0x5E9ULL, static_cast<std::uint64_t>(start_step + step),
                                              static_cast<std::uint64_t>(b)}));
            std::vector<int> input;
            LossSpec loss;
            make_training_example(ckpt.config, corpus[batch_idx[b]], mask_rng, input, loss,
                                  hyper.sft_tail, hyper.sft_anchor);
            per_seq_loss[b] = forward_backward(ckpt, input, loss, per_seq[b]);
        });

        // fixed-order reduction: sequence 0..bs-1, tensor order within
        detail::zero_params(master);
        double batch_loss = 0.0;
        for (int b = 0; b < bs; ++b) {
            batch_loss += per_seq_loss[b];
            for (std::size_t i = 0; i < n_tensors; ++i) *t_master[i] += *t_seq[b][i];
        }
        batch_loss /= bs;
        const float inv_bs = 1.0f / static_cast<float>(bs);
        for (std::size_t i = 0; i < n_tensors; ++i) *t_master[i] *= inv_bs;

        // global-norm clip, accumulated in double in tensor order
        double sq = 0.0;
        for (std::size_t i = 0; i < n_tensors; ++i)
            sq += t_master[i]->cast<double>().array().square().sum();
        const double gnorm = std::sqrt(sq);
        if (gnorm > hyper.grad_clip) {
            const float fac = static_cast<float>(hyper.grad_clip / gnorm);
            for (std::size_t i = 0; i < n_tensors; ++i) *t_master[i] *= fac;
        }

        // lr schedule on the global step counter
        const long gstep = start_step + step;
        double lr = hyper.lr;
        if (hyper.warmup_steps > 0 && gstep < hyper.warmup_steps) {
            lr = hyper.lr * static_cast<double>(gstep + 1) / static_cast<double>(hyper.warmup_steps);
        } else {
            const long total = start_step + hyper.steps;
            const double span = std::max<double>(1.0, static_cast<double>(total - hyper.warmup_steps));
            const double prog = std::min(1.0, static_cast<double>(gstep - hyper.warmup_steps) / span);
            const double lo = hyper.lr * hyper.lr_min_frac;
            lr = lo + 0.5 * (hyper.lr - lo) * (1.0 + std::cos(prog * 3.14159265358979323846));
        }

        const double t_adam = static_cast<double>(gstep + 1);
        const float c1 = static_cast<float>(1.0 - hyper.beta1);
        const float c2 = static_cast<float>(1.0 - hyper.beta2);
        const float b1 = static_cast<float>(hyper.beta1);
        const float b2 = static_cast<float>(hyper.beta2);
        const double bias1 = 1.0 - std::pow(hyper.beta1, t_adam);
        const double bias2 = 1.0 - std::pow(hyper.beta2, t_adam);
        const float step_scale = static_cast<float>(lr / bias1);
        const float denom_scale = static_cast<float>(1.0 / std::sqrt(bias2));
        const float eps = static_cast<float>(hyper.adam_eps);

        for (std::size_t i = 0; i < n_tensors; ++i) {
            t_m[i]->array() = b1 * t_m[i]->array() + c1 * t_master[i]->array();
            t_v[i]->array() = b2 * t_v[i]->array() + c2 * t_master[i]->array().square();
            t_params[i]->array() -=
                step_scale * t_m[i]->array() /
                ((t_v[i]->array().sqrt() * denom_scale) + eps);
        }

        result.loss_curve.push_back(batch_loss);
    }

    ckpt.train_meta.steps += hyper.steps;
    const std::size_t tail = std::min<std::size_t>(result.loss_curve.size(), 50);
    double acc = 0.0;
    for (std::size_t i = result.loss_curve.size() - tail; i < result.loss_curve.size(); ++i)
        acc += result.loss_curve[i];
    ckpt.train_meta.final_loss = acc / static_cast<double>(tail);
    ckpt.train_meta.seed = seed;
    return result;
}

} // namespace rhizon
