// rhizon: rotary-embedding scaling analysis and a small masked-diffusion
// testbed. Subcommands cover the full workflow: scale / coverage reports,
// corpus synthesis, training, retrieval sweeps, likelihood curves and
// hidden-state probes. Every run writes a <output>.manifest.json next to its
// primary output.
//
// Exit codes: 0 ok, 2 usage, 3 unreadable or malformed data file,
// 4 invalid numeric configuration.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "rhizon/checkpoint_io.hpp"
#include "rhizon/config_json.hpp"
#include "rhizon/corpus.hpp"
#include "rhizon/coverage.hpp"
#include "rhizon/manifest.hpp"
#include "rhizon/model.hpp"
#include "rhizon/niah.hpp"
#include "rhizon/probe.hpp"
#include "rhizon/rope.hpp"
#include "rhizon/sampler.hpp"
#include "rhizon/scaling.hpp"
#include "rhizon/train.hpp"
#include "rhizon/version.hpp"

namespace {

using namespace rhizon;

std::uint64_t env_seed() {
    if (const char* s = std::getenv("RHZN_SEED")) {
        char* end = nullptr;
        errno = 0;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (errno != 0 || end == s || *end != '\0')
            throw ConfigError("RHZN_SEED must be an unsigned integer");
        return static_cast<std::uint64_t>(v);
    }
    return kDefaultSeed;
}

RunManifest base_manifest(const std::string& tool, int argc, char** argv, std::uint64_t seed) {
    RunManifest m;
    m.tool = tool;
    for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
    m.seed = seed;
    return m;
}

struct ScaleArgs {
    int head_dim = 128;
    double base = 500000.0;
    long train_len = 4096;
    std::vector<long> targets;
    std::string out;
    std::string json_out;
};

int run_scale(const ScaleArgs& a, int argc, char** argv) {
    RopeConfig cfg{a.head_dim, a.base, a.train_len};
    ScalingReport rep = plan(cfg, a.targets);
    std::cout << "critical_dim " << rep.critical_dim << "\n";
    for (const auto& e : rep.entries)
        std::cout << "target " << e.target_len << "  lambda_raw " << e.lambda_raw << "  lambda "
                  << e.lambda_int << "  bound " << e.bound_at_lambda_int << "\n";
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        if (!os) throw IoError("cannot open " + a.out + " for writing");
        write_csv(rep, os);
        if (!os) throw IoError("write failed for " + a.out);
    }
    if (!a.json_out.empty()) json_io::write_file(json_io::to_json(rep), a.json_out);
    const std::string primary = !a.out.empty() ? a.out : a.json_out;
    if (!primary.empty()) {
        RunManifest m = base_manifest("scale", argc, argv, 0);
        if (!a.out.empty()) m.outputs.push_back(a.out);
        if (!a.json_out.empty()) m.outputs.push_back(a.json_out);
        m.extra = json_io::to_json(cfg);
        write_manifest(m, primary);
    }
    return 0;
}

struct CoverageArgs {
    int head_dim = 128;
    double base = 500000.0;
    long train_len = 4096;
    std::string mode = "bidirectional";
    std::string out;
};

int run_coverage(const CoverageArgs& a, int argc, char** argv) {
    AttentionMode mode;
    if (a.mode == "causal")
        mode = AttentionMode::causal;
    else if (a.mode == "bidirectional")
        mode = AttentionMode::bidirectional;
    else
        throw ParameterError("mode must be causal or bidirectional");
    RopeConfig cfg{a.head_dim, a.base, a.train_len};
    CoverageReport rep = coverage_report(cfg, mode);
    long full = 0;
    for (const auto& d : rep.per_dim) full += d.full_period_covered ? 1 : 0;
    std::cout << "mode " << to_string(rep.mode) << "  rel_range [" << rep.rel_min << ", "
              << rep.rel_max << "]  critical_dim " << rep.critical_dim << "  full_period_dims "
              << full << "/" << rep.per_dim.size() << "\n";
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        if (!os) throw IoError("cannot open " + a.out + " for writing");
        write_csv(rep, os);
        if (!os) throw IoError("write failed for " + a.out);
        RunManifest m = base_manifest("coverage", argc, argv, 0);
        m.outputs.push_back(a.out);
        m.extra = json_io::to_json(cfg);
        write_manifest(m, a.out);
    }
    return 0;
}

struct CorpusArgs {
    std::string out;
    long n_kv = 3000;
    long n_rep = 1000;
    long total_len = 256;
    long len_min = 0;  // 0: fixed at total_len
    long answer_region = 32;
    int payload_len = 4;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_corpus(const CorpusArgs& a, int argc, char** argv) {
    const std::uint64_t seed = a.seed_set ? a.seed : env_seed();
    TokenLayout lay;
    lay.payload_len = a.payload_len;
    const long len_min = a.len_min > 0 ? a.len_min : a.total_len;
    auto corpus =
        make_training_corpus(lay, a.n_kv, a.n_rep, len_min, a.total_len, a.answer_region, seed);
    save_corpus(corpus, a.out);
    std::cout << "wrote " << corpus.size() << " sequences of " << len_min << ".." << a.total_len
              << " tokens to " << a.out << "\n";
    RunManifest m = base_manifest("corpus", argc, argv, seed);
    m.outputs.push_back(a.out);
    m.extra = {{"n_kv", a.n_kv}, {"n_rep", a.n_rep}, {"total_len", a.total_len},
               {"len_min", len_min}, {"answer_region", a.answer_region},
               {"payload_len", a.payload_len}};
    write_manifest(m, a.out);
    return 0;
}

struct TrainArgs {
    std::string corpus_path;
    std::string out;
    std::string init_from;
    std::string mode = "mdlm";
    long steps = 2000;
    int batch_size = 16;
    double lr = 1e-3;
    double rotary_base = 10000.0;
    long train_len = 256;
    int n_layers = 2;
    long sft_tail = 0;
    long sft_anchor = 0;
    int n_jobs = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_train(const TrainArgs& a, int argc, char** argv) {
    const std::uint64_t seed = a.seed_set ? a.seed : env_seed();
    ModelConfig mc;
    if (a.mode == "causal")
        mc.mode = ModelMode::causal;
    else if (a.mode == "mdlm")
        mc.mode = ModelMode::bidirectional_mdlm;
    else
        throw ParameterError("mode must be causal or mdlm");
    mc.rotary_base = a.rotary_base;
    mc.train_len = a.train_len;
    mc.n_layers = a.n_layers;

    const auto corpus = load_corpus(a.corpus_path);
    TrainHyper hyper;
    hyper.steps = a.steps;
    hyper.batch_size = a.batch_size;
    hyper.lr = a.lr;
    hyper.sft_tail = a.sft_tail;
    hyper.sft_anchor = a.sft_anchor;
    hyper.n_jobs = a.n_jobs;

    Checkpoint ckpt = a.init_from.empty() ? init_model(mc, seed) : load_checkpoint(a.init_from);
    TrainResult res = train(ckpt, corpus, hyper, seed);
    save_checkpoint(ckpt, a.out);

    const std::string loss_path = a.out + ".loss.csv";
    {
        std::ofstream os(loss_path);
        if (!os) throw IoError("cannot open " + loss_path + " for writing");
        os << "step,loss\n";
        char buf[64];
        for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i, res.loss_curve[i]);
            os << buf;
        }
    }
    std::cout << "trained " << a.steps << " steps, final loss " << ckpt.train_meta.final_loss
              << ", wrote " << a.out << "\n";
    RunManifest m = base_manifest("train", argc, argv, seed);
    m.outputs = {a.out, loss_path};
    m.extra = {{"model", json_io::to_json(ckpt.config)}, {"hyper", json_io::to_json(hyper)},
               {"corpus", a.corpus_path}};
    write_manifest(m, a.out);
    return 0;
}

struct NiahArgs {
    std::string ckpt_path;
    std::string out;
    std::string window_out;
    std::vector<long> lengths;
    std::vector<double> depths;
    int trials = 8;
    long gen_len = 32;
    long block_len = 32;
    long steps = 32;
    std::string remasking = "low_confidence";
    double lambda = 1.0;
    double threshold = 0.5;
    int payload_len = 4;
    int n_jobs = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_niah(const NiahArgs& a, int argc, char** argv) {
    Checkpoint ckpt = load_checkpoint(a.ckpt_path);
    TokenLayout lay;
    lay.vocab_size = ckpt.config.vocab_size;
    lay.mask_token_id = ckpt.config.mask_token_id;
    lay.payload_len = a.payload_len;

    NiahSpec spec;
    if (!a.lengths.empty()) spec.lengths = a.lengths;
    if (!a.depths.empty()) spec.depths = a.depths;
    spec.trials = a.trials;
    spec.sampler.gen_len = a.gen_len;
    spec.sampler.block_len = a.block_len;
    spec.sampler.steps = a.steps;
    if (a.remasking == "low_confidence")
        spec.sampler.remasking = Remasking::low_confidence;
    else if (a.remasking == "random")
        spec.sampler.remasking = Remasking::random;
    else
        throw ParameterError("remasking must be low_confidence or random");
    spec.seed = a.seed_set ? a.seed : env_seed();

    RopeConfig scaled = scale_base(ckpt.config.rope(), a.lambda);
    const RopeConfig* override_ptr = a.lambda == 1.0 ? nullptr : &scaled;

    GridResult grid = run_grid(ckpt, lay, spec, override_ptr, a.n_jobs);
    emit_heatmap(grid, std::filesystem::path(a.out));

    WindowEstimate est = effective_window(grid, a.threshold);
    std::cout << "effective_window " << est.window << " tokens (rms residual " << est.residual
              << ")\n";
    if (!a.window_out.empty()) {
        nlohmann::json bands = nlohmann::json::array();
        for (auto& [l, d] : est.deepest_band) bands.push_back({{"length", l}, {"deepest_depth", d}});
        json_io::write_file({{"schema_version", kSchemaVersion},
                             {"window", est.window},
                             {"residual", est.residual},
                             {"threshold", a.threshold},
                             {"deepest_band", bands}},
                            a.window_out);
    }
    RunManifest m = base_manifest("niah", argc, argv, spec.seed);
    m.outputs.push_back(a.out);
    if (!a.window_out.empty()) m.outputs.push_back(a.window_out);
    m.extra = {{"spec", json_io::to_json(spec)}, {"lambda", a.lambda},
               {"checkpoint", a.ckpt_path}};
    write_manifest(m, a.out);
    return 0;
}

struct PplArgs {
    std::string ckpt_path;
    std::string text_path;
    std::string out;
    std::vector<long> lengths;
    int mc_samples = 32;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_ppl(const PplArgs& a, int argc, char** argv) {
    Checkpoint ckpt = load_checkpoint(a.ckpt_path);
    const std::uint64_t seed = a.seed_set ? a.seed : env_seed();
    const auto text = load_corpus(a.text_path);
    RopeConfig scaled = scale_base(ckpt.config.rope(), a.lambda);
    const RopeConfig* override_ptr = a.lambda == 1.0 ? nullptr : &scaled;

    std::ofstream os(a.out);
    if (!os) throw IoError("cannot open " + a.out + " for writing");
    os << "seq,length,nll\n";
    char buf[96];
    for (std::size_t si = 0; si < text.size(); ++si) {
        for (long len : a.lengths) {
            if (len < 2 || len > static_cast<long>(text[si].size()))
                throw ParameterError("length " + std::to_string(len) + " outside sequence " +
                                     std::to_string(si));
            std::span<const int> prefix(text[si].data(), static_cast<std::size_t>(len));
            const double nll = eval_nll(ckpt, prefix, a.mc_samples,
                                        derive_stream(seed, {0x991ULL, si}), override_ptr);
            std::snprintf(buf, sizeof buf, "%zu,%ld,%.10g\n", si, len, nll);
            os << buf;
            std::cout << "seq " << si << " len " << len << " nll " << nll << "\n";
        }
    }
    os.flush();
    if (!os) throw IoError("write failed for " + a.out);
    RunManifest m = base_manifest("ppl", argc, argv, seed);
    m.outputs.push_back(a.out);
    m.extra = {{"mc_samples", a.mc_samples}, {"lambda", a.lambda}, {"checkpoint", a.ckpt_path},
               {"text", a.text_path}};
    write_manifest(m, a.out);
    return 0;
}

struct ProbeArgs {
    std::string ckpt_path;
    std::string text_path;
    std::string out_prefix;
    long len = 512;
    int layer = 0;
    int head = 0;
    long boundary = 0;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_probe(const ProbeArgs& a, int argc, char** argv) {
    Checkpoint ckpt = load_checkpoint(a.ckpt_path);
    const std::uint64_t seed = a.seed_set ? a.seed : env_seed();
    std::vector<int> tokens;
    if (!a.text_path.empty()) {
        const auto text = load_corpus(a.text_path);
        tokens = text.front();
        if (a.len > 0 && a.len <= static_cast<long>(tokens.size()))
            tokens.resize(static_cast<std::size_t>(a.len));
    } else {
        TokenLayout lay;
        lay.vocab_size = ckpt.config.vocab_size;
        lay.mask_token_id = ckpt.config.mask_token_id;
        tokens = make_heldout_text(lay, a.len, seed);
    }
    const long boundary = a.boundary > 0 ? a.boundary : ckpt.config.train_len;

    RopeConfig scaled = scale_base(ckpt.config.rope(), a.lambda);
    const RopeConfig* override_ptr = a.lambda == 1.0 ? nullptr : &scaled;
    ForwardCapture cap = capture_states(ckpt, tokens, a.layer, a.head, override_ptr);

    const std::string pq = a.out_prefix + ".pre_q.csv";
    const std::string pk = a.out_prefix + ".pre_k.csv";
    const std::string oq = a.out_prefix + ".post_q.csv";
    const std::string ok = a.out_prefix + ".post_k.csv";
    write_projection_csv(project2d(cap.pre_q), pq);
    write_projection_csv(project2d(cap.pre_k), pk);
    write_projection_csv(project2d(cap.post_q), oq);
    write_projection_csv(project2d(cap.post_k), ok);

    const double shift_pre = shift_statistic(cap.pre_k, boundary);
    const double shift_post = shift_statistic(cap.post_k, boundary);
    const std::string stats = a.out_prefix + ".stats.json";
    json_io::write_file({{"schema_version", kSchemaVersion},
                         {"layer", a.layer},
                         {"head", a.head},
                         {"boundary", boundary},
                         {"len", static_cast<long>(tokens.size())},
                         {"shift_pre_k", shift_pre},
                         {"shift_post_k", shift_post}},
                        stats);
    std::cout << "shift_pre_k " << shift_pre << "  shift_post_k " << shift_post << "\n";
    RunManifest m = base_manifest("probe", argc, argv, seed);
    m.outputs = {pq, pk, oq, ok, stats};
    m.extra = {{"lambda", a.lambda}, {"checkpoint", a.ckpt_path}};
    write_manifest(m, stats);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rotary scaling analysis and masked-diffusion testbed"};
    app.set_version_flag("--version", rhizon::kVersionString);
    app.require_subcommand(1);

    ScaleArgs sa;
    auto* scale = app.add_subcommand("scale", "context-extension scaling report");
    scale->add_option("--head-dim", sa.head_dim, "rotary head dimension");
    scale->add_option("--base", sa.base, "rotary base");
    scale->add_option("--train-len", sa.train_len, "training context length");
    scale->add_option("--targets", sa.targets, "target context lengths")->required()->delimiter(',');
    scale->add_option("--out", sa.out, "CSV output path");
    scale->add_option("--json-out", sa.json_out, "JSON output path");

    CoverageArgs ca;
    auto* cov = app.add_subcommand("coverage", "per-dimension phase coverage report");
    cov->add_option("--head-dim", ca.head_dim, "rotary head dimension");
    cov->add_option("--base", ca.base, "rotary base");
    cov->add_option("--train-len", ca.train_len, "training context length");
    cov->add_option("--mode", ca.mode, "causal or bidirectional");
    cov->add_option("--out", ca.out, "CSV output path");

    CorpusArgs oa;
    auto* corp = app.add_subcommand("corpus", "synthesize a training corpus");
    corp->add_option("--out", oa.out, "corpus output path")->required();
    corp->add_option("--n-kv", oa.n_kv, "retrieval sequences");
    corp->add_option("--n-rep", oa.n_rep, "repetition sequences");
    corp->add_option("--len", oa.total_len, "sequence length (maximum when --len-min given)");
    corp->add_option("--len-min", oa.len_min, "minimum sequence length");
    corp->add_option("--answer-region", oa.answer_region, "answer region length");
    corp->add_option("--payload-len", oa.payload_len, "needle payload tokens");
    corp->add_option("--seed", oa.seed, "rng seed")->each([&](const std::string&) { oa.seed_set = true; });

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train a toy model");
    tr->add_option("--corpus", ta.corpus_path, "corpus file")->required();
    tr->add_option("--out", ta.out, "checkpoint output path")->required();
    tr->add_option("--mode", ta.mode, "causal or mdlm");
    tr->add_option("--steps", ta.steps, "optimizer steps");
    tr->add_option("--batch-size", ta.batch_size, "sequences per step");
    tr->add_option("--lr", ta.lr, "peak learning rate");
    tr->add_option("--rotary-base", ta.rotary_base, "rotary base");
    tr->add_option("--train-len", ta.train_len, "declared training context length");
    tr->add_option("--layers", ta.n_layers, "transformer layers");
    tr->add_option("--sft-tail", ta.sft_tail, "mask only the last N positions (mdlm fine-tune)");
    tr->add_option("--sft-anchor", ta.sft_anchor, "always mask the final N positions at weight 1");
    tr->add_option("--init", ta.init_from, "continue from checkpoint (model flags ignored)");
    tr->add_option("--jobs", ta.n_jobs, "worker threads");
    tr->add_option("--seed", ta.seed, "rng seed")->each([&](const std::string&) { ta.seed_set = true; });

    NiahArgs na;
    auto* ni = app.add_subcommand("niah", "needle-retrieval sweep");
    ni->add_option("--ckpt", na.ckpt_path, "checkpoint path")->required();
    ni->add_option("--out", na.out, "heatmap CSV path")->required();
    ni->add_option("--window-out", na.window_out, "window-estimate JSON path");
    ni->add_option("--lengths", na.lengths, "context lengths")->delimiter(',');
    ni->add_option("--depths", na.depths, "needle depths")->delimiter(',');
    ni->add_option("--trials", na.trials, "trials per cell");
    ni->add_option("--gen-len", na.gen_len, "generated tokens");
    ni->add_option("--block-len", na.block_len, "decode block length");
    ni->add_option("--steps", na.steps, "denoising steps per block");
    ni->add_option("--remasking", na.remasking, "low_confidence or random");
    ni->add_option("--lambda", na.lambda, "rotary base scaling factor");
    ni->add_option("--threshold", na.threshold, "window accuracy threshold");
    ni->add_option("--payload-len", na.payload_len, "needle payload tokens");
    ni->add_option("--jobs", na.n_jobs, "worker threads");
    ni->add_option("--seed", na.seed, "rng seed")->each([&](const std::string&) { na.seed_set = true; });

    PplArgs pa;
    auto* pp = app.add_subcommand("ppl", "per-token negative log-likelihood");
    pp->add_option("--ckpt", pa.ckpt_path, "checkpoint path")->required();
    pp->add_option("--text", pa.text_path, "text file in corpus format")->required();
    pp->add_option("--out", pa.out, "CSV output path")->required();
    pp->add_option("--lengths", pa.lengths, "prefix lengths")->required()->delimiter(',');
    pp->add_option("--mc-samples", pa.mc_samples, "Monte-Carlo draws (mdlm)");
    pp->add_option("--lambda", pa.lambda, "rotary base scaling factor");
    pp->add_option("--seed", pa.seed, "rng seed")->each([&](const std::string&) { pa.seed_set = true; });

    ProbeArgs ra;
    auto* pr = app.add_subcommand("probe", "hidden-state projection probe");
    pr->add_option("--ckpt", ra.ckpt_path, "checkpoint path")->required();
    pr->add_option("--text", ra.text_path, "text file in corpus format");
    pr->add_option("--out", ra.out_prefix, "output path prefix")->required();
    pr->add_option("--len", ra.len, "probe sequence length");
    pr->add_option("--layer", ra.layer, "layer index");
    pr->add_option("--head", ra.head, "head index");
    pr->add_option("--boundary", ra.boundary, "shift boundary (default train_len)");
    pr->add_option("--lambda", ra.lambda, "rotary base scaling factor");
    pr->add_option("--seed", ra.seed, "rng seed")->each([&](const std::string&) { ra.seed_set = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (scale->parsed()) return run_scale(sa, argc, argv);
        if (cov->parsed()) return run_coverage(ca, argc, argv);
        if (corp->parsed()) return run_corpus(oa, argc, argv);
        if (tr->parsed()) return run_train(ta, argc, argv);
        if (ni->parsed()) return run_niah(na, argc, argv);
        if (pp->parsed()) return run_ppl(pa, argc, argv);
        if (pr->parsed()) return run_probe(ra, argc, argv);
    } catch (const rhizon::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rhizon::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rhizon::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
