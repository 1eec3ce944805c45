#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

// Run a shell command, capturing stdout (stderr folded in) and the exit code.
RunResult run(const std::string& cmd) {
    RunResult r;
    FILE* p = popen((cmd + " 2>&1").c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    const int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kCli = RHIZON_CLI_PATH;

struct TmpDir {
    fs::path path;
    TmpDir() : path(fs::temp_directory_path() / ("rhizon_cli_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("scale subcommand writes the report and a manifest") {
    TmpDir tmp;
    const std::string csv = tmp / "scale.csv";
    const auto r = run(kCli + " scale --head-dim 128 --base 500000 --train-len 4096" +
                       " --targets 8192,16384,24576,32768 --out " + csv);
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("critical_dim 64") != std::string::npos);
    const std::string body = slurp(csv);
    CHECK(body.find("target_len,lambda_raw,lambda_int,bound\n") == 0);
    CHECK(body.find("8192,3.399774767,4,") != std::string::npos);
    CHECK(body.find("24576,30.5979729,31,") != std::string::npos);
    CHECK(fs::exists(csv + ".manifest.json"));

    // identical rerun produces identical bytes (the manifest may differ)
    const auto r2 = run(kCli + " scale --head-dim 128 --base 500000 --train-len 4096" +
                        " --targets 8192,16384,24576,32768 --out " + csv);
    REQUIRE(r2.code == 0);
    CHECK(slurp(csv) == body);
}

TEST_CASE("usage errors exit with code 2") {
    const auto missing = run(kCli + " scale");
    CHECK(missing.code == 2);
    const auto nocmd = run(kCli);
    CHECK(nocmd.code == 2);
    const auto badflag = run(kCli + " scale --targets 10 --no-such-flag");
    CHECK(badflag.code == 2);
    const auto help = run(kCli + " --help");
    CHECK(help.code == 0);
    CHECK(help.out.find("scale") != std::string::npos);
}

TEST_CASE("numeric configuration errors exit with code 4") {
    TmpDir tmp;
    // odd head dimension
    const auto odd = run(kCli + " scale --head-dim 127 --targets 8192");
    CHECK(odd.code == 4);
    // train_len below 2*pi makes the law undefined
    const auto tiny = run(kCli + " scale --train-len 6 --targets 8192");
    CHECK(tiny.code == 4);
    const auto mode = run(kCli + " coverage --mode sideways");
    CHECK(mode.code == 4);
    const auto seed = run("RHZN_SEED=banana " + kCli + " corpus --out " + (tmp / "c.txt"));
    CHECK(seed.code == 4);
}

TEST_CASE("coverage subcommand emits per-plane rows") {
    TmpDir tmp;
    const std::string csv = tmp / "cov.csv";
    const auto r = run(kCli + " coverage --head-dim 8 --base 100 --train-len 50" +
                       " --mode bidirectional --out " + csv);
    REQUIRE(r.code == 0);
    const std::string body = slurp(csv);
    CHECK(body.find("# rel_range=[-49,49]") != std::string::npos);
    CHECK(body.find("dim,period,covered_phase_width,full_period\n") != std::string::npos);
}

TEST_CASE("corpus, train, niah, ppl and probe chain together") {
    TmpDir tmp;
    const std::string corpus = tmp / "corpus.txt";
    const std::string ckpt = tmp / "model.rhzn";

    auto r = run(kCli + " corpus --out " + corpus +
                 " --n-kv 24 --n-rep 8 --len 48 --answer-region 8 --seed 7");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    {
        std::ifstream in(corpus);
        std::string line;
        int lines = 0;
        while (std::getline(in, line)) ++lines;
        CHECK(lines == 32);
    }

    // seeds control corpus bytes exactly
    const std::string corpus2 = tmp / "corpus2.txt";
    run(kCli + " corpus --out " + corpus2 + " --n-kv 24 --n-rep 8 --len 48 --answer-region 8 --seed 7");
    CHECK(slurp(corpus) == slurp(corpus2));
    run(kCli + " corpus --out " + corpus2 + " --n-kv 24 --n-rep 8 --len 48 --answer-region 8 --seed 8");
    CHECK(slurp(corpus) != slurp(corpus2));

    r = run(kCli + " train --corpus " + corpus + " --out " + ckpt +
            " --mode mdlm --steps 3 --batch-size 2 --train-len 48 --seed 5");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".loss.csv"));
    CHECK(fs::exists(ckpt + ".manifest.json"));

    const std::string heat = tmp / "heat.csv";
    const std::string window = tmp / "window.json";
    r = run(kCli + " niah --ckpt " + ckpt + " --out " + heat + " --window-out " + window +
            " --lengths 24,48 --depths 0,1 --trials 1 --gen-len 8 --block-len 8 --steps 2" +
            " --jobs 2 --seed 3");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("effective_window") != std::string::npos);
    const std::string heat_body = slurp(heat);
    CHECK(heat_body.find("length,depth,accuracy,needle_pos\n") != std::string::npos);
    CHECK(slurp(window).find("\"window\"") != std::string::npos);

    // rerun with the same seed: identical heatmap bytes
    const std::string heat2 = tmp / "heat2.csv";
    r = run(kCli + " niah --ckpt " + ckpt + " --out " + heat2 +
            " --lengths 24,48 --depths 0,1 --trials 1 --gen-len 8 --block-len 8 --steps 2" +
            " --jobs 1 --seed 3");
    REQUIRE(r.code == 0);
    CHECK(slurp(heat2) == heat_body);

    const std::string ppl = tmp / "ppl.csv";
    r = run(kCli + " ppl --ckpt " + ckpt + " --text " + corpus + " --out " + ppl +
            " --lengths 16,32 --mc-samples 2 --seed 9");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(slurp(ppl).find("seq,length,nll\n") == 0);

    const std::string probe = tmp / "probe";
    r = run(kCli + " probe --ckpt " + ckpt + " --len 32 --layer 1 --head 2 --boundary 16 --out " +
            probe + " --seed 4");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(probe + ".post_k.csv"));
    CHECK(slurp(probe + ".stats.json").find("\"shift_post_k\"") != std::string::npos);

    // lambda below 1 is rejected as a numeric configuration error
    r = run(kCli + " niah --ckpt " + ckpt + " --out " + heat + " --lengths 24 --depths 0" +
            " --trials 1 --gen-len 8 --block-len 8 --steps 1 --lambda 0.5");
    CHECK(r.code == 4);
}

TEST_CASE("unreadable or malformed data files exit with code 3") {
    TmpDir tmp;
    const auto missing = run(kCli + " train --corpus " + (tmp / "nope.txt") + " --out " +
                             (tmp / "m.rhzn") + " --steps 1");
    CHECK(missing.code == 3);

    const std::string garbage = tmp / "garbage.rhzn";
    {
        std::ofstream os(garbage, std::ios::binary);
        os << "this is not a checkpoint";
    }
    const auto bad = run(kCli + " niah --ckpt " + garbage + " --out " + (tmp / "h.csv") +
                         " --lengths 24 --depths 0 --trials 1 --gen-len 8 --block-len 8 --steps 1");
    CHECK(bad.code == 3);

    const std::string badcorpus = tmp / "bad.txt";
    {
        std::ofstream os(badcorpus);
        os << "1 2 three 4\n";
    }
    const auto parse = run(kCli + " train --corpus " + badcorpus + " --out " + (tmp / "m.rhzn") +
                           " --steps 1");
    CHECK(parse.code == 3);
}
