#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rhizon/rng.hpp"
#include "rhizon/rope.hpp"

using namespace rhizon;

namespace {

// Reference rotation through an explicit d x d block-diagonal matrix,
// built independently of apply_rotary.
std::vector<double> rotate_by_matrix(const std::vector<double>& v, long pos, const RopeConfig& cfg) {
    const int d = cfg.head_dim;
    std::vector<double> r(static_cast<std::size_t>(d) * d, 0.0);
    for (int n = 0; n < d / 2; ++n) {
        const double theta = std::pow(cfg.rotary_base, -2.0 * n / d);
        const double a = theta * static_cast<double>(pos);
        const double c = std::cos(a), s = std::sin(a);
        // out = v * R with R acting on the (2n, 2n+1) plane
        r[(2 * n) * d + (2 * n)] = c;
        r[(2 * n) * d + (2 * n + 1)] = s;
        r[(2 * n + 1) * d + (2 * n)] = -s;
        r[(2 * n + 1) * d + (2 * n + 1)] = c;
    }
    std::vector<double> out(d, 0.0);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) out[j] += v[i] * r[i * d + j];
    return out;
}

std::vector<double> random_vec(Rng& rng, int d) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.next_normal();
    return v;
}

} // namespace

TEST_CASE("freq table matches frozen reference values") {
    const RopeConfig cfg{128, 500000.0, 4096};
    const FreqTable t = build_freq_table(cfg);
    REQUIRE(t.head_dim() == 128);
    REQUIRE(t.angles.size() == 64);

    CHECK(t.angles[0] == 1.0);
    CHECK_THAT(t.angles[1], Catch::Matchers::WithinRel(0.8146172338565447, 1e-14));
    CHECK_THAT(t.angles[63], Catch::Matchers::WithinRel(2.455140791131609e-06, 1e-14));
    CHECK_THAT(t.periods[0], Catch::Matchers::WithinRel(6.283185307179586, 1e-14));
    CHECK_THAT(t.periods[32], Catch::Matchers::WithinRel(4442.882938158366, 1e-12));
    CHECK_THAT(t.periods[63], Catch::Matchers::WithinRel(2559195.5173713593, 1e-12));

    // angles strictly decreasing, periods strictly increasing
    for (int n = 1; n < 64; ++n) {
        CHECK(t.angles[n] < t.angles[n - 1]);
        CHECK(t.periods[n] > t.periods[n - 1]);
    }
    CHECK_THAT(period(32, cfg), Catch::Matchers::WithinRel(4442.882938158366, 1e-12));
}

TEST_CASE("rotation at a hand-checked position") {
    const RopeConfig cfg{4, 100.0, 64};
    const FreqTable t = build_freq_table(cfg);
    const std::vector<double> v{1.0, 0.0, 0.0, 1.0};
    const auto out = apply_rotary(v, 3, t);
    // plane 0: theta=1, angle 3; plane 1: theta=0.1, angle 0.3
    CHECK_THAT(out[0], Catch::Matchers::WithinAbs(-0.9899924966004454, 1e-15));
    CHECK_THAT(out[1], Catch::Matchers::WithinAbs(0.1411200080598672, 1e-15));
    CHECK_THAT(out[2], Catch::Matchers::WithinAbs(-0.29552020666133955, 1e-15));
    CHECK_THAT(out[3], Catch::Matchers::WithinAbs(0.955336489125606, 1e-15));
}

TEST_CASE("position zero is the identity") {
    const RopeConfig cfg{32, 10000.0, 256};
    const FreqTable t = build_freq_table(cfg);
    Rng rng(11);
    const auto v = random_vec(rng, 32);
    const auto out = apply_rotary(v, 0, t);
    for (int i = 0; i < 32; ++i) CHECK(out[i] == v[i]);
}

TEST_CASE("rotation agrees with the explicit matrix form") {
    Rng rng(7);
    for (int it = 0; it < 300; ++it) {
        const int half = 1 + static_cast<int>(rng.next_below(32));
        const RopeConfig cfg{2 * half, 2.0 + rng.next_double() * 999998.0,
                             1 + static_cast<long>(rng.next_below(8192))};
        const FreqTable t = build_freq_table(cfg);
        const auto v = random_vec(rng, cfg.head_dim);
        const long pos = static_cast<long>(rng.next_below(100000));
        const auto got = apply_rotary(v, pos, t);
        const auto want = rotate_by_matrix(v, pos, cfg);
        for (int i = 0; i < cfg.head_dim; ++i)
            REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-9));
    }
}

TEST_CASE("rotation preserves the norm") {
    Rng rng(13);
    const RopeConfig cfg{64, 50000.0, 1024};
    const FreqTable t = build_freq_table(cfg);
    for (int it = 0; it < 1000; ++it) {
        const auto v = random_vec(rng, 64);
        const long pos = static_cast<long>(rng.next_below(1000000));
        const auto out = apply_rotary(v, pos, t);
        double n1 = 0.0, n2 = 0.0;
        for (int i = 0; i < 64; ++i) {
            n1 += v[i] * v[i];
            n2 += out[i] * out[i];
        }
        REQUIRE_THAT(n2, Catch::Matchers::WithinRel(n1, 1e-12));
    }
}

TEST_CASE("planes are the adjacent index pairs") {
    // a vector supported on one (2n, 2n+1) pair stays supported there
    const RopeConfig cfg{16, 1000.0, 128};
    const FreqTable t = build_freq_table(cfg);
    for (int n = 0; n < 8; ++n) {
        std::vector<double> v(16, 0.0);
        v[2 * n] = 0.6;
        v[2 * n + 1] = -1.2;
        const auto out = apply_rotary(v, 37, t);
        for (int i = 0; i < 16; ++i) {
            if (i == 2 * n || i == 2 * n + 1) continue;
            CHECK(out[i] == 0.0);
        }
        double norm = out[2 * n] * out[2 * n] + out[2 * n + 1] * out[2 * n + 1];
        CHECK_THAT(norm, Catch::Matchers::WithinRel(0.6 * 0.6 + 1.2 * 1.2, 1e-12));
    }
}

TEST_CASE("attention score depends only on relative position") {
    Rng rng(21);
    const RopeConfig cfg{32, 10000.0, 256};
    const FreqTable t = build_freq_table(cfg);
    for (int it = 0; it < 500; ++it) {
        const auto q = random_vec(rng, 32);
        const auto k = random_vec(rng, 32);
        const long tpos = static_cast<long>(rng.next_below(50000));
        const long spos = static_cast<long>(rng.next_below(50000));
        const long shift = static_cast<long>(rng.next_below(50000));
        const double a = attention_score(q, k, tpos, spos, t);
        const double b = attention_score(q, k, tpos + shift, spos + shift, t);
        REQUIRE_THAT(b, Catch::Matchers::WithinAbs(a, 1e-8));
    }
}

TEST_CASE("attention score equals the rotated inner product by matrices") {
    Rng rng(31);
    const RopeConfig cfg{8, 700.0, 64};
    for (int it = 0; it < 200; ++it) {
        const auto q = random_vec(rng, 8);
        const auto k = random_vec(rng, 8);
        const long tpos = static_cast<long>(rng.next_below(10000));
        const long spos = static_cast<long>(rng.next_below(10000));
        const FreqTable t = build_freq_table(cfg);
        const auto qr = rotate_by_matrix(q, tpos, cfg);
        const auto kr = rotate_by_matrix(k, spos, cfg);
        double want = 0.0;
        for (int i = 0; i < 8; ++i) want += qr[i] * kr[i];
        REQUIRE_THAT(attention_score(q, k, tpos, spos, t),
                     Catch::Matchers::WithinAbs(want, 1e-9));
    }
}

TEST_CASE("base scaling multiplies the rotary base") {
    const RopeConfig cfg{128, 500000.0, 4096};
    const RopeConfig s1 = scale_base(cfg, 1.0);
    CHECK(s1.rotary_base == 500000.0);
    const RopeConfig s4 = scale_base(cfg, 4.0);
    CHECK(s4.rotary_base == 2000000.0);
    CHECK(s4.head_dim == cfg.head_dim);
    CHECK(s4.train_len == cfg.train_len);
    CHECK_THROWS_AS(scale_base(cfg, 0.5), ParameterError);
    CHECK_THROWS_AS(scale_base(cfg, 0.999999), ParameterError);
}

TEST_CASE("config and argument validation") {
    CHECK_THROWS_AS(build_freq_table(RopeConfig{3, 100.0, 64}), ConfigError);
    CHECK_THROWS_AS(build_freq_table(RopeConfig{0, 100.0, 64}), ConfigError);
    CHECK_THROWS_AS(build_freq_table(RopeConfig{32, 1.0, 64}), ConfigError);
    CHECK_THROWS_AS(build_freq_table(RopeConfig{32, 100.0, 0}), ConfigError);
    CHECK_THROWS_AS(period(-1, RopeConfig{32, 100.0, 64}), IndexError);
    CHECK_THROWS_AS(period(16, RopeConfig{32, 100.0, 64}), IndexError);

    const FreqTable t = build_freq_table(RopeConfig{8, 100.0, 64});
    const std::vector<double> bad(7, 0.0);
    CHECK_THROWS_AS(apply_rotary(bad, 0, t), DimensionError);
    const std::vector<double> q(8, 1.0), k(7, 1.0);
    CHECK_THROWS_AS(attention_score(q, k, 0, 0, t), DimensionError);
}
