#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "rhizon/model.hpp"
#include "rhizon/probe.hpp"

using namespace rhizon;
using Catch::Matchers::WithinAbs;

namespace {

ModelConfig probe_config() {
    ModelConfig c;
    c.vocab_size = 17;
    c.mask_token_id = 16;
    c.n_layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.head_dim = 4;
    c.rotary_base = 100.0;
    c.train_len = 16;
    c.mode = ModelMode::bidirectional_mdlm;
    return c;
}

} // namespace

TEST_CASE("projection of planar data keeps the plane") {
    // unit circle embedded in 4 dims; variance splits evenly over two axes
    const int n = 128;
    MatrixD rows(n, 4);
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * i / n;
        rows(i, 0) = std::cos(a);
        rows(i, 1) = 0.0;
        rows(i, 2) = std::sin(a);
        rows(i, 3) = 0.0;
    }
    const Projection p = project2d(rows);
    REQUIRE(p.points.rows() == n);
    CHECK_FALSE(p.degenerate);
    CHECK_THAT(p.explained_variance[0], WithinAbs(0.5, 1e-9));
    CHECK_THAT(p.explained_variance[1], WithinAbs(0.5, 1e-9));
    CHECK_THAT(p.explained_variance[0] + p.explained_variance[1], WithinAbs(1.0, 1e-9));
    // radii survive the projection
    for (int i = 0; i < n; ++i) {
        const double r = std::hypot(p.points(i, 0), p.points(i, 1));
        CHECK_THAT(r, WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("collinear data is flagged degenerate") {
    MatrixD rows(5, 3);
    for (int i = 0; i < 5; ++i) {
        rows(i, 0) = i;
        rows(i, 1) = 2.0 * i;
        rows(i, 2) = -i;
    }
    const Projection p = project2d(rows);
    CHECK(p.degenerate);
    CHECK_THAT(p.explained_variance[0], WithinAbs(1.0, 1e-9));
    CHECK_THAT(p.explained_variance[1], WithinAbs(0.0, 1e-9));
    // second coordinate carries nothing
    for (int i = 0; i < 5; ++i) CHECK_THAT(p.points(i, 1), WithinAbs(0.0, 1e-9));
}

TEST_CASE("axis sign follows the first nonzero loading") {
    // data spread along -e0: the fixed sign convention flips the axis to +e0
    MatrixD rows(5, 3);
    rows.setZero();
    for (int i = 0; i < 5; ++i) rows(i, 0) = -static_cast<double>(i - 2);
    const Projection p = project2d(rows);
    // centered data dotted with +e0: {2,1,0,-1,-2}
    for (int i = 0; i < 5; ++i)
        CHECK_THAT(p.points(i, 0), WithinAbs(static_cast<double>(2 - i), 1e-12));
}

TEST_CASE("projection input validation") {
    CHECK_THROWS_AS(project2d(MatrixD::Zero(1, 4)), DataError);
    CHECK_THROWS_AS(project2d(MatrixD::Zero(5, 1)), DimensionError);
}

TEST_CASE("shift statistic separates direction changes") {
    MatrixD rows(6, 2);
    for (int i = 0; i < 3; ++i) {
        rows(i, 0) = 1.0;
        rows(i, 1) = 0.0;
    }
    for (int i = 3; i < 6; ++i) {
        rows(i, 0) = 0.0;
        rows(i, 1) = 1.0;
    }
    CHECK_THAT(shift_statistic(rows, 3), WithinAbs(1.0, 1e-12));  // orthogonal halves

    MatrixD same(4, 2);
    same << 2, 0, 3, 0, 4, 0, 5, 0;
    CHECK_THAT(shift_statistic(same, 2), WithinAbs(0.0, 1e-12));  // same direction

    MatrixD opp(4, 2);
    opp << 1, 0, 1, 0, -1, 0, -1, 0;
    CHECK_THAT(shift_statistic(opp, 2), WithinAbs(2.0, 1e-12));  // reversed

    CHECK_THROWS_AS(shift_statistic(rows, 0), ParameterError);
    CHECK_THROWS_AS(shift_statistic(rows, 6), ParameterError);
}

TEST_CASE("state capture returns the requested head block") {
    const Checkpoint ckpt = init_model(probe_config(), 5);
    std::vector<int> toks{1, 2, 3, 4, 5, 6};
    const ForwardCapture cap = capture_states(ckpt, toks, 1, 1);
    CHECK(cap.pre_q.rows() == 6);
    CHECK(cap.pre_q.cols() == 4);
    CHECK(cap.post_k.rows() == 6);
    CHECK(cap.post_k.cols() == 4);

    // position 0 gets the identity rotation
    for (int j = 0; j < 4; ++j) {
        CHECK(cap.pre_q(0, j) == cap.post_q(0, j));
        CHECK(cap.pre_k(0, j) == cap.post_k(0, j));
    }
    // later positions rotate but keep their per-plane norms
    for (int i = 1; i < 6; ++i) {
        CHECK((cap.pre_k.row(i).array() != cap.post_k.row(i).array()).any());
        for (int pl = 0; pl < 2; ++pl) {
            const double pre = std::hypot(cap.pre_k(i, 2 * pl), cap.pre_k(i, 2 * pl + 1));
            const double post = std::hypot(cap.post_k(i, 2 * pl), cap.post_k(i, 2 * pl + 1));
            CHECK_THAT(post, WithinAbs(pre, 1e-5));
        }
    }

    CHECK_THROWS_AS(capture_states(ckpt, toks, 2, 0), IndexError);
    CHECK_THROWS_AS(capture_states(ckpt, toks, 0, 2), IndexError);
}

TEST_CASE("capture reflects an injected rotary base") {
    const Checkpoint ckpt = init_model(probe_config(), 5);
    std::vector<int> toks{1, 2, 3, 4, 5, 6};
    const ForwardCapture plain = capture_states(ckpt, toks, 0, 0);
    const RopeConfig scaled = scale_base(probe_config().rope(), 4.0);
    const ForwardCapture inj = capture_states(ckpt, toks, 0, 0, &scaled);
    // pre-rotary states are untouched, post-rotary states move
    CHECK(plain.pre_k == inj.pre_k);
    CHECK((plain.post_k.bottomRows(5).array() != inj.post_k.bottomRows(5).array()).any());
}

TEST_CASE("projection csv lists one row per position") {
    MatrixD rows(4, 3);
    rows << 1, 0, 0, 0, 1, 0, -1, 0, 0, 0, -1, 0;
    const Projection p = project2d(rows);
    std::ostringstream os;
    write_projection_csv(p, os);
    const std::string s = os.str();
    CHECK(s.find("# explained=") == 0);
    CHECK(s.find("pos,pc1,pc2\n") != std::string::npos);
    CHECK(std::count(s.begin(), s.end(), '\n') == 2 + 4);
}
