#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "rhizon/errors.hpp"
#include "rhizon/model.hpp"

namespace rhizon {

/// Run a forward pass and return the captured pre/post-rotary Q/K states of
/// one attention head.
inline ForwardCapture capture_states(const Checkpoint& ckpt, std::span<const int> tokens, int layer,
                                     int head, const RopeConfig* rope_override = nullptr) {
    if (layer < 0 || layer >= ckpt.config.n_layers) throw IndexError("capture layer out of range");
    if (head < 0 || head >= ckpt.config.n_heads) throw IndexError("capture head out of range");
    ForwardCapture cap;
    cap.layer = layer;
    cap.head = head;
    ForwardOptions opts;
    opts.rope_override = rope_override;
    opts.capture = &cap;
    (void)forward(ckpt, tokens, opts);
    return cap;
}

struct Projection {
    MatrixD points;  ///< n x 2
    std::array<double, 2> explained_variance{0.0, 0.0};  ///< fractions, descending
    bool degenerate = false;  ///< fewer than 2 informative directions
};

/// Mean-centered PCA onto the top-2 principal axes. Axis sign is fixed by
/// making the first nonzero loading positive, so output is reproducible
/// across eigensolver conventions.
inline Projection project2d(const MatrixD& rows) {
    if (rows.rows() < 2) throw DataError("project2d needs at least 2 rows");
    if (rows.cols() < 2) throw DimensionError("project2d needs at least 2 columns");
    const long n = rows.rows();
    MatrixD centered = rows.rowwise() - rows.colwise().mean();
    MatrixD cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixD> eig(cov);
    if (eig.info() != Eigen::Success) throw Error("eigendecomposition failed");

    // SelfAdjointEigenSolver sorts ascending; take the last two.
    const long d = cov.rows();
    Eigen::VectorXd v1 = eig.eigenvectors().col(d - 1);
    Eigen::VectorXd v2 = eig.eigenvectors().col(d - 2);
    const double l1 = std::max(0.0, eig.eigenvalues()(d - 1));
    const double l2 = std::max(0.0, eig.eigenvalues()(d - 2));
    double total = 0.0;
    for (long i = 0; i < d; ++i) total += std::max(0.0, eig.eigenvalues()(i));

    auto fix_sign = [](Eigen::VectorXd& v) {
        for (long i = 0; i < v.size(); ++i) {
            if (v(i) != 0.0) {
                if (v(i) < 0.0) v = -v;
                break;
            }
        }
    };
    fix_sign(v1);
    fix_sign(v2);

    Projection p;
    p.points.resize(n, 2);
    p.points.col(0) = centered * v1;
    p.points.col(1) = centered * v2;
    if (total > 0.0) {
        p.explained_variance = {l1 / total, l2 / total};
    }
    p.degenerate = total <= 0.0 || l2 <= 1e-12 * std::max(l1, 1.0);
    return p;
}

/// Cosine distance between the centroid of rows before the boundary and the
/// centroid at or after it. 1 - cos ranges over [0, 2]; a zero-length
/// centroid counts as maximally shifted.
inline double shift_statistic(const MatrixD& rows, long boundary) {
    if (boundary < 1 || boundary >= rows.rows())
        throw ParameterError("boundary must split rows into two non-empty parts");
    const Eigen::VectorXd a = rows.topRows(boundary).colwise().mean();
    const Eigen::VectorXd b = rows.bottomRows(rows.rows() - boundary).colwise().mean();
    const double na = a.norm(), nb = b.norm();
    if (na < 1e-300 || nb < 1e-300) return 1.0;
    return 1.0 - a.dot(b) / (na * nb);
}

inline void write_projection_csv(const Projection& p, std::ostream& os) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "# explained=%.10g,%.10g degenerate=%d\n",
                  p.explained_variance[0], p.explained_variance[1], p.degenerate ? 1 : 0);
    os << buf << "pos,pc1,pc2\n";
    for (long i = 0; i < p.points.rows(); ++i) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g\n", i, p.points(i, 0), p.points(i, 1));
        os << buf;
    }
}

inline void write_projection_csv(const Projection& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_projection_csv(p, out);
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace rhizon
