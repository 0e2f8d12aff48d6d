#pragma once

#include <functional>
#include <vector>

#include "ttslab/matrix.hpp"

namespace ttslab::testing {

// Naive oracles, kept independent of the library's kernels on purpose.

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (i64 i = 0; i < a.rows(); ++i)
        for (i64 j = 0; j < b.cols(); ++j) {
            double acc = 0;
            for (i64 k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

inline Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v, bool scale) {
    Matrix out(q.rows(), v.cols());
    const double factor = scale ? 1.0 / std::sqrt(static_cast<double>(q.cols())) : 1.0;
    for (i64 i = 0; i < q.rows(); ++i) {
        std::vector<double> scores(static_cast<size_t>(k.rows()));
        double mx = -1e300;
        for (i64 j = 0; j < k.rows(); ++j) {
            double acc = 0;
            for (i64 c = 0; c < q.cols(); ++c) acc += q(i, c) * k(j, c);
            scores[static_cast<size_t>(j)] = acc * factor;
            mx = std::max(mx, scores[static_cast<size_t>(j)]);
        }
        double sum = 0;
        for (auto& s : scores) {
            s = std::exp(s - mx);
            sum += s;
        }
        for (i64 j = 0; j < k.rows(); ++j)
            for (i64 c = 0; c < v.cols(); ++c) out(i, c) += scores[static_cast<size_t>(j)] / sum * v(j, c);
    }
    return out;
}

inline Matrix random_normal(i64 rows, i64 cols, Rng& rng, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (i64 i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
    return m;
}

// Central finite differences against an analytic gradient. Returns the worst
// excess of |analytic - fd| over rtol*max(|analytic|,|fd|) + atol; a value
// <= 1 passes.
inline double fd_excess(Matrix& values, const Matrix& analytic, const std::function<double()>& loss,
                        double eps = 1e-5, double rtol = 1e-4, double atol = 1e-9) {
    double worst = 0;
    for (i64 i = 0; i < values.size(); ++i) {
        const double saved = values.data()[i];
        values.data()[i] = saved + eps;
        const double up = loss();
        values.data()[i] = saved - eps;
        const double down = loss();
        values.data()[i] = saved;
        const double fd = (up - down) / (2 * eps);
        const double a = analytic.data()[i];
        const double tol = rtol * std::max(std::fabs(a), std::fabs(fd)) + atol;
        worst = std::max(worst, std::fabs(a - fd) / tol);
    }
    return worst;
}

}  // namespace ttslab::testing
