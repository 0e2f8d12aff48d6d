#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <vector>

#include "ttslab/common.hpp"
#include "ttslab/rng.hpp"

namespace ttslab {

// Dense row-major matrix. Double precision is the project default; the
// template keeps a 32-bit instantiation available for speed experiments.
template <class R>
class basic_matrix {
public:
    using value_type = R;

    basic_matrix() = default;
    basic_matrix(i64 rows, i64 cols) : rows_(rows), cols_(cols), data_(check_size(rows, cols), R(0)) {}

    basic_matrix(std::initializer_list<std::initializer_list<R>> init) {
        rows_ = static_cast<i64>(init.size());
        cols_ = rows_ ? static_cast<i64>(init.begin()->size()) : 0;
        data_.reserve(static_cast<size_t>(rows_ * cols_));
        for (const auto& row : init) {
            if (static_cast<i64>(row.size()) != cols_)
                fail(errc::shape, "ragged initializer list");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    i64 rows() const { return rows_; }
    i64 cols() const { return cols_; }
    i64 size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }

    R* row(i64 i) { return data_.data() + i * cols_; }
    const R* row(i64 i) const { return data_.data() + i * cols_; }
    R& operator()(i64 i, i64 j) { return data_[static_cast<size_t>(i * cols_ + j)]; }
    R operator()(i64 i, i64 j) const { return data_[static_cast<size_t>(i * cols_ + j)]; }

    R* data() { return data_.data(); }
    const R* data() const { return data_.data(); }

    void fill(R v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(R(0)); }

    bool same_shape(const basic_matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const basic_matrix& a, const basic_matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    static size_t check_size(i64 rows, i64 cols) {
        if (rows < 0 || cols < 0) fail(errc::shape, "negative matrix dimension");
        return static_cast<size_t>(rows) * static_cast<size_t>(cols);
    }

    i64 rows_ = 0;
    i64 cols_ = 0;
    std::vector<R> data_;
};

using Matrix = basic_matrix<double>;
using Matrix32 = basic_matrix<float>;

template <class R>
std::string shape_str(const basic_matrix<R>& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

template <class R>
bool all_finite(const basic_matrix<R>& m) {
    const R* p = m.data();
    for (i64 i = 0; i < m.size(); ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

// c = a * b
template <class R>
basic_matrix<R> matmul(const basic_matrix<R>& a, const basic_matrix<R>& b) {
    if (a.cols() != b.rows())
        fail(errc::shape, "matmul: inner dimensions differ, " + shape_str(a) + " * " + shape_str(b));
    basic_matrix<R> c(a.rows(), b.cols());
    const i64 n = b.cols();
    for (i64 i = 0; i < a.rows(); ++i) {
        const R* arow = a.row(i);
        R* crow = c.row(i);
        for (i64 k = 0; k < a.cols(); ++k) {
            const R av = arow[k];
            const R* brow = b.row(k);
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// c = a^T * b   (a: m x r, b: m x n, c: r x n)
template <class R>
basic_matrix<R> matmul_tn(const basic_matrix<R>& a, const basic_matrix<R>& b) {
    if (a.rows() != b.rows())
        fail(errc::shape, "matmul_tn: outer dimensions differ, " + shape_str(a) + "^T * " + shape_str(b));
    basic_matrix<R> c(a.cols(), b.cols());
    const i64 n = b.cols();
    for (i64 m = 0; m < a.rows(); ++m) {
        const R* arow = a.row(m);
        const R* brow = b.row(m);
        for (i64 i = 0; i < a.cols(); ++i) {
            const R av = arow[i];
            R* crow = c.row(i);
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// c = a * b^T   (a: m x r, b: n x r, c: m x n)
template <class R>
basic_matrix<R> matmul_nt(const basic_matrix<R>& a, const basic_matrix<R>& b) {
    if (a.cols() != b.cols())
        fail(errc::shape, "matmul_nt: inner dimensions differ, " + shape_str(a) + " * " + shape_str(b) + "^T");
    basic_matrix<R> c(a.rows(), b.rows());
    for (i64 i = 0; i < a.rows(); ++i) {
        const R* arow = a.row(i);
        R* crow = c.row(i);
        for (i64 j = 0; j < b.rows(); ++j) {
            const R* brow = b.row(j);
            R acc = 0;
            for (i64 k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return c;
}

template <class R>
basic_matrix<R> transpose(const basic_matrix<R>& a) {
    basic_matrix<R> t(a.cols(), a.rows());
    for (i64 i = 0; i < a.rows(); ++i)
        for (i64 j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

template <class R>
void add_inplace(basic_matrix<R>& a, const basic_matrix<R>& b) {
    if (!a.same_shape(b)) fail(errc::shape, "add: shape mismatch, " + shape_str(a) + " vs " + shape_str(b));
    R* pa = a.data();
    const R* pb = b.data();
    for (i64 i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

template <class R>
void scale_inplace(basic_matrix<R>& a, R s) {
    R* p = a.data();
    for (i64 i = 0; i < a.size(); ++i) p[i] *= s;
}

// Row-wise softmax with per-row max subtraction, so large logits cannot
// overflow.
template <class R>
void softmax_rows_inplace(basic_matrix<R>& x) {
    for (i64 i = 0; i < x.rows(); ++i) {
        R* p = x.row(i);
        R mx = p[0];
        for (i64 j = 1; j < x.cols(); ++j) mx = std::max(mx, p[j]);
        R sum = 0;
        for (i64 j = 0; j < x.cols(); ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        const R inv = R(1) / sum;
        for (i64 j = 0; j < x.cols(); ++j) p[j] *= inv;
    }
}

template <class R>
basic_matrix<R> softmax_rows(const basic_matrix<R>& x) {
    basic_matrix<R> y = x;
    softmax_rows_inplace(y);
    return y;
}

enum class Mask { none, causal };

// Scaled-dot-product attention over whole matrices: softmax(q k^T [/ sqrt(d)]) v.
// The causal mask hides k/v rows j > i from query row i. `scale` divides
// scores by sqrt(q.cols()); the fusion path runs unscaled, transformer blocks
// scale per head.
template <class R>
basic_matrix<R> attention(const basic_matrix<R>& q, const basic_matrix<R>& k, const basic_matrix<R>& v,
                          Mask mask, bool scale) {
    if (q.cols() != k.cols())
        fail(errc::shape, "attention: q/k width mismatch, " + shape_str(q) + " vs " + shape_str(k));
    if (k.rows() != v.rows())
        fail(errc::shape, "attention: k/v row mismatch, " + shape_str(k) + " vs " + shape_str(v));
    basic_matrix<R> scores = matmul_nt(q, k);
    if (scale) scale_inplace(scores, static_cast<R>(1.0 / std::sqrt(static_cast<double>(q.cols()))));
    if (mask == Mask::causal) {
        for (i64 i = 0; i < scores.rows(); ++i)
            for (i64 j = i + 1; j < scores.cols(); ++j)
                scores(i, j) = -std::numeric_limits<R>::infinity();
    }
    softmax_rows_inplace(scores);
    return matmul(scores, v);
}

inline double gelu(double x) {
    // tanh approximation
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
    const double c = 0.7978845608028654;
    const double x3 = x * x * x;
    const double t = std::tanh(c * (x + 0.044715 * x3));
    const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * dt;
}

template <class R>
basic_matrix<R> random_matrix(i64 rows, i64 cols, Rng& rng, double stddev) {
    basic_matrix<R> m(rows, cols);
    R* p = m.data();
    for (i64 i = 0; i < m.size(); ++i) p[i] = static_cast<R>(rng.truncated_normal(stddev));
    return m;
}

}  // namespace ttslab
