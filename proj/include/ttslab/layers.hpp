#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ttslab/matrix.hpp"

namespace ttslab {

// A trainable tensor plus its gradient accumulator.
struct Param {
    Matrix w;
    Matrix g;

    void init(i64 rows, i64 cols, Rng& rng, double stddev) {
        w = random_matrix<double>(rows, cols, rng, stddev);
        g = Matrix(rows, cols);
    }
    void init_const(i64 rows, i64 cols, double value) {
        w = Matrix(rows, cols);
        w.fill(value);
        g = Matrix(rows, cols);
    }
    void zero_grad() { g.zero(); }
};

// Tapes cache forward intermediates for the hand-written backward passes.
// Every tape is stamped with the owning layer's parameter epoch; mutating
// parameters (an optimizer step) bumps the epoch, and running backward
// against a tape recorded before the mutation is a contract violation.
inline void check_tape_epoch(u64 tape_epoch, u64 layer_epoch, const char* what) {
    if (tape_epoch != layer_epoch)
        fail(errc::contract, std::string(what) + ": stale tape (parameters changed since forward)");
}

// ---------------------------------------------------------------------------
// Linear: y = x W + b
// ---------------------------------------------------------------------------

struct LinearTape {
    Matrix x;
    u64 epoch = 0;
};

struct Linear {
    Param w;  // in x out
    Param b;  // 1 x out
    u64 epoch = 0;

    void init(i64 in, i64 out, Rng& rng, double stddev = 0.02) {
        w.init(in, out, rng, stddev);
        b.init_const(1, out, 0.0);
    }
    void touch() { ++epoch; }
    i64 in_dim() const { return w.w.rows(); }
    i64 out_dim() const { return w.w.cols(); }

    Matrix forward(const Matrix& x, LinearTape* tape = nullptr) const {
        Matrix y = matmul(x, w.w);
        for (i64 i = 0; i < y.rows(); ++i) {
            double* yr = y.row(i);
            const double* br = b.w.row(0);
            for (i64 j = 0; j < y.cols(); ++j) yr[j] += br[j];
        }
        if (tape) {
            tape->x = x;
            tape->epoch = epoch;
        }
        return y;
    }

    Matrix backward(const LinearTape& tape, const Matrix& gout) {
        check_tape_epoch(tape.epoch, epoch, "Linear::backward");
        add_inplace(w.g, matmul_tn(tape.x, gout));
        for (i64 i = 0; i < gout.rows(); ++i) {
            const double* gr = gout.row(i);
            double* bg = b.g.row(0);
            for (i64 j = 0; j < gout.cols(); ++j) bg[j] += gr[j];
        }
        return matmul_nt(gout, w.w);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }
};

// ---------------------------------------------------------------------------
// LayerNorm over rows. Normalization statistics use the biased variance; the
// epsilon is small enough that pre-affine rows have variance within 1e-8 of 1
// for any non-degenerate input.
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-12;

struct LayerNormTape {
    Matrix xhat;
    std::vector<double> inv_std;
    u64 epoch = 0;
};

struct LayerNorm {
    Param gamma;  // 1 x d
    Param beta;   // 1 x d
    u64 epoch = 0;

    void init(i64 d) {
        gamma.init_const(1, d, 1.0);
        beta.init_const(1, d, 0.0);
    }
    void touch() { ++epoch; }

    Matrix forward(const Matrix& x, LayerNormTape* tape = nullptr) const {
        const i64 d = x.cols();
        Matrix y(x.rows(), d);
        if (tape) {
            tape->xhat = Matrix(x.rows(), d);
            tape->inv_std.assign(static_cast<size_t>(x.rows()), 0.0);
            tape->epoch = epoch;
        }
        for (i64 i = 0; i < x.rows(); ++i) {
            const double* xr = x.row(i);
            double mean = 0;
            for (i64 j = 0; j < d; ++j) mean += xr[j];
            mean /= static_cast<double>(d);
            double var = 0;
            for (i64 j = 0; j < d; ++j) {
                const double c = xr[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
            double* yr = y.row(i);
            for (i64 j = 0; j < d; ++j) {
                const double xh = (xr[j] - mean) * inv_std;
                if (tape) tape->xhat(i, j) = xh;
                yr[j] = xh * gamma.w(0, j) + beta.w(0, j);
            }
            if (tape) tape->inv_std[static_cast<size_t>(i)] = inv_std;
        }
        return y;
    }

    Matrix backward(const LayerNormTape& tape, const Matrix& gout) {
        check_tape_epoch(tape.epoch, epoch, "LayerNorm::backward");
        const i64 d = gout.cols();
        Matrix dx(gout.rows(), d);
        for (i64 i = 0; i < gout.rows(); ++i) {
            const double* gr = gout.row(i);
            const double* xh = tape.xhat.row(i);
            double sum_g = 0, sum_gx = 0;
            for (i64 j = 0; j < d; ++j) {
                const double gh = gr[j] * gamma.w(0, j);
                sum_g += gh;
                sum_gx += gh * xh[j];
                gamma.g(0, j) += gr[j] * xh[j];
                beta.g(0, j) += gr[j];
            }
            const double inv_std = tape.inv_std[static_cast<size_t>(i)];
            const double inv_d = 1.0 / static_cast<double>(d);
            double* dxr = dx.row(i);
            for (i64 j = 0; j < d; ++j) {
                const double gh = gr[j] * gamma.w(0, j);
                dxr[j] = inv_std * (gh - inv_d * sum_g - inv_d * xh[j] * sum_gx);
            }
        }
        return dx;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".gamma", gamma);
        f(prefix + ".beta", beta);
    }
};

// ---------------------------------------------------------------------------
// Rotary position embedding applied per head to q/k rows. Attention scores
// then depend on relative offsets only, which is what lets a model trained on
// short sequences keep addressing nearby context at unseen absolute
// positions.
// ---------------------------------------------------------------------------

inline void rope_rotate_row(double* row, i64 head_dim, i64 pos, bool inverse) {
    for (i64 i = 0; i + 1 < head_dim; i += 2) {
        const double theta =
            static_cast<double>(pos) * std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(head_dim));
        const double c = std::cos(theta);
        const double s = inverse ? -std::sin(theta) : std::sin(theta);
        const double x0 = row[i];
        const double x1 = row[i + 1];
        row[i] = x0 * c - x1 * s;
        row[i + 1] = x0 * s + x1 * c;
    }
}

// ---------------------------------------------------------------------------
// Causal multi-head self-attention with optional rotary positions.
// Projections carry no bias.
// ---------------------------------------------------------------------------

struct AttentionTape {
    Matrix x;
    Matrix q, k, v;                // post-rope where applicable
    std::vector<Matrix> probs;     // per head, rows x rows
    Matrix concat;                 // attention output before Wo
    i64 pos0 = 0;
    u64 epoch = 0;
};

// Incremental decode cache: keys/values (post-rope) appended one row per step.
struct AttentionCache {
    Matrix k, v;
    i64 len = 0;

    void reset(i64 max_len, i64 d) {
        k = Matrix(max_len, d);
        v = Matrix(max_len, d);
        len = 0;
    }
};

struct MultiHeadAttention {
    Param wq, wk, wv, wo;  // d x d
    i64 n_heads = 1;
    bool rope = true;
    u64 epoch = 0;

    void init(i64 d, i64 heads, bool use_rope, Rng& rng, double stddev = 0.02) {
        if (d % heads != 0) fail(errc::config, "attention: d_model not divisible by n_heads");
        if (use_rope && (d / heads) % 2 != 0)
            fail(errc::config, "attention: rotary positions need an even head dim");
        n_heads = heads;
        rope = use_rope;
        wq.init(d, d, rng, stddev);
        wk.init(d, d, rng, stddev);
        wv.init(d, d, rng, stddev);
        wo.init(d, d, rng, stddev);
    }
    void touch() { ++epoch; }
    i64 dim() const { return wq.w.rows(); }
    i64 head_dim() const { return dim() / n_heads; }

    void apply_rope(Matrix& m, i64 pos0, bool inverse) const {
        if (!rope) return;
        const i64 hd = head_dim();
        for (i64 i = 0; i < m.rows(); ++i)
            for (i64 h = 0; h < n_heads; ++h) rope_rotate_row(m.row(i) + h * hd, hd, pos0 + i, inverse);
    }

    // Full-sequence causal forward; rows of x are positions pos0, pos0+1, ...
    Matrix forward(const Matrix& x, AttentionTape* tape = nullptr, i64 pos0 = 0) const {
        const i64 t = x.rows();
        const i64 d = dim();
        const i64 hd = head_dim();
        Matrix q = matmul(x, wq.w);
        Matrix k = matmul(x, wk.w);
        Matrix v = matmul(x, wv.w);
        apply_rope(q, pos0, false);
        apply_rope(k, pos0, false);

        Matrix concat(t, d);
        std::vector<Matrix> probs(static_cast<size_t>(n_heads));
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        for (i64 h = 0; h < n_heads; ++h) {
            Matrix scores(t, t);
            for (i64 i = 0; i < t; ++i) {
                const double* qi = q.row(i) + h * hd;
                for (i64 j = 0; j <= i; ++j) {
                    const double* kj = k.row(j) + h * hd;
                    double acc = 0;
                    for (i64 c = 0; c < hd; ++c) acc += qi[c] * kj[c];
                    scores(i, j) = acc * inv_sqrt;
                }
                for (i64 j = i + 1; j < t; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
            }
            softmax_rows_inplace(scores);
            for (i64 i = 0; i < t; ++i) {
                double* out = concat.row(i) + h * hd;
                for (i64 j = 0; j <= i; ++j) {
                    const double p = scores(i, j);
                    const double* vj = v.row(j) + h * hd;
                    for (i64 c = 0; c < hd; ++c) out[c] += p * vj[c];
                }
            }
            probs[static_cast<size_t>(h)] = std::move(scores);
        }
        Matrix y = matmul(concat, wo.w);
        if (tape) {
            tape->x = x;
            tape->q = std::move(q);
            tape->k = std::move(k);
            tape->v = std::move(v);
            tape->probs = std::move(probs);
            tape->concat = std::move(concat);
            tape->pos0 = pos0;
            tape->epoch = epoch;
        }
        return y;
    }

    Matrix backward(const AttentionTape& tape, const Matrix& gout) {
        check_tape_epoch(tape.epoch, epoch, "MultiHeadAttention::backward");
        const i64 t = gout.rows();
        const i64 d = dim();
        const i64 hd = head_dim();
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

        add_inplace(wo.g, matmul_tn(tape.concat, gout));
        Matrix dconcat = matmul_nt(gout, wo.w);

        Matrix dq(t, d), dk(t, d), dv(t, d);
        for (i64 h = 0; h < n_heads; ++h) {
            const Matrix& p = tape.probs[static_cast<size_t>(h)];
            for (i64 i = 0; i < t; ++i) {
                const double* go = dconcat.row(i) + h * hd;
                // dp_j = <dout_i, v_j>; ds = p .* (dp - sum_j p_j dp_j)
                double dot_sum = 0;
                std::vector<double> dp(static_cast<size_t>(i) + 1);
                for (i64 j = 0; j <= i; ++j) {
                    const double* vj = tape.v.row(j) + h * hd;
                    double acc = 0;
                    for (i64 c = 0; c < hd; ++c) acc += go[c] * vj[c];
                    dp[static_cast<size_t>(j)] = acc;
                    dot_sum += p(i, j) * acc;
                }
                for (i64 j = 0; j <= i; ++j) {
                    const double pij = p(i, j);
                    const double ds = pij * (dp[static_cast<size_t>(j)] - dot_sum) * inv_sqrt;
                    const double* qi = tape.q.row(i) + h * hd;
                    const double* kj = tape.k.row(j) + h * hd;
                    double* dqi = dq.row(i) + h * hd;
                    double* dkj = dk.row(j) + h * hd;
                    double* dvj = dv.row(j) + h * hd;
                    for (i64 c = 0; c < hd; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                        dvj[c] += pij * go[c];
                    }
                }
            }
        }
        // Undo the rotation on the gradients before hitting the projections.
        apply_rope(dq, tape.pos0, true);
        apply_rope(dk, tape.pos0, true);

        add_inplace(wq.g, matmul_tn(tape.x, dq));
        add_inplace(wk.g, matmul_tn(tape.x, dk));
        add_inplace(wv.g, matmul_tn(tape.x, dv));
        Matrix dx = matmul_nt(dq, wq.w);
        add_inplace(dx, matmul_nt(dk, wk.w));
        add_inplace(dx, matmul_nt(dv, wv.w));
        return dx;
    }

    // One-row incremental forward against a cache holding all prior steps.
    Matrix step(const Matrix& x_row, AttentionCache& cache) const {
        const i64 d = dim();
        const i64 hd = head_dim();
        const i64 pos = cache.len;
        if (pos >= cache.k.rows()) fail(errc::range, "attention cache overflow");
        Matrix q = matmul(x_row, wq.w);
        Matrix k = matmul(x_row, wk.w);
        Matrix v = matmul(x_row, wv.w);
        if (rope) {
            for (i64 h = 0; h < n_heads; ++h) {
                rope_rotate_row(q.row(0) + h * hd, hd, pos, false);
                rope_rotate_row(k.row(0) + h * hd, hd, pos, false);
            }
        }
        for (i64 c = 0; c < d; ++c) {
            cache.k(pos, c) = k(0, c);
            cache.v(pos, c) = v(0, c);
        }
        cache.len = pos + 1;

        Matrix concat(1, d);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        std::vector<double> scores(static_cast<size_t>(cache.len));
        for (i64 h = 0; h < n_heads; ++h) {
            const double* qh = q.row(0) + h * hd;
            double mx = -std::numeric_limits<double>::infinity();
            for (i64 j = 0; j < cache.len; ++j) {
                const double* kj = cache.k.row(j) + h * hd;
                double acc = 0;
                for (i64 c = 0; c < hd; ++c) acc += qh[c] * kj[c];
                scores[static_cast<size_t>(j)] = acc * inv_sqrt;
                mx = std::max(mx, scores[static_cast<size_t>(j)]);
            }
            double sum = 0;
            for (i64 j = 0; j < cache.len; ++j) {
                scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
                sum += scores[static_cast<size_t>(j)];
            }
            const double inv = 1.0 / sum;
            double* out = concat.row(0) + h * hd;
            for (i64 j = 0; j < cache.len; ++j) {
                const double p = scores[static_cast<size_t>(j)] * inv;
                const double* vj = cache.v.row(j) + h * hd;
                for (i64 c = 0; c < hd; ++c) out[c] += p * vj[c];
            }
        }
        return matmul(concat, wo.w);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".wq", wq);
        f(prefix + ".wk", wk);
        f(prefix + ".wv", wv);
        f(prefix + ".wo", wo);
    }
};

// ---------------------------------------------------------------------------
// Position-wise feed-forward: gelu(x W1 + b1) W2 + b2, hidden = 4 d.
// ---------------------------------------------------------------------------

struct FeedForwardTape {
    LinearTape fc1, fc2;
    Matrix pre;  // pre-activation
    u64 epoch = 0;
};

struct FeedForward {
    Linear fc1, fc2;
    u64 epoch = 0;

    void init(i64 d, Rng& rng, double stddev = 0.02) {
        fc1.init(d, 4 * d, rng, stddev);
        fc2.init(4 * d, d, rng, stddev);
    }
    void touch() {
        ++epoch;
        fc1.touch();
        fc2.touch();
    }

    Matrix forward(const Matrix& x, FeedForwardTape* tape = nullptr) const {
        Matrix pre = fc1.forward(x, tape ? &tape->fc1 : nullptr);
        Matrix act(pre.rows(), pre.cols());
        for (i64 i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
        Matrix y = fc2.forward(act, tape ? &tape->fc2 : nullptr);
        if (tape) {
            tape->pre = std::move(pre);
            tape->epoch = epoch;
        }
        return y;
    }

    Matrix backward(const FeedForwardTape& tape, const Matrix& gout) {
        check_tape_epoch(tape.epoch, epoch, "FeedForward::backward");
        Matrix dact = fc2.backward(tape.fc2, gout);
        for (i64 i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(tape.pre.data()[i]);
        return fc1.backward(tape.fc1, dact);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        fc1.visit(prefix + ".fc1", f);
        fc2.visit(prefix + ".fc2", f);
    }
};

// ---------------------------------------------------------------------------
// Pre-norm transformer block: x += attn(ln1(x)); x += ffn(ln2(x)).
// ---------------------------------------------------------------------------

struct BlockTape {
    LayerNormTape ln1, ln2;
    AttentionTape attn;
    FeedForwardTape ffn;
    u64 epoch = 0;
};

struct BlockCache {
    AttentionCache attn;
};

struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;
    u64 epoch = 0;

    void init(i64 d, i64 heads, bool rope, Rng& rng, double stddev = 0.02) {
        ln1.init(d);
        ln2.init(d);
        attn.init(d, heads, rope, rng, stddev);
        ffn.init(d, rng, stddev);
    }
    void touch() {
        ++epoch;
        ln1.touch();
        ln2.touch();
        attn.touch();
        ffn.touch();
    }

    Matrix forward(const Matrix& x, BlockTape* tape = nullptr, i64 pos0 = 0) const {
        Matrix h = attn.forward(ln1.forward(x, tape ? &tape->ln1 : nullptr), tape ? &tape->attn : nullptr, pos0);
        add_inplace(h, x);
        Matrix out = ffn.forward(ln2.forward(h, tape ? &tape->ln2 : nullptr), tape ? &tape->ffn : nullptr);
        add_inplace(out, h);
        if (tape) tape->epoch = epoch;
        return out;
    }

    Matrix backward(const BlockTape& tape, const Matrix& gout) {
        check_tape_epoch(tape.epoch, epoch, "TransformerBlock::backward");
        Matrix dh = ln2.backward(tape.ln2, ffn.backward(tape.ffn, gout));
        add_inplace(dh, gout);
        Matrix dx = ln1.backward(tape.ln1, attn.backward(tape.attn, dh));
        add_inplace(dx, dh);
        return dx;
    }

    Matrix step(const Matrix& x_row, BlockCache& cache) const {
        Matrix h = attn.step(ln1.forward(x_row), cache.attn);
        add_inplace(h, x_row);
        Matrix out = ffn.forward(ln2.forward(h));
        add_inplace(out, h);
        return out;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        ln1.visit(prefix + ".ln1", f);
        attn.visit(prefix + ".attn", f);
        ln2.visit(prefix + ".ln2", f);
        ffn.visit(prefix + ".ffn", f);
    }
};

// ---------------------------------------------------------------------------
// Cross entropy over logit rows. Targets < 0 mark masked slots; masked rows
// contribute nothing to the loss and receive zero gradient.
// ---------------------------------------------------------------------------

struct CrossEntropyResult {
    double loss_sum = 0;
    i64 count = 0;
    Matrix dlogits;  // d(loss_sum)/d(logits); caller rescales for a mean

    double mean() const { return count ? loss_sum / static_cast<double>(count) : 0.0; }
};

inline CrossEntropyResult cross_entropy_rows(const Matrix& logits, const std::vector<i64>& targets) {
    if (static_cast<i64>(targets.size()) != logits.rows())
        fail(errc::shape, "cross_entropy: target count " + std::to_string(targets.size()) + " vs " +
                              std::to_string(logits.rows()) + " logit rows");
    CrossEntropyResult r;
    r.dlogits = Matrix(logits.rows(), logits.cols());
    for (i64 i = 0; i < logits.rows(); ++i) {
        const i64 tgt = targets[static_cast<size_t>(i)];
        if (tgt < 0) continue;
        if (tgt >= logits.cols()) fail(errc::range, "cross_entropy: target id out of range");
        const double* lr = logits.row(i);
        double mx = lr[0];
        for (i64 j = 1; j < logits.cols(); ++j) mx = std::max(mx, lr[j]);
        double sum = 0;
        for (i64 j = 0; j < logits.cols(); ++j) sum += std::exp(lr[j] - mx);
        const double lse = mx + std::log(sum);
        r.loss_sum += lse - lr[tgt];
        r.count += 1;
        double* dr = r.dlogits.row(i);
        for (i64 j = 0; j < logits.cols(); ++j) dr[j] = std::exp(lr[j] - lse);
        dr[tgt] -= 1.0;
    }
    return r;
}

}  // namespace ttslab
