#pragma once

#include <vector>

#include "ttslab/layers.hpp"

namespace ttslab {

// Two same-shape feature streams; the main stream queries the auxiliary one.
struct FeaturePair {
    Matrix main;  // N x C
    Matrix aux;   // N x C

    void validate() const {
        if (!main.same_shape(aux))
            fail(errc::shape, "feature pair: main " + shape_str(main) + " vs aux " + shape_str(aux));
        if (main.rows() == 0) fail(errc::shape, "feature pair: empty");
    }
};

struct FusionTape {
    LinearTape q_tape, k_tape, v_tape;
    Matrix probs;    // N x N
    Matrix proj_q, proj_k, proj_v;
    FeedForwardTape mlp;
    u64 epoch = 0;
};

// Residual cross-attention fusion: out = MLP(main + softmax(pq(main) pk(aux)^T) pv(aux)).
// The three projections share shapes but are independently parameterized;
// scores are unscaled by default, with sqrt-d scaling behind a flag.
struct FusionLayer {
    Linear proj_q, proj_k, proj_v;  // C -> C
    FeedForward mlp;                // C -> 4C -> C
    bool scaled = false;
    u64 epoch = 0;

    void init(i64 feature_dim, Rng& rng, double stddev = 0.02) {
        proj_q.init(feature_dim, feature_dim, rng, stddev);
        proj_k.init(feature_dim, feature_dim, rng, stddev);
        proj_v.init(feature_dim, feature_dim, rng, stddev);
        mlp.init(feature_dim, rng, stddev);
    }
    void touch() {
        ++epoch;
        proj_q.touch();
        proj_k.touch();
        proj_v.touch();
        mlp.touch();
    }
    i64 dim() const { return proj_q.in_dim(); }

    Matrix forward(const FeaturePair& pair, FusionTape* tape = nullptr) const {
        pair.validate();
        Matrix aq = proj_q.forward(pair.main, tape ? &tape->q_tape : nullptr);
        Matrix ak = proj_k.forward(pair.aux, tape ? &tape->k_tape : nullptr);
        Matrix av = proj_v.forward(pair.aux, tape ? &tape->v_tape : nullptr);
        Matrix scores = matmul_nt(aq, ak);
        if (scaled) scale_inplace(scores, 1.0 / std::sqrt(static_cast<double>(dim())));
        softmax_rows_inplace(scores);
        Matrix fused = matmul(scores, av);
        add_inplace(fused, pair.main);
        Matrix out = mlp.forward(fused, tape ? &tape->mlp : nullptr);
        if (tape) {
            tape->probs = std::move(scores);
            tape->proj_q = std::move(aq);
            tape->proj_k = std::move(ak);
            tape->proj_v = std::move(av);
            tape->epoch = epoch;
        }
        return out;
    }

    // Returns gradients w.r.t. both input streams.
    struct InputGrads {
        Matrix d_main;
        Matrix d_aux;
    };

    InputGrads backward(const FusionTape& tape, const Matrix& gout) {
        check_tape_epoch(tape.epoch, epoch, "FusionLayer::backward");
        Matrix dfused = mlp.backward(tape.mlp, gout);

        Matrix dattn = dfused;  // residual: d_main gets dfused directly as well
        Matrix dprobs = matmul_nt(dattn, tape.proj_v);
        Matrix dav = matmul_tn(tape.probs, dattn);

        // softmax backward, row-wise
        Matrix dscores(dprobs.rows(), dprobs.cols());
        for (i64 i = 0; i < dprobs.rows(); ++i) {
            double dot = 0;
            for (i64 j = 0; j < dprobs.cols(); ++j) dot += dprobs(i, j) * tape.probs(i, j);
            for (i64 j = 0; j < dprobs.cols(); ++j)
                dscores(i, j) = tape.probs(i, j) * (dprobs(i, j) - dot);
        }
        if (scaled) scale_inplace(dscores, 1.0 / std::sqrt(static_cast<double>(dim())));

        Matrix daq = matmul(dscores, tape.proj_k);
        Matrix dak = matmul_tn(dscores, tape.proj_q);

        InputGrads g;
        g.d_main = proj_q.backward(tape.q_tape, daq);
        add_inplace(g.d_main, dfused);
        g.d_aux = proj_k.backward(tape.k_tape, dak);
        add_inplace(g.d_aux, proj_v.backward(tape.v_tape, dav));
        return g;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        proj_q.visit(prefix + ".proj_q", f);
        proj_k.visit(prefix + ".proj_k", f);
        proj_v.visit(prefix + ".proj_v", f);
        mlp.visit(prefix + ".mlp", f);
    }

    void zero_grads() {
        visit("fusion", [](const std::string&, Param& p) { p.zero_grad(); });
    }
};

inline Matrix info_mine(const FeaturePair& pair, const FusionLayer& params) {
    return params.forward(pair);
}

// Synthetic stand-in for a pair of encoders: both streams are noisy random
// projections of one shared latent, and the regression target is a third
// projection of the same latent. Fusing both streams recovers the latent
// better than either stream alone, which gives the fusion layer a trainable
// toy retrieval task.
struct FusionDemo {
    i64 n_rows;
    i64 feature_dim;
    i64 latent_dim;
    double noise = 0.1;
    Matrix to_main, to_aux, to_target;

    FusionDemo(i64 rows, i64 dim, i64 latent, u64 seed) : n_rows(rows), feature_dim(dim), latent_dim(latent) {
        Rng rng(seed);
        to_main = random_matrix<double>(latent, dim, rng, 0.5);
        to_aux = random_matrix<double>(latent, dim, rng, 0.5);
        to_target = random_matrix<double>(latent, dim, rng, 0.5);
    }

    struct Sample {
        FeaturePair pair;
        Matrix target;
    };

    Sample draw(Rng& rng) const {
        Matrix z(n_rows, latent_dim);
        for (i64 i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
        Sample s;
        s.pair.main = matmul(z, to_main);
        s.pair.aux = matmul(z, to_aux);
        for (i64 i = 0; i < s.pair.main.size(); ++i) s.pair.main.data()[i] += noise * rng.normal();
        for (i64 i = 0; i < s.pair.aux.size(); ++i) s.pair.aux.data()[i] += noise * rng.normal();
        s.target = matmul(z, to_target);
        return s;
    }
};

inline double mse_and_grad(const Matrix& pred, const Matrix& target, Matrix& dpred) {
    if (!pred.same_shape(target))
        fail(errc::shape, "mse: " + shape_str(pred) + " vs " + shape_str(target));
    dpred = Matrix(pred.rows(), pred.cols());
    double sum = 0;
    const double inv = 1.0 / static_cast<double>(pred.size());
    for (i64 i = 0; i < pred.size(); ++i) {
        const double diff = pred.data()[i] - target.data()[i];
        sum += diff * diff;
        dpred.data()[i] = 2.0 * diff * inv;
    }
    return sum * inv;
}

}  // namespace ttslab
