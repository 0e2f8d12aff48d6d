#pragma once

#include <string>
#include <vector>

#include "ttslab/layers.hpp"
#include "ttslab/vocab.hpp"

namespace ttslab {

// Parameter groups. "base" mirrors the pretrained backbone: frozen during the
// first training stage. Everything introduced for speech generation (fused
// embedding table, adapter blocks, final norm, lane heads) is "adapter" and
// trains in both stages.
enum class ParamGroup { base, adapter };

inline const char* group_name(ParamGroup g) { return g == ParamGroup::base ? "base" : "adapter"; }

// rotary: relative offsets only (length-generalizing addressing).
// learned_absolute: one trained row per global step.
// chunk_relative: rotary plus a trained row per step-within-chunk; chunked
// decoding keeps these indices inside the trained range no matter how long
// the text gets, which is what lets a short-trained model stay aligned.
enum class Positional { rotary, learned_absolute, chunk_relative };

struct SpeechLMConfig {
    i64 d_model = 128;
    i64 n_layers_base = 4;
    i64 n_layers_adapter = 2;
    i64 n_heads = 4;
    i64 max_seq_len = 2048;
    ExtendedVocab vocab{64, 64, 4};
    bool tie_heads = false;
    Positional positional = Positional::chunk_relative;
    bool pad_embeddings_fixed_zero = false;
    double init_std = 0.02;

    void validate() const {
        if (d_model < 1 || d_model % n_heads != 0)
            fail(errc::config, "model.d_model: must be positive and divisible by n_heads");
        if (n_layers_base < 1) fail(errc::config, "model.n_layers_base: must be >= 1");
        if (n_layers_adapter < 1) fail(errc::config, "model.n_layers_adapter: must be >= 1");
        if (max_seq_len < 1) fail(errc::config, "model.max_seq_len: must be >= 1");
    }
};

// Fused input embedding: the mean of the text embedding and the k lane
// embeddings. Pad markers are ordinary rows of the table, not zeros.
inline Matrix fuse_embed(const StepTokens& step, const Matrix& embed, const ExtendedVocab& vocab) {
    step.validate(vocab);
    const i64 d = embed.cols();
    Matrix h(1, d);
    const double inv = 1.0 / static_cast<double>(vocab.k + 1);
    const double* text_row = embed.row(vocab.text_row(step.text));
    for (i64 c = 0; c < d; ++c) h(0, c) = text_row[c];
    for (i64 lane = 0; lane < vocab.k; ++lane) {
        const double* lr = embed.row(vocab.lane_row(lane, step.lanes[static_cast<size_t>(lane)]));
        for (i64 c = 0; c < d; ++c) h(0, c) += lr[c];
    }
    for (i64 c = 0; c < d; ++c) h(0, c) *= inv;
    return h;
}

struct SpeechLMTape {
    std::vector<StepTokens> steps;
    i64 pos0 = 0;
    std::vector<i64> pos_rows;  // positional-table rows used, when the table exists
    std::vector<BlockTape> blocks;
    LayerNormTape ln_f;
    std::vector<LinearTape> heads;
    Matrix final_hidden;
    u64 epoch = 0;
};

struct SpeechLMOutput {
    Matrix base_hidden;               // backbone output, one row per step
    std::vector<Matrix> lane_logits;  // k matrices, steps x lane_width
};

// Incremental decode state: one attention cache per block plus the running
// position. History is append-only.
struct SpeechLMState {
    std::vector<BlockCache> caches;
    i64 len = 0;
};

class SpeechLM {
public:
    SpeechLM() = default;
    SpeechLM(const SpeechLMConfig& cfg, u64 seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        const bool rope = cfg_.positional != Positional::learned_absolute;
        embed_.init(cfg_.vocab.total_rows(), cfg_.d_model, rng, cfg_.init_std);
        if (cfg_.pad_embeddings_fixed_zero) zero_pad_rows(embed_.w);
        if (cfg_.positional != Positional::rotary)
            pos_embed_.init(cfg_.max_seq_len, cfg_.d_model, rng, cfg_.init_std);
        blocks_.resize(static_cast<size_t>(cfg_.n_layers_base + cfg_.n_layers_adapter));
        for (auto& b : blocks_) b.init(cfg_.d_model, cfg_.n_heads, rope, rng, cfg_.init_std);
        ln_f_.init(cfg_.d_model);
        const i64 n_heads_out = cfg_.tie_heads ? 1 : cfg_.vocab.k;
        heads_.resize(static_cast<size_t>(n_heads_out));
        for (auto& h : heads_) h.init(cfg_.d_model, cfg_.vocab.lane_width(), rng, cfg_.init_std);
    }

    const SpeechLMConfig& config() const { return cfg_; }
    const ExtendedVocab& vocab() const { return cfg_.vocab; }
    u64 epoch() const { return epoch_; }

    // Signals that parameters were mutated; outstanding tapes become stale.
    void touch() {
        ++epoch_;
        for (auto& b : blocks_) b.touch();
        ln_f_.touch();
        for (auto& h : heads_) h.touch();
    }

    // `chunk_pos` carries the step-within-chunk index per row for the
    // chunk_relative mode; absent, positions fall back to pos0 + i.
    SpeechLMOutput forward(const std::vector<StepTokens>& steps, SpeechLMTape* tape = nullptr,
                           i64 pos0 = 0, const std::vector<i64>* chunk_pos = nullptr) const {
        const i64 t = static_cast<i64>(steps.size());
        if (t == 0) fail(errc::shape, "forward: empty step sequence");
        if (pos0 + t > cfg_.max_seq_len)
            fail(errc::range, "forward: sequence length " + std::to_string(pos0 + t) + " exceeds max_seq_len " +
                                  std::to_string(cfg_.max_seq_len));
        if (chunk_pos && static_cast<i64>(chunk_pos->size()) != t)
            fail(errc::shape, "forward: chunk position count differs from step count");
        std::vector<i64> pos_rows;
        if (cfg_.positional != Positional::rotary) {
            pos_rows.resize(static_cast<size_t>(t));
            for (i64 i = 0; i < t; ++i) {
                i64 row = cfg_.positional == Positional::chunk_relative && chunk_pos
                              ? (*chunk_pos)[static_cast<size_t>(i)]
                              : pos0 + i;
                if (row < 0 || row >= cfg_.max_seq_len)
                    fail(errc::range, "forward: position row out of table range");
                pos_rows[static_cast<size_t>(i)] = row;
            }
        }
        Matrix x(t, cfg_.d_model);
        for (i64 i = 0; i < t; ++i) {
            Matrix row = fuse_embed(steps[static_cast<size_t>(i)], embed_.w, cfg_.vocab);
            if (!pos_rows.empty()) {
                const double* pr = pos_embed_.w.row(pos_rows[static_cast<size_t>(i)]);
                for (i64 c = 0; c < cfg_.d_model; ++c) row(0, c) += pr[c];
            }
            for (i64 c = 0; c < cfg_.d_model; ++c) x(i, c) = row(0, c);
        }
        if (tape) {
            tape->steps = steps;
            tape->pos0 = pos0;
            tape->pos_rows = pos_rows;
            tape->blocks.resize(blocks_.size());
            tape->heads.resize(heads_.size());
            tape->epoch = epoch_;
        }
        SpeechLMOutput out;
        for (size_t b = 0; b < blocks_.size(); ++b) {
            x = blocks_[b].forward(x, tape ? &tape->blocks[b] : nullptr, pos0);
            if (b + 1 == static_cast<size_t>(cfg_.n_layers_base)) out.base_hidden = x;
        }
        Matrix h = ln_f_.forward(x, tape ? &tape->ln_f : nullptr);
        if (tape) tape->final_hidden = h;
        out.lane_logits.resize(static_cast<size_t>(cfg_.vocab.k));
        for (i64 lane = 0; lane < cfg_.vocab.k; ++lane) {
            const size_t hi = cfg_.tie_heads ? 0 : static_cast<size_t>(lane);
            out.lane_logits[static_cast<size_t>(lane)] = heads_[hi].forward(h, tape ? &tape->heads[hi] : nullptr);
        }
        return out;
    }

    // Mean cross entropy over non-masked lane slots; targets[t][lane] is a
    // lane code or -1 for masked. Gradients accumulate into params.
    double loss_and_grad(const std::vector<StepTokens>& steps,
                         const std::vector<std::vector<LaneCode>>& targets, i64* slots_out = nullptr,
                         const std::vector<i64>* chunk_pos = nullptr) {
        SpeechLMTape tape;
        SpeechLMOutput out = forward(steps, &tape, 0, chunk_pos);
        const i64 t = static_cast<i64>(steps.size());
        if (static_cast<i64>(targets.size()) != t)
            fail(errc::shape, "loss: " + std::to_string(targets.size()) + " target steps vs " + std::to_string(t));

        double loss_sum = 0;
        i64 slots = 0;
        std::vector<CrossEntropyResult> ce(static_cast<size_t>(cfg_.vocab.k));
        for (i64 lane = 0; lane < cfg_.vocab.k; ++lane) {
            std::vector<i64> lane_targets(static_cast<size_t>(t));
            for (i64 i = 0; i < t; ++i) {
                const auto& row = targets[static_cast<size_t>(i)];
                if (static_cast<i64>(row.size()) != cfg_.vocab.k)
                    fail(errc::shape, "loss: target row lane count mismatch");
                lane_targets[static_cast<size_t>(i)] = row[static_cast<size_t>(lane)];
            }
            ce[static_cast<size_t>(lane)] =
                cross_entropy_rows(out.lane_logits[static_cast<size_t>(lane)], lane_targets);
            loss_sum += ce[static_cast<size_t>(lane)].loss_sum;
            slots += ce[static_cast<size_t>(lane)].count;
        }
        if (slots_out) *slots_out = slots;
        if (slots == 0) return 0.0;

        const double inv = 1.0 / static_cast<double>(slots);
        Matrix dh(t, cfg_.d_model);
        for (i64 lane = 0; lane < cfg_.vocab.k; ++lane) {
            auto& c = ce[static_cast<size_t>(lane)];
            scale_inplace(c.dlogits, inv);
            const size_t hi = cfg_.tie_heads ? 0 : static_cast<size_t>(lane);
            add_inplace(dh, heads_[hi].backward(tape.heads[hi], c.dlogits));
        }
        backward_from_hidden(tape, dh);
        return loss_sum * inv;
    }

    // Backward pass below the heads; dh is the gradient at the final norm
    // output.
    void backward_from_hidden(const SpeechLMTape& tape, const Matrix& dh) {
        check_tape_epoch(tape.epoch, epoch_, "SpeechLM::backward");
        Matrix dx = ln_f_.backward(tape.ln_f, dh);
        for (size_t b = blocks_.size(); b-- > 0;) dx = blocks_[b].backward(tape.blocks[b], dx);
        const double inv = 1.0 / static_cast<double>(cfg_.vocab.k + 1);
        for (i64 i = 0; i < dx.rows(); ++i) {
            const auto& step = tape.steps[static_cast<size_t>(i)];
            const double* dr = dx.row(i);
            scatter_row(embed_.g, cfg_.vocab.text_row(step.text), dr, inv);
            for (i64 lane = 0; lane < cfg_.vocab.k; ++lane)
                scatter_row(embed_.g, cfg_.vocab.lane_row(lane, step.lanes[static_cast<size_t>(lane)]), dr, inv);
            if (!tape.pos_rows.empty())
                scatter_row(pos_embed_.g, tape.pos_rows[static_cast<size_t>(i)], dr, 1.0);
        }
        if (cfg_.pad_embeddings_fixed_zero) zero_pad_rows(embed_.g);
    }

    // --- incremental decoding ---

    SpeechLMState make_state() const {
        SpeechLMState st;
        st.caches.resize(blocks_.size());
        for (auto& c : st.caches) c.attn.reset(cfg_.max_seq_len, cfg_.d_model);
        return st;
    }

    // Feed one step; returns the k lane logit rows for the next prediction.
    // `chunk_pos` is the step-within-chunk index (chunk_relative mode only;
    // negative falls back to the global position).
    std::vector<Matrix> step(SpeechLMState& state, const StepTokens& step_tokens, i64 chunk_pos = -1) const {
        if (state.len >= cfg_.max_seq_len) fail(errc::range, "step: sequence exceeds max_seq_len");
        Matrix x = fuse_embed(step_tokens, embed_.w, cfg_.vocab);
        if (cfg_.positional != Positional::rotary) {
            i64 row = cfg_.positional == Positional::chunk_relative && chunk_pos >= 0 ? chunk_pos : state.len;
            if (row >= cfg_.max_seq_len) fail(errc::range, "step: position row out of table range");
            const double* pr = pos_embed_.w.row(row);
            for (i64 c = 0; c < cfg_.d_model; ++c) x(0, c) += pr[c];
        }
        for (size_t b = 0; b < blocks_.size(); ++b) x = blocks_[b].step(x, state.caches[b]);
        Matrix h = ln_f_.forward(x);
        std::vector<Matrix> logits(static_cast<size_t>(cfg_.vocab.k));
        for (i64 lane = 0; lane < cfg_.vocab.k; ++lane)
            logits[static_cast<size_t>(lane)] = heads_[cfg_.tie_heads ? 0 : static_cast<size_t>(lane)].forward(h);
        state.len += 1;
        return logits;
    }

    // Declared parameter order; checkpoints and optimizers rely on it.
    template <class F>
    void visit_params(F&& f) {
        f(std::string("embed"), ParamGroup::adapter, embed_);
        if (cfg_.positional != Positional::rotary)
            f(std::string("pos_embed"), ParamGroup::adapter, pos_embed_);
        for (size_t b = 0; b < blocks_.size(); ++b) {
            const ParamGroup g =
                b < static_cast<size_t>(cfg_.n_layers_base) ? ParamGroup::base : ParamGroup::adapter;
            const std::string prefix =
                (g == ParamGroup::base ? "base." : "adapter.") + std::string("block") + std::to_string(
                    g == ParamGroup::base ? b : b - static_cast<size_t>(cfg_.n_layers_base));
            blocks_[b].visit(prefix, [&](const std::string& name, Param& p) { f(name, g, p); });
        }
        ln_f_.visit("ln_f", [&](const std::string& name, Param& p) { f(name, ParamGroup::adapter, p); });
        for (size_t h = 0; h < heads_.size(); ++h)
            heads_[h].visit("head" + std::to_string(h),
                            [&](const std::string& name, Param& p) { f(name, ParamGroup::adapter, p); });
    }

    void zero_grads() {
        visit_params([](const std::string&, ParamGroup, Param& p) { p.zero_grad(); });
    }

    const Matrix& embedding_table() const { return embed_.w; }

public:
    // Decoder-facing adapter: owns the incremental state, feeds one step at a
    // time.
    struct Stepper;

private:
    void zero_pad_rows(Matrix& m) const {
        for (i64 lane = 0; lane < cfg_.vocab.k; ++lane) {
            double* r = m.row(cfg_.vocab.speech_pad_id(lane));
            for (i64 c = 0; c < m.cols(); ++c) r[c] = 0.0;
        }
    }
    static void scatter_row(Matrix& dst, i64 row, const double* src, double scale) {
        double* d = dst.row(row);
        for (i64 c = 0; c < dst.cols(); ++c) d[c] += src[c] * scale;
    }

    SpeechLMConfig cfg_;
    Param embed_;
    Param pos_embed_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm ln_f_;
    std::vector<Linear> heads_;
    u64 epoch_ = 0;
};

struct SpeechLM::Stepper {
    const SpeechLM* model;
    SpeechLMState state;

    explicit Stepper(const SpeechLM& m) : model(&m), state(m.make_state()) {}
    const ExtendedVocab& vocab() const { return model->vocab(); }
    std::vector<Matrix> feed(const StepTokens& s, i64 chunk_pos) { return model->step(state, s, chunk_pos); }
};

}  // namespace ttslab
