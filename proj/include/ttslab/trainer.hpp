#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttslab/decoder.hpp"
#include "ttslab/speechlm.hpp"
#include "ttslab/synthdata.hpp"

namespace ttslab {

// ---------------------------------------------------------------------------
// Length-bucketed batch planning. Samples are grouped longest-first; a batch
// accepts a sample while size stays under floor(budget / batch_max_len) and
// the intra-batch length spread stays within rho. The capacity cap keeps the
// padded token count of every batch at or under the budget, so long batches
// hold fewer samples, and it implies sum(lengths) <= budget as well.
// ---------------------------------------------------------------------------

struct BatchPlan {
    struct Batch {
        std::vector<i64> sample_ids;
        i64 max_len = 0;
        i64 sum_len = 0;
    };
    std::vector<Batch> batches;
    i64 budget = 0;
    double spread = 0;
};

inline BatchPlan plan_batches(const std::vector<i64>& lengths, i64 budget, double spread, u64 seed) {
    if (lengths.empty()) fail(errc::config, "plan_batches: no samples");
    if (spread < 1.0) fail(errc::config, "plan_batches: spread must be >= 1");
    std::string offenders;
    for (size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] < 1) fail(errc::config, "plan_batches: non-positive length at sample " + std::to_string(i));
        if (lengths[i] > budget) offenders += (offenders.empty() ? "" : ", ") + std::to_string(i);
    }
    if (!offenders.empty())
        fail(errc::config, "plan_batches: samples longer than the token budget: " + offenders);

    std::vector<i64> order(lengths.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](i64 a, i64 b) { return lengths[static_cast<size_t>(a)] > lengths[static_cast<size_t>(b)]; });

    BatchPlan plan;
    plan.budget = budget;
    plan.spread = spread;
    size_t i = 0;
    while (i < order.size()) {
        BatchPlan::Batch b;
        b.max_len = lengths[static_cast<size_t>(order[i])];
        const i64 cap = std::max<i64>(1, budget / b.max_len);
        while (i < order.size() && static_cast<i64>(b.sample_ids.size()) < cap) {
            const i64 len = lengths[static_cast<size_t>(order[i])];
            if (static_cast<double>(b.max_len) > spread * static_cast<double>(len)) break;
            b.sample_ids.push_back(order[i]);
            b.sum_len += len;
            ++i;
        }
        plan.batches.push_back(std::move(b));
    }

    // Visit order is shuffled per seed; batch membership is not.
    Rng rng(seed);
    for (size_t j = plan.batches.size(); j > 1; --j)
        std::swap(plan.batches[j - 1], plan.batches[static_cast<size_t>(rng.uniform_int(static_cast<i64>(j)))]);
    return plan;
}

struct ThroughputReport {
    i64 useful_tokens = 0;
    i64 bucketed_padded = 0;
    i64 naive_padded = 0;
    i64 bucketed_batches = 0;
    i64 naive_batches = 0;
    double bucketed_waste = 0;
    double naive_waste = 0;
};

// Padded-token waste of the bucketed plan against a naive fixed-size plan in
// arrival order, sized for the longest sample (the batch size one would pick
// to never overflow the budget).
inline ThroughputReport training_throughput_report(const BatchPlan& plan, const std::vector<i64>& lengths) {
    ThroughputReport r;
    for (i64 len : lengths) r.useful_tokens += len;
    for (const auto& b : plan.batches) {
        r.bucketed_padded += static_cast<i64>(b.sample_ids.size()) * b.max_len;
        r.bucketed_batches += 1;
    }
    const i64 max_len = *std::max_element(lengths.begin(), lengths.end());
    const i64 naive_size = std::max<i64>(1, plan.budget / max_len);
    for (size_t i = 0; i < lengths.size(); i += static_cast<size_t>(naive_size)) {
        const size_t end = std::min(lengths.size(), i + static_cast<size_t>(naive_size));
        i64 batch_max = 0;
        for (size_t j = i; j < end; ++j) batch_max = std::max(batch_max, lengths[j]);
        r.naive_padded += static_cast<i64>(end - i) * batch_max;
        r.naive_batches += 1;
    }
    r.bucketed_waste = 1.0 - static_cast<double>(r.useful_tokens) / static_cast<double>(r.bucketed_padded);
    r.naive_waste = 1.0 - static_cast<double>(r.useful_tokens) / static_cast<double>(r.naive_padded);
    return r;
}

inline void save_batch_plan(const std::filesystem::path& path, const BatchPlan& plan) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    for (size_t i = 0; i < plan.batches.size(); ++i) {
        const auto& b = plan.batches[i];
        nlohmann::json rec{{"batch", i}, {"samples", b.sample_ids}, {"max_len", b.max_len}, {"sum_len", b.sum_len}};
        out << rec.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Optimizers with per-group learning rates and frozen groups. Frozen
// parameters are skipped entirely, so their bytes and optimizer state are
// untouched.
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { sgd, adam };
    Kind kind = Kind::sgd;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Optimizer {
public:
    explicit Optimizer(const OptimizerConfig& cfg = {}) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }

    template <class ModelLike>
    void step(ModelLike& model, double base_lr, double adapter_lr, bool freeze_base) {
        ++t_;
        size_t idx = 0;
        model.visit_params([&](const std::string&, ParamGroup group, Param& p) {
            if (idx >= slots_.size()) slots_.push_back(State{});
            State& st = slots_[idx++];
            if (freeze_base && group == ParamGroup::base) return;
            const double lr = group == ParamGroup::base ? base_lr : adapter_lr;
            apply(st, p, lr);
        });
    }

private:
    struct State {
        std::vector<double> m, v;
        i64 t = 0;
    };

    void apply(State& st, Param& p, double lr) {
        const i64 n = p.w.size();
        if (static_cast<i64>(st.m.size()) != n) {
            st.m.assign(static_cast<size_t>(n), 0.0);
            if (cfg_.kind == OptimizerConfig::Kind::adam) st.v.assign(static_cast<size_t>(n), 0.0);
        }
        double* w = p.w.data();
        const double* g = p.g.data();
        st.t += 1;
        if (cfg_.kind == OptimizerConfig::Kind::sgd) {
            for (i64 i = 0; i < n; ++i) {
                double grad = g[i] + cfg_.weight_decay * w[i];
                st.m[static_cast<size_t>(i)] = cfg_.momentum * st.m[static_cast<size_t>(i)] + grad;
                w[i] -= lr * st.m[static_cast<size_t>(i)];
            }
        } else {
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
            for (i64 i = 0; i < n; ++i) {
                double grad = g[i] + cfg_.weight_decay * w[i];
                double& m = st.m[static_cast<size_t>(i)];
                double& v = st.v[static_cast<size_t>(i)];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad * grad;
                w[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
            }
        }
    }

    OptimizerConfig cfg_;
    std::vector<State> slots_;
    i64 t_ = 0;
};

// ---------------------------------------------------------------------------
// Two-stage schedule. Pre-training freezes the base group; post-training
// updates everything with the adapter group at five times the base rate by
// default.
// ---------------------------------------------------------------------------

struct StageConfig {
    enum class Kind { pretrain, posttrain };
    Kind kind = Kind::pretrain;
    double base_lr = 1e-3;
    double adapter_lr = 0;  // 0 = derive: base_lr (pretrain) or 5 * base_lr (posttrain)
    i64 steps = 0;
    i64 batch_budget = 4096;
    double spread = 2.0;
    OptimizerConfig optimizer;

    bool freeze_base() const { return kind == Kind::pretrain; }
    double effective_adapter_lr() const {
        if (adapter_lr > 0) return adapter_lr;
        return kind == Kind::posttrain ? 5.0 * base_lr : base_lr;
    }
    const char* name() const { return kind == Kind::pretrain ? "pretrain" : "posttrain"; }
};

// Teacher-forcing layout shared with decoding: chunk plan, delay padding and
// per-chunk EOS blocks all match what the decoder feeds at generation time.
struct TrainLayout {
    ChunkPolicy policy;
    i64 delay = 4;
};

struct TrainSequence {
    std::vector<StepTokens> inputs;
    std::vector<std::vector<LaneCode>> targets;
    std::vector<i64> chunk_pos;  // step index within the owning chunk
    i64 length() const { return static_cast<i64>(inputs.size()); }
};

inline TrainSequence build_training_sequence(const SynthSample& sample, const OracleSpec& spec,
                                             const ExtendedVocab& vocab, const TrainLayout& layout) {
    ChunkPlan plan = plan_chunks(sample.text, layout.policy, layout.delay);
    TrainSequence seq;
    for (const auto& span : plan.chunks) {
        std::vector<TokenId> chunk_text(sample.text.begin() + span.begin, sample.text.begin() + span.end);
        std::vector<LaneCode> chunk_codes(sample.speech.begin() + span.begin * spec.m,
                                          sample.speech.begin() + span.end * spec.m);
        ChunkSteps steps = layout_chunk_steps(chunk_text, chunk_codes, layout.delay, vocab);
        for (size_t j = 0; j < steps.inputs.size(); ++j) seq.chunk_pos.push_back(static_cast<i64>(j));
        for (auto& s : steps.inputs) seq.inputs.push_back(std::move(s));
        for (auto& t : steps.targets) seq.targets.push_back(std::move(t));
    }
    return seq;
}

struct CurveRow {
    i64 step = 0;
    double loss = 0;
    double lr_base = 0;
    double lr_adapter = 0;
};

struct TrainReport {
    std::vector<CurveRow> curve;
    BatchPlan plan;
};

inline void save_loss_curve(const std::filesystem::path& path, const std::vector<CurveRow>& rows,
                            bool append = false) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, append ? std::ios::app : std::ios::out);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    if (!append) out << "step,loss,lr_base,lr_adapter\n";
    for (const auto& r : rows) {
        out << r.step << "," << r.loss << "," << r.lr_base << "," << r.lr_adapter << "\n";
    }
}

// Runs one stage for `stage.steps` optimizer steps, cycling through the batch
// plan (reshuffled per epoch, deterministically from the seed). step_offset
// only shifts the step numbers on the curve, for resumed runs.
inline TrainReport train_stage(SpeechLM& model, const Dataset& data, const StageConfig& stage,
                               const TrainLayout& layout, u64 seed, i64 step_offset = 0) {
    if (data.train.empty()) fail(errc::config, "train_stage: empty training split");
    std::vector<TrainSequence> seqs;
    seqs.reserve(data.train.size());
    std::vector<i64> lengths;
    for (const auto& sample : data.train) {
        seqs.push_back(build_training_sequence(sample, data.spec, model.vocab(), layout));
        lengths.push_back(seqs.back().length());
    }

    Optimizer opt(stage.optimizer);
    const double lr_base = stage.base_lr;
    const double lr_adapter = stage.effective_adapter_lr();

    TrainReport report;
    report.plan = plan_batches(lengths, stage.batch_budget, stage.spread, seed);
    const BatchPlan* plan = &report.plan;
    BatchPlan epoch_plan;
    i64 step = 0;
    u64 epoch = 0;
    size_t batch_idx = 0;
    while (step < stage.steps) {
        if (batch_idx >= plan->batches.size()) {
            ++epoch;
            epoch_plan = plan_batches(lengths, stage.batch_budget, stage.spread, seed + epoch);
            plan = &epoch_plan;
            batch_idx = 0;
        }
        const auto& batch = plan->batches[batch_idx];
        model.zero_grads();
        double loss_sum = 0;
        for (i64 id : batch.sample_ids) {
            const auto& seq = seqs[static_cast<size_t>(id)];
            loss_sum += model.loss_and_grad(seq.inputs, seq.targets, nullptr, &seq.chunk_pos);
        }
        const double loss = loss_sum / static_cast<double>(batch.sample_ids.size());
        if (!std::isfinite(loss))
            fail(errc::training, std::string("non-finite loss in ") + stage.name() + " at step " +
                                     std::to_string(step_offset + step + 1) + ", batch " +
                                     std::to_string(batch_idx));
        const double inv_bs = 1.0 / static_cast<double>(batch.sample_ids.size());
        model.visit_params([&](const std::string&, ParamGroup, Param& p) {
            scale_inplace(p.g, inv_bs);
        });
        opt.step(model, lr_base, lr_adapter, stage.freeze_base());
        model.touch();
        ++step;
        ++batch_idx;
        report.curve.push_back({step_offset + step, loss, stage.freeze_base() ? 0.0 : lr_base, lr_adapter});
    }
    return report;
}

}  // namespace ttslab
