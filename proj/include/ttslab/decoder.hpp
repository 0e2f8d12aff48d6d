#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ttslab/matrix.hpp"
#include "ttslab/queue.hpp"
#include "ttslab/vocab.hpp"

namespace ttslab {

inline i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

// ---------------------------------------------------------------------------
// Chunk planning. A chunk closes at a sentence-delimiter token or at the hard
// cap, whichever comes first; the delimiter stays inside its chunk. The same
// closure rule drives offline planning and incremental (streaming) planning,
// so both produce identical partitions.
// ---------------------------------------------------------------------------

struct ChunkPolicy {
    i64 max_chunk_tokens = 24;
    std::vector<TokenId> delimiters{1};

    bool is_delimiter(TokenId t) const {
        for (TokenId d : delimiters)
            if (d == t) return true;
        return false;
    }
    std::string name() const { return "delimiter+cap" + std::to_string(max_chunk_tokens); }

    void validate() const {
        if (max_chunk_tokens < 1) fail(errc::config, "chunk_policy.max_chunk_tokens: must be >= 1");
    }
};

struct ChunkSpan {
    i64 begin = 0;
    i64 end = 0;  // exclusive
    i64 length() const { return end - begin; }
};

struct ChunkPlan {
    std::vector<ChunkSpan> chunks;
    i64 delay = 4;
    i64 max_chunk_tokens = 24;
    std::string policy;

    void validate(i64 text_len) const {
        if (chunks.empty()) fail(errc::contract, "chunk plan: no chunks");
        i64 cursor = 0;
        for (const auto& c : chunks) {
            if (c.begin != cursor || c.length() < 1 || c.length() > max_chunk_tokens)
                fail(errc::contract, "chunk plan: spans do not partition the text");
            cursor = c.end;
        }
        if (cursor != text_len) fail(errc::contract, "chunk plan: spans do not cover the text");
    }
};

inline ChunkPlan plan_chunks(const std::vector<TokenId>& text, const ChunkPolicy& policy, i64 delay = 4) {
    policy.validate();
    if (text.empty()) fail(errc::config, "plan_chunks: empty text");
    if (delay < 0) fail(errc::config, "plan_chunks: negative delay");
    ChunkPlan plan;
    plan.delay = delay;
    plan.max_chunk_tokens = policy.max_chunk_tokens;
    plan.policy = policy.name();
    i64 begin = 0;
    i64 len = 0;
    for (i64 i = 0; i < static_cast<i64>(text.size()); ++i) {
        ++len;
        if (policy.is_delimiter(text[static_cast<size_t>(i)]) || len == policy.max_chunk_tokens) {
            plan.chunks.push_back({begin, i + 1});
            begin = i + 1;
            len = 0;
        }
    }
    if (len > 0) plan.chunks.push_back({begin, static_cast<i64>(text.size())});
    plan.validate(static_cast<i64>(text.size()));
    return plan;
}

// ---------------------------------------------------------------------------
// The per-chunk step schedule.
//
// Step j of a chunk (1-based) consumes text token j while the chunk has text
// left, TEXT_PAD afterwards. The first d steps carry SPEECH_PAD in every
// lane; from step d+1 the lanes carry the model's prediction from the
// previous step. The prediction at step j >= d is block (j - d) of the
// chunk's speech, k codes per block; after the last real block the model
// signals the end of the chunk by emitting SPEECH_EOS on lane 0, at step
// d + ceil(S/k) for S emitted codes. Hence
//
//     steps(chunk) = max(len_chunk, d + ceil(S_chunk / k)).
//
// d = 0 degenerates to d = 1 for accounting: the first step cannot consume a
// previous prediction, so emission starts at step 1 and the stop step lands
// one later than the d >= 1 law suggests.
// ---------------------------------------------------------------------------

inline i64 first_prediction_step(i64 delay) { return std::max<i64>(delay, 1); }

inline i64 chunk_step_count(i64 chunk_len, i64 speech_count, i64 delay, i64 k) {
    return std::max(chunk_len, first_prediction_step(delay) + ceil_div(speech_count, k));
}

// Teacher-forcing layout of one chunk: the inputs the decoder would feed if
// the model were exact, and the per-step lane targets. Targets are -1 where
// no prediction is consumed (pre-delay and trailing text steps). Training on
// this layout matches decoding by construction.
struct ChunkSteps {
    std::vector<StepTokens> inputs;
    std::vector<std::vector<LaneCode>> targets;
};

inline ChunkSteps layout_chunk_steps(const std::vector<TokenId>& chunk_text,
                                     const std::vector<LaneCode>& chunk_codes, i64 delay,
                                     const ExtendedVocab& vocab) {
    const i64 k = vocab.k;
    const i64 len = static_cast<i64>(chunk_text.size());
    const i64 s = static_cast<i64>(chunk_codes.size());
    const i64 first_pred = first_prediction_step(delay);
    const i64 n_blocks = ceil_div(s, k);
    const i64 eos_step = first_pred + n_blocks;
    const i64 total = std::max(len, eos_step);

    auto block = [&](i64 b) {
        std::vector<LaneCode> lanes(static_cast<size_t>(k), vocab.pad_code());
        for (i64 lane = 0; lane < k; ++lane) {
            const i64 idx = b * k + lane;
            if (idx < s) lanes[static_cast<size_t>(lane)] = chunk_codes[static_cast<size_t>(idx)];
        }
        return lanes;
    };

    ChunkSteps out;
    for (i64 j = 1; j <= total; ++j) {
        StepTokens in = StepTokens::padded(vocab, vocab.text_pad());
        if (j <= len) in.text = chunk_text[static_cast<size_t>(j - 1)];
        const i64 in_block = j - 1 - first_pred;  // block consumed at this step
        if (j > first_pred && in_block < n_blocks) in.lanes = block(in_block);
        out.inputs.push_back(std::move(in));

        std::vector<LaneCode> target(static_cast<size_t>(k), -1);
        const i64 pred_block = j - first_pred;
        if (j >= first_pred && pred_block < n_blocks) {
            target = block(pred_block);
        } else if (j == eos_step) {
            target.assign(static_cast<size_t>(k), vocab.pad_code());
            target[0] = vocab.eos_code();
        }
        out.targets.push_back(std::move(target));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decode state and the streaming event log.
// ---------------------------------------------------------------------------

enum class EventKind { chunk_start, speech_tokens, chunk_end, done };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::chunk_start: return "chunk_start";
        case EventKind::speech_tokens: return "speech_tokens";
        case EventKind::chunk_end: return "chunk_end";
        case EventKind::done: return "done";
    }
    return "?";
}

struct StreamEvent {
    EventKind kind;
    i64 step = 0;                 // global step index, 1-based
    i64 chunk = -1;               // chunk_start / chunk_end
    std::vector<LaneCode> codes;  // speech_tokens: the raw predicted block
    i64 emitted = 0;              // chunk_end: real codes this chunk; done: total
    i64 t_ns = 0;                 // monotonic clock, 0 when timestamps are off
};

struct DecodeParams {
    i64 delay = 4;
    i64 rate_ratio = 8;        // expected speech codes per text token (budget only)
    double budget_slack = 2.0; // budget = delay + ceil(slack * rate_ratio * len / k)
    bool timestamps = true;

    i64 step_budget(i64 chunk_len, i64 k) const {
        return first_prediction_step(delay) +
               ceil_div(static_cast<i64>(budget_slack * static_cast<double>(rate_ratio * chunk_len)), k);
    }
};

struct DecodeMode {
    enum class Kind { greedy, sampled };
    Kind kind = Kind::greedy;
    u64 seed = 0;
    double temperature = 1.0;

    static DecodeMode greedy() { return {}; }
    static DecodeMode sampled(u64 seed, double temperature = 1.0) {
        return {Kind::sampled, seed, temperature};
    }
};

// Decode state carries the full step history across chunks; no truncation
// policy is applied to long histories (desk scale keeps this cheap).
struct DecodeState {
    ExtendedVocab vocab;
    std::vector<TokenId> text;
    ChunkPlan plan;
    std::vector<StepTokens> history;   // every step fed to the model, append-only
    std::vector<LaneCode> emitted;     // real codes in emission order
    std::vector<StreamEvent> events;
    i64 chunk_cursor = 0;
    i64 global_step = 0;  // steps fed so far
    Rng rng{0};

    DecodeState(const ExtendedVocab& v, std::vector<TokenId> txt, ChunkPlan p, u64 seed)
        : vocab(v), text(std::move(txt)), plan(std::move(p)), rng(seed) {}
};

struct GenerateResult {
    std::vector<LaneCode> codes;
    std::vector<StreamEvent> events;
    std::vector<StepTokens> history;
    i64 steps = 0;
    double wall_seconds = 0;
    bool truncated = false;
    i64 truncated_chunk = -1;
};

class truncation_error : public error {
public:
    truncation_error(const std::string& msg, GenerateResult partial)
        : error(errc::truncated, msg), partial_(std::move(partial)) {}
    const GenerateResult& partial() const { return partial_; }

private:
    GenerateResult partial_;
};

namespace detail {

inline i64 now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Pick one lane code from a logit row. Forced mode restricts the choice to
// real codes so a run can be driven to an exact output length.
inline LaneCode pick_code(const Matrix& logits, const ExtendedVocab& vocab, const DecodeMode& mode,
                          bool real_only, Rng& rng) {
    const i64 limit = real_only ? vocab.n_speech : vocab.lane_width();
    const double* row = logits.row(0);
    if (mode.kind == DecodeMode::Kind::greedy) {
        i64 best = 0;
        for (i64 j = 1; j < limit; ++j)
            if (row[j] > row[best]) best = j;
        return static_cast<LaneCode>(best);
    }
    const double inv_temp = 1.0 / std::max(mode.temperature, 1e-6);
    double mx = row[0];
    for (i64 j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
    std::vector<double> probs(static_cast<size_t>(limit));
    double sum = 0;
    for (i64 j = 0; j < limit; ++j) {
        probs[static_cast<size_t>(j)] = std::exp((row[j] - mx) * inv_temp);
        sum += probs[static_cast<size_t>(j)];
    }
    double r = rng.uniform() * sum;
    for (i64 j = 0; j < limit; ++j) {
        r -= probs[static_cast<size_t>(j)];
        if (r <= 0) return static_cast<LaneCode>(j);
    }
    return static_cast<LaneCode>(limit - 1);
}

}  // namespace detail

// Decode one chunk. `forced_codes` switches EOS semantics off and emits
// exactly that many codes instead (benchmark mode). Returns false when the
// step budget ran out before EOS.
template <class Model>
bool decode_chunk(DecodeState& state, i64 chunk_index, Model& model, const DecodeMode& mode,
                  const DecodeParams& params, std::optional<i64> forced_codes = std::nullopt) {
    if (chunk_index != state.chunk_cursor)
        fail(errc::contract, "decode_chunk: chunk " + std::to_string(chunk_index) + " decoded out of order");
    if (chunk_index < 0 || chunk_index >= static_cast<i64>(state.plan.chunks.size()))
        fail(errc::contract, "decode_chunk: chunk index outside plan");
    const ChunkSpan span = state.plan.chunks[static_cast<size_t>(chunk_index)];
    const ExtendedVocab& vocab = state.vocab;
    const i64 k = vocab.k;
    const i64 len = span.length();
    const i64 first_pred = first_prediction_step(params.delay);
    const i64 budget = params.step_budget(len, k);
    auto stamp = [&] { return params.timestamps ? detail::now_ns() : 0; };

    state.events.push_back({EventKind::chunk_start, state.global_step + 1, chunk_index, {}, 0, stamp()});

    std::vector<LaneCode> prev_block;
    bool eos_seen = false;
    i64 emitted_here = 0;
    const i64 forced_blocks = forced_codes ? ceil_div(*forced_codes, k) : 0;

    for (i64 j = 1;; ++j) {
        StepTokens in = StepTokens::padded(vocab, vocab.text_pad());
        if (j <= len) in.text = state.text[static_cast<size_t>(span.begin + j - 1)];
        if (j > first_pred && !eos_seen && !prev_block.empty()) in.lanes = prev_block;

        std::vector<Matrix> logits = model.feed(in, j - 1);
        state.history.push_back(in);
        state.global_step += 1;

        std::vector<LaneCode> block(static_cast<size_t>(k));
        for (i64 lane = 0; lane < k; ++lane)
            block[static_cast<size_t>(lane)] = detail::pick_code(
                logits[static_cast<size_t>(lane)], vocab, mode, forced_codes.has_value(), state.rng);

        const i64 pred_block = j - first_pred;
        bool stop_step = false;
        if (j >= first_pred && !eos_seen) {
            if (forced_codes) {
                if (pred_block < forced_blocks) {
                    // trim the final block to the forced total
                    i64 take = std::min<i64>(k, *forced_codes - pred_block * k);
                    std::vector<LaneCode> trimmed(block.begin(), block.begin() + take);
                    for (LaneCode c : trimmed) state.emitted.push_back(c);
                    emitted_here += take;
                    state.events.push_back(
                        {EventKind::speech_tokens, state.global_step, chunk_index, block, 0, stamp()});
                    prev_block = block;
                } else {
                    stop_step = true;  // parity with the EOS stop step
                }
            } else if (block[0] == vocab.eos_code()) {
                stop_step = true;
            } else {
                i64 real = 0;
                for (LaneCode c : block)
                    if (vocab.is_real_code(c)) {
                        state.emitted.push_back(c);
                        ++real;
                    }
                emitted_here += real;
                state.events.push_back(
                    {EventKind::speech_tokens, state.global_step, chunk_index, block, 0, stamp()});
                prev_block = block;
            }
        }
        if (stop_step) eos_seen = true;

        if (eos_seen && j >= len) break;
        if (!eos_seen && j >= budget) {
            state.events.push_back(
                {EventKind::chunk_end, state.global_step, chunk_index, {}, emitted_here, stamp()});
            state.chunk_cursor += 1;
            return false;
        }
    }
    state.events.push_back({EventKind::chunk_end, state.global_step, chunk_index, {}, emitted_here, stamp()});
    state.chunk_cursor += 1;
    return true;
}

inline GenerateResult finish_result(DecodeState& state, bool truncated, i64 truncated_chunk,
                                    const DecodeParams& params) {
    state.events.push_back({EventKind::done, state.global_step, -1, {},
                            static_cast<i64>(state.emitted.size()),
                            params.timestamps ? detail::now_ns() : 0});
    GenerateResult r;
    r.codes = state.emitted;
    r.events = std::move(state.events);
    r.history = std::move(state.history);
    r.steps = state.global_step;
    r.truncated = truncated;
    r.truncated_chunk = truncated_chunk;
    return r;
}

// Offline generation: plan all chunks up front, decode them in order against
// the full prior history.
template <class Model>
GenerateResult generate(const std::vector<TokenId>& text, Model& model, const ChunkPolicy& policy,
                        const DecodeMode& mode, const DecodeParams& params) {
    ChunkPlan plan = plan_chunks(text, policy, params.delay);
    DecodeState state(model.vocab(), text, plan, mode.seed);
    const auto t0 = std::chrono::steady_clock::now();
    for (i64 c = 0; c < static_cast<i64>(plan.chunks.size()); ++c) {
        if (!decode_chunk(state, c, model, mode, params)) {
            GenerateResult partial = finish_result(state, true, c, params);
            partial.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            throw truncation_error("chunk " + std::to_string(c) + " hit its step budget before EOS",
                                   std::move(partial));
        }
    }
    GenerateResult r = finish_result(state, false, -1, params);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// Benchmark variant: every chunk is forced to rate_ratio * len codes, so runs
// with different parallel sizes produce identical speech lengths.
template <class Model>
GenerateResult generate_forced(const std::vector<TokenId>& text, Model& model, const ChunkPolicy& policy,
                               const DecodeMode& mode, const DecodeParams& params) {
    ChunkPlan plan = plan_chunks(text, policy, params.delay);
    DecodeState state(model.vocab(), text, plan, mode.seed);
    const auto t0 = std::chrono::steady_clock::now();
    for (i64 c = 0; c < static_cast<i64>(plan.chunks.size()); ++c)
        decode_chunk(state, c, model, mode, params, params.rate_ratio * plan.chunks[static_cast<size_t>(c)].length());
    GenerateResult r = finish_result(state, false, -1, params);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ---------------------------------------------------------------------------
// Dual-track run: a producer thread streams text tokens through a bounded
// queue while the decoder consumes them, closing and decoding each chunk as
// soon as its boundary arrives. Greedy output matches offline generate on the
// same text token-for-token.
// ---------------------------------------------------------------------------

struct TextArrival {
    i64 index;
    TokenId token;
    i64 t_ns;
};

struct DualTrackResult {
    GenerateResult gen;
    std::vector<TextArrival> arrivals;
    bool producer_failed = false;
    std::string producer_error;
};

using TextProducer = std::function<void(const std::function<void(TokenId)>&)>;

template <class Model>
DualTrackResult dual_track_run(const TextProducer& producer, Model& model, const ChunkPolicy& policy,
                               const DecodeMode& mode, const DecodeParams& params,
                               size_t queue_capacity = 64) {
    policy.validate();
    BoundedQueue<TokenId> queue(queue_capacity);
    DualTrackResult result;
    std::mutex arrivals_mu;
    std::vector<TextArrival> arrivals;
    std::string producer_error;
    bool producer_failed = false;

    std::thread producer_thread([&] {
        i64 index = 0;
        try {
            producer([&](TokenId t) {
                {
                    std::lock_guard lock(arrivals_mu);
                    arrivals.push_back({index, t, params.timestamps ? detail::now_ns() : 0});
                }
                ++index;
                queue.push(t);
            });
        } catch (const std::exception& e) {
            producer_failed = true;
            producer_error = e.what();
        }
        queue.close();
    });
    // Consumer-side bail-out (truncation, contract error) must unblock the
    // producer before joining, or a full queue would deadlock the join.
    struct JoinGuard {
        BoundedQueue<TokenId>& q;
        std::thread& t;
        ~JoinGuard() {
            q.close();
            if (t.joinable()) t.join();
        }
    } join_guard{queue, producer_thread};

    DecodeState state(model.vocab(), {}, ChunkPlan{{}, params.delay, policy.max_chunk_tokens, policy.name()},
                      mode.seed);
    const auto t0 = std::chrono::steady_clock::now();
    i64 open_len = 0;  // tokens buffered in the not-yet-closed chunk
    bool truncated = false;
    i64 truncated_chunk = -1;
    auto flush_chunk = [&] {
        const i64 end = static_cast<i64>(state.text.size());
        state.plan.chunks.push_back({end - open_len, end});
        open_len = 0;
        const i64 c = static_cast<i64>(state.plan.chunks.size()) - 1;
        if (!decode_chunk(state, c, model, mode, params)) {
            truncated = true;
            truncated_chunk = c;
            return false;
        }
        return true;
    };

    while (auto token = queue.pop()) {
        state.text.push_back(*token);
        ++open_len;
        if (policy.is_delimiter(*token) || open_len == policy.max_chunk_tokens) {
            if (!flush_chunk()) break;
        }
    }
    if (!truncated && open_len > 0) flush_chunk();

    queue.close();
    producer_thread.join();
    result.gen = finish_result(state, truncated, truncated_chunk, params);
    result.gen.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.arrivals = std::move(arrivals);
    result.producer_failed = producer_failed;
    result.producer_error = producer_error;
    if (truncated)
        throw truncation_error("chunk " + std::to_string(truncated_chunk) + " hit its step budget before EOS",
                               std::move(result.gen));
    return result;
}

// ---------------------------------------------------------------------------
// Event log serialization: one record per line.
// ---------------------------------------------------------------------------

inline nlohmann::json event_to_json(const StreamEvent& e) {
    nlohmann::json payload;
    switch (e.kind) {
        case EventKind::chunk_start: payload = {{"chunk", e.chunk}}; break;
        case EventKind::speech_tokens: payload = {{"codes", e.codes}}; break;
        case EventKind::chunk_end: payload = {{"chunk", e.chunk}, {"emitted", e.emitted}}; break;
        case EventKind::done: payload = {{"emitted", e.emitted}}; break;
    }
    return {{"step", e.step}, {"kind", event_kind_name(e.kind)}, {"payload", payload}, {"t_ns", e.t_ns}};
}

inline void save_events(const std::filesystem::path& path, const std::vector<StreamEvent>& events) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    for (const auto& e : events) out << event_to_json(e).dump() << "\n";
    if (!out) fail(errc::io, "write failed: " + path.string());
}

}  // namespace ttslab
