#include <catch2/catch_amalgamated.hpp>

#include <deque>
#include <sstream>

#include "ttslab/decoder.hpp"
#include "ttslab/speechlm.hpp"

using namespace ttslab;

namespace {

// Replies one pre-scripted block per feed; greedy decoding picks exactly the
// scripted codes. Exhausting the script means the decoder took more steps
// than the independent schedule simulation predicted.
struct QueueModel {
    ExtendedVocab v;
    std::deque<std::vector<LaneCode>> replies;
    std::vector<StepTokens> seen;

    explicit QueueModel(const ExtendedVocab& vocab) : v(vocab) {}
    const ExtendedVocab& vocab() const { return v; }

    std::vector<Matrix> feed(const StepTokens& s, i64 /*chunk_pos*/) {
        if (replies.empty()) fail(errc::contract, "scripted model: script exhausted");
        seen.push_back(s);
        std::vector<LaneCode> block = replies.front();
        replies.pop_front();
        std::vector<Matrix> logits;
        for (i64 lane = 0; lane < v.k; ++lane) {
            Matrix row(1, v.lane_width());
            row(0, block[static_cast<size_t>(lane)]) = 10.0;
            logits.push_back(std::move(row));
        }
        return logits;
    }
};

// Independent schedule simulation: scripts the replies for one chunk that
// needs `speech` codes, using its own step arithmetic.
void script_chunk(QueueModel& m, i64 len, i64 speech, i64 delay,
                  const std::function<LaneCode(i64)>& code_at) {
    const i64 k = m.v.k;
    const i64 fp = std::max<i64>(delay, 1);
    const i64 n_blocks = (speech + k - 1) / k;
    const i64 eos_step = fp + n_blocks;
    const i64 total = std::max(len, eos_step);
    for (i64 j = 1; j <= total; ++j) {
        std::vector<LaneCode> block(static_cast<size_t>(k), m.v.pad_code());
        if (j >= fp && j - fp < n_blocks) {
            for (i64 lane = 0; lane < k; ++lane) {
                const i64 flat = (j - fp) * k + lane;
                if (flat < speech) block[static_cast<size_t>(lane)] = code_at(flat);
            }
        } else if (j == eos_step) {
            block[0] = m.v.eos_code();
        }
        m.replies.push_back(std::move(block));
    }
}

ExtendedVocab small_vocab(i64 k = 4) { return ExtendedVocab(64, 64, k); }

DecodeParams quiet_params(i64 delay = 4, i64 rate = 8) {
    DecodeParams p;
    p.delay = delay;
    p.rate_ratio = rate;
    p.timestamps = false;
    return p;
}

std::string events_to_text(const std::vector<StreamEvent>& events) {
    std::ostringstream os;
    for (const auto& e : events) os << event_to_json(e).dump() << "\n";
    return os.str();
}

}  // namespace

TEST_CASE("plan: short text with no delimiters is one chunk") {
    std::vector<TokenId> text(10, 5);
    ChunkPolicy policy;
    policy.delimiters = {};
    ChunkPlan plan = plan_chunks(text, policy);
    REQUIRE(plan.chunks.size() == 1);
    REQUIRE(plan.chunks[0].length() == 10);
}

TEST_CASE("plan: greedy hard split at the cap") {
    std::vector<TokenId> text(50, 5);
    ChunkPolicy policy;
    policy.delimiters = {};
    ChunkPlan plan = plan_chunks(text, policy);
    REQUIRE(plan.chunks.size() == 3);
    REQUIRE(plan.chunks[0].length() == 24);
    REQUIRE(plan.chunks[1].length() == 24);
    REQUIRE(plan.chunks[2].length() == 2);
}

TEST_CASE("plan: delimiter closes the chunk early") {
    std::vector<TokenId> text(30, 5);
    text[19] = 1;  // delimiter as the 20th token
    ChunkPolicy policy;
    ChunkPlan plan = plan_chunks(text, policy);
    REQUIRE(plan.chunks.size() == 2);
    REQUIRE(plan.chunks[0].length() == 20);
    REQUIRE(plan.chunks[1].length() == 10);
}

TEST_CASE("plan: empty text rejected") {
    ChunkPolicy policy;
    REQUIRE_THROWS_AS(plan_chunks({}, policy), error);
}

TEST_CASE("plan: partition invariant over randomized texts and policies") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const i64 len = rng.uniform_range(1, 120);
        std::vector<TokenId> text;
        for (i64 i = 0; i < len; ++i)
            text.push_back(rng.uniform() < 0.1 ? 1 : 2 + rng.uniform_int(60));
        ChunkPolicy policy;
        policy.max_chunk_tokens = rng.uniform_range(1, 30);
        ChunkPlan plan = plan_chunks(text, policy);

        std::vector<TokenId> glued;
        for (const auto& c : plan.chunks) {
            REQUIRE(c.length() >= 1);
            REQUIRE(c.length() <= policy.max_chunk_tokens);
            for (i64 i = c.begin; i < c.end; ++i) glued.push_back(text[static_cast<size_t>(i)]);
        }
        REQUIRE(glued == text);
    }
}

TEST_CASE("schedule: 6 text tokens, d=4, S=12, k=4 takes 7 steps with 4 leading pad steps") {
    QueueModel model(small_vocab(4));
    std::vector<TokenId> text{2, 3, 4, 5, 6, 7};
    script_chunk(model, 6, 12, 4, [](i64 f) { return static_cast<LaneCode>(f % 64); });

    ChunkPolicy policy;
    policy.delimiters = {};
    GenerateResult r = generate(text, model, policy, DecodeMode::greedy(), quiet_params(4));
    REQUIRE(r.steps == 7);
    REQUIRE(static_cast<i64>(r.codes.size()) == 12);
    for (i64 j = 0; j < 4; ++j)
        for (LaneCode c : r.history[static_cast<size_t>(j)].lanes) REQUIRE(c == model.v.pad_code());
    // lanes at step 5 carry the block predicted at step 4
    REQUIRE(r.history[4].lanes[0] == 0);
    REQUIRE(model.replies.empty());
}

TEST_CASE("schedule: d=0 emits from the first step") {
    QueueModel model(small_vocab(2));
    std::vector<TokenId> text{2, 3, 4};
    script_chunk(model, 3, 4, 0, [](i64 f) { return static_cast<LaneCode>(f); });
    ChunkPolicy policy;
    policy.delimiters = {};
    GenerateResult r = generate(text, model, policy, DecodeMode::greedy(), quiet_params(0));
    i64 first_speech_step = -1;
    for (const auto& e : r.events)
        if (e.kind == EventKind::speech_tokens && first_speech_step < 0) first_speech_step = e.step;
    REQUIRE(first_speech_step == 1);
    REQUIRE(r.codes == std::vector<LaneCode>{0, 1, 2, 3});
}

TEST_CASE("schedule: chunk shorter than the delay pads text but keeps d pad steps") {
    QueueModel model(small_vocab(4));
    std::vector<TokenId> text{2, 3, 4};
    script_chunk(model, 3, 8, 4, [](i64 f) { return static_cast<LaneCode>(f); });
    ChunkPolicy policy;
    policy.delimiters = {};
    GenerateResult r = generate(text, model, policy, DecodeMode::greedy(), quiet_params(4));
    // steps = max(3, 4 + ceil(8/4)) = 6
    REQUIRE(r.steps == 6);
    REQUIRE(r.history[2].text == 4);
    REQUIRE(r.history[3].text == model.v.text_pad());  // text exhausted at step 4
    for (i64 j = 0; j < 4; ++j)
        for (LaneCode c : r.history[static_cast<size_t>(j)].lanes) REQUIRE(c == model.v.pad_code());
}

TEST_CASE("schedule: step-count law and delay invariant over randomized plans") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const i64 k = std::vector<i64>{1, 2, 4, 8}[static_cast<size_t>(rng.uniform_int(4))];
        const i64 delay = rng.uniform_range(1, 8);
        QueueModel model(small_vocab(k));
        const i64 len = rng.uniform_range(1, 70);
        std::vector<TokenId> text;
        for (i64 i = 0; i < len; ++i) text.push_back(rng.uniform() < 0.08 ? 1 : 2 + rng.uniform_int(60));

        ChunkPolicy policy;
        policy.max_chunk_tokens = rng.uniform_range(2, 30);
        ChunkPlan plan = plan_chunks(text, policy, delay);

        DecodeParams params = quiet_params(delay, 8);
        i64 expected_steps = 0;
        std::vector<i64> speech_per_chunk;
        for (const auto& span : plan.chunks) {
            const i64 s = rng.uniform_range(1, 2 * params.rate_ratio * span.length());
            speech_per_chunk.push_back(s);
            script_chunk(model, span.length(), s, delay, [](i64 f) { return static_cast<LaneCode>(f % 64); });
            expected_steps += std::max(span.length(), std::max<i64>(delay, 1) + (s + k - 1) / k);
        }

        GenerateResult r = generate(text, model, policy, DecodeMode::greedy(), params);
        REQUIRE(r.steps == expected_steps);
        REQUIRE(model.replies.empty());

        i64 total_speech = 0;
        for (i64 s : speech_per_chunk) total_speech += s;
        REQUIRE(static_cast<i64>(r.codes.size()) == total_speech);

        // audit against the event log: per-chunk step spans and emission counts
        i64 chunk_idx = 0;
        i64 chunk_start_step = 0;
        i64 done_count = 0;
        i64 last_step = 0;
        for (const auto& e : r.events) {
            REQUIRE(e.step >= last_step);
            last_step = e.step;
            if (e.kind == EventKind::chunk_start) chunk_start_step = e.step;
            if (e.kind == EventKind::chunk_end) {
                const i64 span_len = plan.chunks[static_cast<size_t>(chunk_idx)].length();
                const i64 s = speech_per_chunk[static_cast<size_t>(chunk_idx)];
                REQUIRE(e.step - chunk_start_step + 1 ==
                        std::max(span_len, std::max<i64>(delay, 1) + (s + k - 1) / k));
                REQUIRE(e.emitted == s);
                ++chunk_idx;
            }
            if (e.kind == EventKind::done) ++done_count;
        }
        REQUIRE(done_count == 1);
        REQUIRE(r.events.back().kind == EventKind::done);

        // delay invariant: the first `delay` steps of every chunk have all-pad lanes
        i64 step_cursor = 0;
        for (size_t c = 0; c < plan.chunks.size(); ++c) {
            const i64 span_len = plan.chunks[c].length();
            const i64 s = speech_per_chunk[c];
            const i64 chunk_steps = std::max(span_len, std::max<i64>(delay, 1) + (s + k - 1) / k);
            for (i64 j = 0; j < std::min(delay, chunk_steps); ++j)
                for (LaneCode code : r.history[static_cast<size_t>(step_cursor + j)].lanes)
                    REQUIRE(code == model.v.pad_code());
            step_cursor += chunk_steps;
        }
    }
}

TEST_CASE("budget exhaustion raises a truncation error carrying partial output") {
    QueueModel model(small_vocab(2));
    std::vector<TokenId> text{2, 3};
    // script far more blocks than the budget allows, never an EOS
    for (int i = 0; i < 200; ++i)
        model.replies.push_back({static_cast<LaneCode>(i % 64), static_cast<LaneCode>((i + 1) % 64)});
    ChunkPolicy policy;
    policy.delimiters = {};
    try {
        generate(text, model, policy, DecodeMode::greedy(), quiet_params(2, 4));
        FAIL("expected truncation");
    } catch (const truncation_error& e) {
        REQUIRE(e.code() == errc::truncated);
        REQUIRE(e.partial().truncated);
        REQUIRE(e.partial().truncated_chunk == 0);
        REQUIRE(!e.partial().codes.empty());
        REQUIRE(e.partial().events.back().kind == EventKind::done);
    }
}

TEST_CASE("single-chunk text decodes identically under any cap large enough") {
    auto run = [&](i64 cap) {
        QueueModel model(small_vocab(4));
        std::vector<TokenId> text{2, 3, 4, 5, 6, 7, 8, 9};
        script_chunk(model, 8, 16, 4, [](i64 f) { return static_cast<LaneCode>((3 * f) % 64); });
        ChunkPolicy policy;
        policy.delimiters = {};
        policy.max_chunk_tokens = cap;
        return generate(text, model, policy, DecodeMode::greedy(), quiet_params(4));
    };
    GenerateResult a = run(24);
    GenerateResult b = run(1000);
    REQUIRE(a.codes == b.codes);
    REQUIRE(a.steps == b.steps);
    REQUIRE(events_to_text(a.events) == events_to_text(b.events));
}

TEST_CASE("parallel size cuts emission steps by the ceil-division law") {
    auto steps_for = [&](i64 k) {
        QueueModel model(small_vocab(k));
        std::vector<TokenId> text(10, 7);
        script_chunk(model, 10, 40, 4, [](i64 f) { return static_cast<LaneCode>(f % 64); });
        ChunkPolicy policy;
        policy.delimiters = {};
        GenerateResult r = generate(text, model, policy, DecodeMode::greedy(), quiet_params(4));
        REQUIRE(static_cast<i64>(r.codes.size()) == 40);
        return r.steps;
    };
    REQUIRE(steps_for(1) == std::max<i64>(10, 4 + 40));
    REQUIRE(steps_for(4) == std::max<i64>(10, 4 + 10));
}

TEST_CASE("greedy decode of a real model is reproducible bit for bit") {
    SpeechLMConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers_base = 1;
    cfg.n_layers_adapter = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 256;
    cfg.vocab = ExtendedVocab(16, 12, 2);
    SpeechLM model(cfg, 303);

    std::vector<TokenId> text{3, 5, 7, 9, 11, 13};
    ChunkPolicy policy;
    policy.delimiters = {};
    DecodeParams params = quiet_params(4, 4);

    auto run = [&] {
        SpeechLM::Stepper stepper(model);
        return generate_forced(text, stepper, policy, DecodeMode::greedy(), params);
    };
    GenerateResult a = run();
    GenerateResult b = run();
    REQUIRE(a.codes == b.codes);
    REQUIRE(events_to_text(a.events) == events_to_text(b.events));
    REQUIRE(static_cast<i64>(a.codes.size()) == 4 * 6);
}

TEST_CASE("history monotonicity: a chunk prefix reproduces a prefix of the history") {
    auto scripted = [&] {
        QueueModel model(small_vocab(2));
        return model;
    };
    std::vector<TokenId> text{2, 3, 1, 4, 5, 1, 6};  // delimiters split into 3 chunks
    ChunkPolicy policy;
    ChunkPlan plan = plan_chunks(text, policy, 2);
    REQUIRE(plan.chunks.size() == 3);

    auto decode_prefix = [&](size_t n_chunks) {
        QueueModel model = scripted();
        DecodeState state(model.v, text, plan, 0);
        DecodeParams params = quiet_params(2, 4);
        for (size_t c = 0; c < n_chunks; ++c) {
            script_chunk(model, plan.chunks[c].length(), 4 * plan.chunks[c].length(), 2,
                         [&](i64 f) { return static_cast<LaneCode>((f + 7 * static_cast<i64>(c)) % 64); });
            REQUIRE(decode_chunk(state, static_cast<i64>(c), model, DecodeMode::greedy(), params));
        }
        return state.history;
    };

    auto full = decode_prefix(3);
    auto prefix = decode_prefix(2);
    REQUIRE(prefix.size() < full.size());
    for (size_t i = 0; i < prefix.size(); ++i) REQUIRE(prefix[i] == full[i]);
}

TEST_CASE("decoding chunks out of order is a contract violation") {
    QueueModel model(small_vocab(2));
    std::vector<TokenId> text{2, 1, 3};
    ChunkPolicy policy;
    ChunkPlan plan = plan_chunks(text, policy, 2);
    DecodeState state(model.v, text, plan, 0);
    REQUIRE_THROWS_AS(decode_chunk(state, 1, model, DecodeMode::greedy(), quiet_params(2)), error);
}

TEST_CASE("dual-track with an instantaneous producer equals offline generate") {
    std::vector<TokenId> text{2, 3, 1, 4, 5, 6, 1, 7, 8};
    ChunkPolicy policy;
    DecodeParams params = quiet_params(3, 4);

    QueueModel offline_model(small_vocab(2));
    ChunkPlan plan = plan_chunks(text, policy, params.delay);
    auto script_all = [&](QueueModel& m) {
        for (size_t c = 0; c < plan.chunks.size(); ++c)
            script_chunk(m, plan.chunks[c].length(), 4 * plan.chunks[c].length(), params.delay,
                         [&](i64 f) { return static_cast<LaneCode>((f + 11 * static_cast<i64>(c)) % 64); });
    };
    script_all(offline_model);
    GenerateResult offline = generate(text, offline_model, policy, DecodeMode::greedy(), params);

    QueueModel stream_model(small_vocab(2));
    script_all(stream_model);
    DualTrackResult streamed = dual_track_run(
        [&](const std::function<void(TokenId)>& emit) {
            for (TokenId t : text) emit(t);
        },
        stream_model, policy, DecodeMode::greedy(), params);

    REQUIRE_FALSE(streamed.producer_failed);
    REQUIRE(streamed.gen.codes == offline.codes);
    REQUIRE(streamed.gen.steps == offline.steps);
    REQUIRE(events_to_text(streamed.gen.events) == events_to_text(offline.events));
    REQUIRE(streamed.arrivals.size() == text.size());
}

TEST_CASE("dual-track decodes chunk 1 before chunk 2 text arrives") {
    std::vector<TokenId> chunk1{2, 3, 4, 1};
    std::vector<TokenId> chunk2{5, 6, 1};
    ChunkPolicy policy;
    DecodeParams params = quiet_params(2, 4);
    params.timestamps = true;

    QueueModel model(small_vocab(2));
    script_chunk(model, 4, 8, 2, [](i64 f) { return static_cast<LaneCode>(f % 64); });
    script_chunk(model, 3, 6, 2, [](i64 f) { return static_cast<LaneCode>((f + 5) % 64); });

    DualTrackResult r = dual_track_run(
        [&](const std::function<void(TokenId)>& emit) {
            for (TokenId t : chunk1) emit(t);
            std::this_thread::sleep_for(std::chrono::milliseconds(150));
            for (TokenId t : chunk2) emit(t);
        },
        model, policy, DecodeMode::greedy(), params);

    i64 last_chunk1_speech = 0;
    for (const auto& e : r.gen.events)
        if (e.kind == EventKind::speech_tokens && e.chunk == 0)
            last_chunk1_speech = std::max(last_chunk1_speech, e.t_ns);
    i64 first_chunk2_arrival = std::numeric_limits<i64>::max();
    for (const auto& a : r.arrivals)
        if (a.index >= static_cast<i64>(chunk1.size()))
            first_chunk2_arrival = std::min(first_chunk2_arrival, a.t_ns);
    REQUIRE(last_chunk1_speech > 0);
    REQUIRE(last_chunk1_speech < first_chunk2_arrival);
}

TEST_CASE("dual-track with an empty producer emits only the done event") {
    QueueModel model(small_vocab(2));
    ChunkPolicy policy;
    DualTrackResult r = dual_track_run([](const std::function<void(TokenId)>&) {}, model, policy,
                                       DecodeMode::greedy(), quiet_params(2));
    REQUIRE(r.gen.codes.empty());
    REQUIRE(r.gen.events.size() == 1);
    REQUIRE(r.gen.events[0].kind == EventKind::done);
}

TEST_CASE("producer failure stops gracefully with a partial log") {
    QueueModel model(small_vocab(2));
    script_chunk(model, 2, 4, 2, [](i64 f) { return static_cast<LaneCode>(f); });
    ChunkPolicy policy;
    DualTrackResult r = dual_track_run(
        [&](const std::function<void(TokenId)>& emit) {
            emit(2);
            emit(1);  // closes chunk 1
            throw std::runtime_error("producer exploded");
        },
        model, policy, DecodeMode::greedy(), quiet_params(2, 4));
    REQUIRE(r.producer_failed);
    REQUIRE(r.producer_error == "producer exploded");
    REQUIRE(r.gen.codes.size() == 4);
    REQUIRE(r.gen.events.back().kind == EventKind::done);
}

TEST_CASE("dual-track truncation unblocks the producer and carries partial output") {
    QueueModel model(small_vocab(2));
    // script endless non-EOS blocks so the first chunk exhausts its budget
    for (int i = 0; i < 500; ++i)
        model.replies.push_back({static_cast<LaneCode>(i % 64), static_cast<LaneCode>((i + 1) % 64)});
    ChunkPolicy policy;
    try {
        dual_track_run(
            [&](const std::function<void(TokenId)>& emit) {
                emit(2);
                emit(1);  // closes chunk 0
                for (int i = 0; i < 200; ++i) emit(3);  // would fill any bounded queue
            },
            model, policy, DecodeMode::greedy(), quiet_params(2, 4), /*queue_capacity=*/4);
        FAIL("expected truncation");
    } catch (const truncation_error& e) {
        REQUIRE(e.partial().truncated);
        REQUIRE(!e.partial().codes.empty());
    }
}

TEST_CASE("sampled mode is deterministic under a fixed seed") {
    SpeechLMConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers_base = 1;
    cfg.n_layers_adapter = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 128;
    cfg.vocab = ExtendedVocab(16, 12, 2);
    SpeechLM model(cfg, 404);
    std::vector<TokenId> text{3, 4, 5, 6};
    ChunkPolicy policy;
    policy.delimiters = {};
    auto run = [&](u64 seed) {
        SpeechLM::Stepper stepper(model);
        return generate_forced(text, stepper, policy, DecodeMode::sampled(seed), quiet_params(2, 4));
    };
    REQUIRE(run(9).codes == run(9).codes);
    REQUIRE(run(9).codes != run(10).codes);
}

TEST_CASE("event log serialization writes one record per line") {
    QueueModel model(small_vocab(2));
    std::vector<TokenId> text{2, 3};
    script_chunk(model, 2, 4, 2, [](i64 f) { return static_cast<LaneCode>(f); });
    ChunkPolicy policy;
    policy.delimiters = {};
    GenerateResult r = generate(text, model, policy, DecodeMode::greedy(), quiet_params(2, 4));

    const auto path = std::filesystem::temp_directory_path() / "ttslab_events_test" / "events.jsonl";
    std::filesystem::remove_all(path.parent_path());
    save_events(path, r.events);
    std::ifstream in(path);
    std::string line;
    size_t lines = 0;
    while (std::getline(in, line)) {
        auto rec = nlohmann::json::parse(line);
        REQUIRE(rec.contains("step"));
        REQUIRE(rec.contains("kind"));
        REQUIRE(rec.contains("payload"));
        REQUIRE(rec.contains("t_ns"));
        ++lines;
    }
    REQUIRE(lines == r.events.size());
    std::filesystem::remove_all(path.parent_path());
}
