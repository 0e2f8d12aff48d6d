#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "ttslab/common.hpp"
#include "ttslab/rng.hpp"
#include "ttslab/vocab.hpp"

namespace ttslab {

inline LaneCode lane_pad_code(i64 n_speech) { return static_cast<LaneCode>(n_speech); }
inline LaneCode lane_eos_code(i64 n_speech) { return static_cast<LaneCode>(n_speech + 1); }

// Deterministic speech-tokenizer stand-in. A text token x at position p maps
// to m codes (a*x + b*j + p) mod n_speech. The position term makes the code
// stream context dependent: a generator has to track alignment over the whole
// sequence, which is what makes long-form drift observable on this task.
// Exact inversion additionally needs n_text <= n_speech and gcd(a, n_speech)
// = 1, so each block determines its token uniquely.
struct OracleSpec {
    i64 n_text = 64;
    i64 n_speech = 64;
    i64 m = 8;  // speech codes per text token
    i64 a = 5;
    i64 b = 3;
    double token_rate_hz = 25.0;

    void validate() const {
        if (n_text < 1) fail(errc::config, "oracle.n_text: must be >= 1");
        if (n_speech < 1) fail(errc::config, "oracle.n_speech: must be >= 1");
        if (n_text > n_speech)
            fail(errc::config, "oracle.n_text: must be <= n_speech for exact block inversion");
        if (m < 1) fail(errc::config, "oracle.m: must be >= 1");
        if (token_rate_hz <= 0) fail(errc::config, "oracle.token_rate_hz: must be positive");
        if (std::gcd(a, n_speech) != 1)
            fail(errc::config, "oracle.a: must be coprime with n_speech, got a=" + std::to_string(a) +
                                   ", n_speech=" + std::to_string(n_speech));
    }

    i64 a_inverse() const {
        // extended Euclid; validate() guarantees the inverse exists
        i64 t = 0, new_t = 1, r = n_speech, new_r = ((a % n_speech) + n_speech) % n_speech;
        while (new_r != 0) {
            const i64 q = r / new_r;
            std::swap(t -= q * new_t, new_t);
            std::swap(r -= q * new_r, new_r);
        }
        return ((t % n_speech) + n_speech) % n_speech;
    }

    LaneCode pad_code() const { return lane_pad_code(n_speech); }
    LaneCode eos_code() const { return lane_eos_code(n_speech); }
};

inline std::vector<LaneCode> oracle_encode(const std::vector<TokenId>& text, const OracleSpec& spec) {
    spec.validate();
    std::vector<LaneCode> codes;
    codes.reserve(text.size() * static_cast<size_t>(spec.m) + 1);
    for (size_t p = 0; p < text.size(); ++p) {
        const TokenId x = text[p];
        if (x < 0 || x >= spec.n_text)
            fail(errc::range, "oracle_encode: token " + std::to_string(x) + " outside [0, " +
                                  std::to_string(spec.n_text) + ")");
        for (i64 j = 0; j < spec.m; ++j)
            codes.push_back(static_cast<LaneCode>(
                (spec.a * x + spec.b * j + static_cast<i64>(p)) % spec.n_speech));
    }
    codes.push_back(spec.eos_code());
    return codes;
}

struct OracleDecodeResult {
    std::vector<TokenId> text;
    std::vector<bool> clean;  // per token: all available codes present, valid and agreeing
};

// Decode a window of the code stream starting at global code index `offset`.
// A token is owned by the window containing its first code; leading codes of
// a token owned by the previous window are skipped, trailing cut-off blocks
// are decoded from the codes available and flagged. Offset 0 over the full
// stream is the plain inverse of oracle_encode.
inline OracleDecodeResult oracle_decode_window(const std::vector<LaneCode>& codes, const OracleSpec& spec,
                                               i64 offset) {
    spec.validate();
    const i64 a_inv = spec.a_inverse();
    i64 end = static_cast<i64>(codes.size());
    // gold streams carry a trailing EOS marker; drop it before block math
    while (end > 0 && codes[static_cast<size_t>(end - 1)] == spec.eos_code()) --end;

    OracleDecodeResult out;
    i64 token = (offset + spec.m - 1) / spec.m;  // first token whose block starts in-window
    for (; token * spec.m < offset + end; ++token) {
        std::vector<i64> votes;
        bool complete = true;
        bool disagree = false;
        for (i64 j = 0; j < spec.m; ++j) {
            const i64 g = token * spec.m + j;
            if (g < offset || g >= offset + end) {
                complete = false;
                continue;
            }
            const LaneCode c = codes[static_cast<size_t>(g - offset)];
            if (c < 0 || c >= spec.n_speech) {
                complete = false;
                continue;
            }
            const i64 x = ((a_inv * (c - spec.b * j - token)) % spec.n_speech + spec.n_speech) % spec.n_speech;
            if (x < spec.n_text) votes.push_back(x);
            else complete = false;
        }
        i64 best = 0;
        if (!votes.empty()) {
            std::sort(votes.begin(), votes.end());
            i64 best_count = 0;
            for (size_t i = 0; i < votes.size();) {
                size_t j = i;
                while (j < votes.size() && votes[j] == votes[i]) ++j;
                if (static_cast<i64>(j - i) > best_count) {
                    best_count = static_cast<i64>(j - i);
                    best = votes[i];
                }
                i = j;
            }
            disagree = best_count != static_cast<i64>(votes.size());
        } else {
            complete = false;
        }
        out.text.push_back(best);
        out.clean.push_back(complete && !disagree && static_cast<i64>(votes.size()) == spec.m);
    }
    return out;
}

inline OracleDecodeResult oracle_decode(const std::vector<LaneCode>& codes, const OracleSpec& spec) {
    return oracle_decode_window(codes, spec, 0);
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct LengthRange {
    i64 min = 8;
    i64 max = 32;
};

struct DatasetRequest {
    i64 n_train = 2000;
    i64 n_heldout_short = 200;
    i64 n_heldout_long = 100;
    LengthRange train_len{8, 32};
    LengthRange long_len{256, 320};
    double delimiter_prob = 1.0 / 12.0;
    TokenId delimiter_id = 1;

    void validate() const {
        if (n_train < 1) fail(errc::config, "dataset.n_train: must be >= 1");
        if (train_len.min < 1 || train_len.min > train_len.max)
            fail(errc::config, "dataset.train_len: invalid range");
        if (long_len.min < 1 || long_len.min > long_len.max)
            fail(errc::config, "dataset.long_len: invalid range");
        if (delimiter_prob < 0 || delimiter_prob >= 1)
            fail(errc::config, "dataset.delimiter_prob: must be in [0, 1)");
    }
};

struct SynthSample {
    std::vector<TokenId> text;
    std::vector<LaneCode> speech;  // m * text length codes plus one EOS
    i64 bucket = 0;                // floor(log2(length))
};

struct Dataset {
    OracleSpec spec;
    u64 seed = 0;
    std::vector<SynthSample> train, heldout_short, heldout_long;
};

inline i64 length_bucket(i64 len) {
    i64 b = 0;
    while ((i64(1) << (b + 1)) <= len) ++b;
    return b;
}

inline SynthSample make_sample(i64 len, const OracleSpec& spec, const DatasetRequest& req, Rng& rng) {
    SynthSample s;
    s.text.reserve(static_cast<size_t>(len));
    for (i64 i = 0; i < len; ++i) {
        if (req.delimiter_prob > 0 && rng.uniform() < req.delimiter_prob)
            s.text.push_back(req.delimiter_id);
        else
            s.text.push_back(rng.uniform_int(spec.n_text));
    }
    s.speech = oracle_encode(s.text, spec);
    s.bucket = length_bucket(len);
    return s;
}

inline Dataset make_dataset(const DatasetRequest& req, const OracleSpec& spec, u64 seed) {
    req.validate();
    spec.validate();
    if (req.delimiter_id < 0 || req.delimiter_id >= spec.n_text)
        fail(errc::config, "dataset.delimiter_id: outside text vocabulary");
    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    Rng rng(seed);

    std::vector<i64> train_lens(static_cast<size_t>(req.n_train));
    for (auto& len : train_lens) len = rng.uniform_range(req.train_len.min, req.train_len.max);
    for (i64 len : train_lens) ds.train.push_back(make_sample(len, spec, req, rng));

    std::vector<i64> sorted = train_lens;
    std::sort(sorted.begin(), sorted.end());
    const i64 median = sorted[sorted.size() / 2];
    const i64 long_min = std::max(req.long_len.min, 8 * median);
    const i64 long_max = std::max(req.long_len.max, long_min);

    for (i64 i = 0; i < req.n_heldout_short; ++i)
        ds.heldout_short.push_back(make_sample(rng.uniform_range(req.train_len.min, req.train_len.max), spec, req, rng));
    for (i64 i = 0; i < req.n_heldout_long; ++i)
        ds.heldout_long.push_back(make_sample(rng.uniform_range(long_min, long_max), spec, req, rng));
    return ds;
}

// ---------------------------------------------------------------------------
// Line-delimited serialization: one header record followed by sample records.
// ---------------------------------------------------------------------------

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    nlohmann::json header{{"kind", "header"},
                          {"n_text", ds.spec.n_text},
                          {"n_speech", ds.spec.n_speech},
                          {"m", ds.spec.m},
                          {"a", ds.spec.a},
                          {"b", ds.spec.b},
                          {"token_rate_hz", ds.spec.token_rate_hz},
                          {"seed", ds.seed}};
    out << header.dump() << "\n";
    auto write_split = [&](const char* split, const std::vector<SynthSample>& samples) {
        for (const auto& s : samples) {
            nlohmann::json rec{{"kind", "sample"}, {"split", split}, {"text", s.text},
                               {"speech", s.speech}, {"bucket", s.bucket}};
            out << rec.dump() << "\n";
        }
    };
    write_split("train", ds.train);
    write_split("short", ds.heldout_short);
    write_split("long", ds.heldout_long);
    if (!out) fail(errc::io, "write failed: " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io, "cannot open " + path.string());
    Dataset ds;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded()) fail(errc::io, "malformed dataset record in " + path.string());
        const std::string kind = rec.value("kind", "");
        if (kind == "header") {
            ds.spec.n_text = rec.at("n_text").get<i64>();
            ds.spec.n_speech = rec.at("n_speech").get<i64>();
            ds.spec.m = rec.at("m").get<i64>();
            ds.spec.a = rec.at("a").get<i64>();
            ds.spec.b = rec.at("b").get<i64>();
            ds.spec.token_rate_hz = rec.at("token_rate_hz").get<double>();
            ds.seed = rec.at("seed").get<u64>();
            have_header = true;
        } else if (kind == "sample") {
            SynthSample s;
            s.text = rec.at("text").get<std::vector<TokenId>>();
            s.speech = rec.at("speech").get<std::vector<LaneCode>>();
            s.bucket = rec.at("bucket").get<i64>();
            const std::string split = rec.at("split").get<std::string>();
            if (split == "train") ds.train.push_back(std::move(s));
            else if (split == "short") ds.heldout_short.push_back(std::move(s));
            else if (split == "long") ds.heldout_long.push_back(std::move(s));
            else fail(errc::io, "unknown split '" + split + "' in " + path.string());
        }
    }
    if (!have_header) fail(errc::io, "dataset has no header record: " + path.string());
    ds.spec.validate();
    return ds;
}

}  // namespace ttslab
