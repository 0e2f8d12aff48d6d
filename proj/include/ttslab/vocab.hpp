#pragma once

#include <string>
#include <vector>

#include "ttslab/common.hpp"

namespace ttslab {

// One id space covering text tokens, k lanes of speech codes, and special
// markers. Layout:
//
//   [0, n_text)                         text ids
//   [n_text + lane*n_speech, +n_speech) speech codes, one block per lane
//   [n_text + k*n_speech, ...)          specials: TEXT_PAD, CHUNK_BOS,
//                                       CHUNK_EOS, then k SPEECH_PAD rows and
//                                       k SPEECH_EOS rows
//
// The contiguous blocks make classification a range check. The size law
// |V| = n_text + k*n_speech counts text and speech ids only; specials are
// accounted separately, so total_rows() = extended_size(...) + num_specials().
struct ExtendedVocab {
    i64 n_text = 0;
    i64 n_speech = 0;
    i64 k = 0;

    ExtendedVocab() = default;
    ExtendedVocab(i64 text, i64 speech, i64 lanes) : n_text(text), n_speech(speech), k(lanes) {
        if (n_text < 1) fail(errc::config, "vocab.n_text: must be >= 1");
        if (n_speech < 1) fail(errc::config, "vocab.n_speech: must be >= 1");
        if (k < 1) fail(errc::config, "vocab.k: must be >= 1");
    }

    // |V| without specials.
    i64 extended_size() const { return extended_size(n_text, n_speech, k, 0); }
    static i64 extended_size(i64 n_text, i64 n_speech, i64 k, i64 n_specials) {
        return n_text + k * n_speech + n_specials;
    }

    i64 num_specials() const { return 3 + 2 * k; }
    i64 total_rows() const { return extended_size() + num_specials(); }

    i64 specials_base() const { return n_text + k * n_speech; }
    TokenId text_pad() const { return specials_base(); }
    TokenId chunk_bos() const { return specials_base() + 1; }
    TokenId chunk_eos() const { return specials_base() + 2; }
    TokenId speech_pad_id(i64 lane) const { return specials_base() + 3 + check_lane(lane); }
    TokenId speech_eos_id(i64 lane) const { return specials_base() + 3 + k + check_lane(lane); }

    // Lane-local code space: [0, n_speech) real codes plus two per-lane
    // specials. Lane logit rows have this width.
    LaneCode pad_code() const { return static_cast<LaneCode>(n_speech); }
    LaneCode eos_code() const { return static_cast<LaneCode>(n_speech + 1); }
    i64 lane_width() const { return n_speech + 2; }
    bool is_real_code(LaneCode c) const { return c >= 0 && c < n_speech; }

    TokenId encode_speech(i64 lane, LaneCode code) const {
        check_lane(lane);
        if (code < 0 || code >= n_speech)
            fail(errc::range, "encode_speech: code " + std::to_string(code) + " outside [0, " +
                                  std::to_string(n_speech) + ")");
        return n_text + lane * n_speech + code;
    }

    // Embedding row for any lane slot, specials included.
    TokenId lane_row(i64 lane, LaneCode code) const {
        if (code == pad_code()) return speech_pad_id(lane);
        if (code == eos_code()) return speech_eos_id(lane);
        return encode_speech(lane, code);
    }

    TokenId text_row(TokenId text) const {
        if (text == text_pad()) return text;
        if (text < 0 || text >= n_text)
            fail(errc::range, "text id " + std::to_string(text) + " outside [0, " + std::to_string(n_text) + ")");
        return text;
    }

    enum class Kind { text, speech, special };
    struct Decoded {
        Kind kind;
        i64 lane = -1;       // speech and per-lane specials
        LaneCode code = -1;  // speech only
        TokenId id = -1;
    };

    Decoded decode(TokenId id) const {
        if (id < 0 || id >= total_rows()) fail(errc::range, "decode: id " + std::to_string(id) + " out of range");
        Decoded d;
        d.id = id;
        if (id < n_text) {
            d.kind = Kind::text;
            return d;
        }
        if (id < specials_base()) {
            d.kind = Kind::speech;
            d.lane = (id - n_text) / n_speech;
            d.code = static_cast<LaneCode>((id - n_text) % n_speech);
            return d;
        }
        d.kind = Kind::special;
        const i64 off = id - specials_base();
        if (off >= 3 && off < 3 + k) d.lane = off - 3;          // SPEECH_PAD
        if (off >= 3 + k) d.lane = off - 3 - k;                 // SPEECH_EOS
        return d;
    }

private:
    i64 check_lane(i64 lane) const {
        if (lane < 0 || lane >= k)
            fail(errc::range, "lane " + std::to_string(lane) + " outside [0, " + std::to_string(k) + ")");
        return lane;
    }
};

// One decoding step: one text slot and k speech-lane slots.
struct StepTokens {
    TokenId text = 0;
    std::vector<LaneCode> lanes;

    StepTokens() = default;
    StepTokens(TokenId t, std::vector<LaneCode> l) : text(t), lanes(std::move(l)) {}

    static StepTokens padded(const ExtendedVocab& v, TokenId text) {
        return StepTokens(text, std::vector<LaneCode>(static_cast<size_t>(v.k), v.pad_code()));
    }

    void validate(const ExtendedVocab& v) const {
        if (static_cast<i64>(lanes.size()) != v.k)
            fail(errc::shape, "step: expected " + std::to_string(v.k) + " lanes, got " + std::to_string(lanes.size()));
        v.text_row(text);
        for (i64 i = 0; i < v.k; ++i) v.lane_row(i, lanes[static_cast<size_t>(i)]);
    }

    friend bool operator==(const StepTokens& a, const StepTokens& b) = default;
};

}  // namespace ttslab
