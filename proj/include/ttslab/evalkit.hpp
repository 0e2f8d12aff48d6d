#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ttslab/common.hpp"
#include "ttslab/synthdata.hpp"

namespace ttslab {

// ---------------------------------------------------------------------------
// Edit distance (unit substitution/insertion/deletion costs) and error rates.
// ---------------------------------------------------------------------------

template <class T>
i64 levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
    const size_t n = b.size();
    std::vector<i64> prev(n + 1), cur(n + 1);
    for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<i64>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<i64>(i);
        for (size_t j = 1; j <= n; ++j) {
            const i64 sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

// Levenshtein distance divided by reference length; can exceed 1.
template <class T>
double edit_distance_rate(const std::vector<T>& hyp, const std::vector<T>& ref) {
    if (ref.empty()) fail(errc::config, "edit_distance_rate: empty reference");
    return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

enum class Unit { word, character };

inline std::vector<std::string> split_units(const std::string& text, Unit unit) {
    std::vector<std::string> out;
    if (unit == Unit::word) {
        std::istringstream is(text);
        std::string w;
        while (is >> w) out.push_back(w);
    } else {
        for (char c : text)
            if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(std::string(1, c));
    }
    return out;
}

inline double edit_distance_rate_text(const std::string& hyp, const std::string& ref, Unit unit) {
    return edit_distance_rate(split_units(hyp, unit), split_units(ref, unit));
}

// ---------------------------------------------------------------------------
// Fixed-window transcript segmentation. The stream stands in for a waveform:
// window_seconds * token_rate_hz tokens per window, windows partitioning the
// stream exactly, per-window transcripts concatenated in order. The
// transcriber receives the window plus its global token offset.
// ---------------------------------------------------------------------------

struct TokenStream {
    std::vector<LaneCode> tokens;
    double token_rate_hz = 25.0;
};

using WindowTranscriber = std::function<std::vector<TokenId>(const std::vector<LaneCode>&, i64 offset)>;

inline std::vector<TokenId> segment_transcribe(const TokenStream& stream, double window_seconds,
                                               const WindowTranscriber& transcriber) {
    if (window_seconds <= 0) fail(errc::config, "segment_transcribe: window_seconds must be positive");
    const i64 window = std::max<i64>(1, static_cast<i64>(window_seconds * stream.token_rate_hz));
    std::vector<TokenId> transcript;
    const i64 n = static_cast<i64>(stream.tokens.size());
    for (i64 begin = 0; begin < n || (begin == 0 && n == 0); begin += window) {
        const i64 end = std::min(n, begin + window);
        std::vector<LaneCode> chunk(stream.tokens.begin() + begin, stream.tokens.begin() + end);
        std::vector<TokenId> part = transcriber(chunk, begin);
        transcript.insert(transcript.end(), part.begin(), part.end());
        if (n == 0) break;
    }
    return transcript;
}

inline WindowTranscriber identity_transcriber() {
    return [](const std::vector<LaneCode>& window, i64) {
        return std::vector<TokenId>(window.begin(), window.end());
    };
}

// ASR stand-in: per-window oracle decoding. A token belongs to the window
// holding its first code, so window boundaries that split a block do not
// duplicate or drop tokens on clean streams.
inline WindowTranscriber oracle_transcriber(const OracleSpec& spec) {
    return [spec](const std::vector<LaneCode>& window, i64 offset) {
        return oracle_decode_window(window, spec, offset).text;
    };
}

// ---------------------------------------------------------------------------
// Dual-reference scoring and timing.
// ---------------------------------------------------------------------------

struct EvalSample {
    std::vector<TokenId> hyp;                        // transcript T
    std::vector<TokenId> ref;                        // ground truth G
    std::optional<std::vector<TokenId>> normalized;  // spoken-form reference N
    std::string category;
};

using Normalizer = std::function<std::vector<TokenId>(const std::vector<TokenId>&)>;

inline Normalizer identity_normalizer() {
    return [](const std::vector<TokenId>& g) { return g; };
}

// Collapses runs of equal tokens; the stand-in for a rule-based spoken-form
// normalizer.
inline Normalizer dedup_normalizer() {
    return [](const std::vector<TokenId>& g) {
        std::vector<TokenId> out;
        for (TokenId t : g)
            if (out.empty() || out.back() != t) out.push_back(t);
        return out;
    };
}

// min(rate(T, G), rate(T, N)); falls back to rate(T, G) when N is absent.
inline double dual_reference_score(const EvalSample& s) {
    const double raw = edit_distance_rate(s.hyp, s.ref);
    if (!s.normalized) return raw;
    if (s.normalized->empty()) return raw;
    return std::min(raw, edit_distance_rate(s.hyp, *s.normalized));
}

struct TimingRecord {
    double wall_seconds = 0;
    i64 emitted_tokens = 0;
    double token_rate_hz = 25.0;
};

// Real-time factor: generation time over represented audio duration.
inline double rtf(const TimingRecord& t) {
    if (t.emitted_tokens <= 0) fail(errc::config, "rtf: no emitted tokens");
    if (t.wall_seconds < 0 || t.token_rate_hz <= 0) fail(errc::config, "rtf: invalid timing record");
    return t.wall_seconds / (static_cast<double>(t.emitted_tokens) / t.token_rate_hz);
}

// ---------------------------------------------------------------------------
// Aggregation: per-category mean/max plus a count-weighted overall mean.
// ---------------------------------------------------------------------------

struct ScoredSample {
    std::string category;
    double score = 0;
};

struct CategoryRow {
    std::string category;
    i64 samples = 0;
    double mean = 0;
    double max = 0;
};

struct EvalReport {
    std::vector<CategoryRow> rows;
    i64 total_samples = 0;
    double overall_mean = 0;
};

inline EvalReport aggregate(const std::vector<ScoredSample>& scores) {
    if (scores.empty()) fail(errc::config, "aggregate: no scores");
    std::map<std::string, CategoryRow> by_cat;
    for (const auto& s : scores) {
        auto& row = by_cat[s.category];
        row.category = s.category;
        row.samples += 1;
        row.mean += s.score;
        row.max = std::max(row.max, s.score);
    }
    EvalReport report;
    double weighted = 0;
    for (auto& [_, row] : by_cat) {
        weighted += row.mean;
        row.mean /= static_cast<double>(row.samples);
        report.total_samples += row.samples;
        report.rows.push_back(row);
    }
    report.overall_mean = weighted / static_cast<double>(report.total_samples);
    return report;
}

inline void save_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    out << "category,samples,avg,max\n";
    out << std::setprecision(6) << std::fixed;
    for (const auto& r : report.rows)
        out << r.category << "," << r.samples << "," << r.mean << "," << r.max << "\n";
    out << "overall," << report.total_samples << "," << report.overall_mean << ",\n";
}

inline std::string report_table(const EvalReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "category" << std::right << std::setw(10) << "samples"
       << std::setw(12) << "avg" << std::setw(12) << "max" << "\n";
    os << std::setprecision(4) << std::fixed;
    for (const auto& r : report.rows)
        os << std::left << std::setw(16) << r.category << std::right << std::setw(10) << r.samples
           << std::setw(12) << r.mean << std::setw(12) << r.max << "\n";
    os << std::left << std::setw(16) << "overall" << std::right << std::setw(10) << report.total_samples
       << std::setw(12) << report.overall_mean << std::setw(12) << "" << "\n";
    return os.str();
}

}  // namespace ttslab
