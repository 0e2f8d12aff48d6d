#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ttslab/speechlm.hpp"

namespace ttslab {

inline constexpr char kCheckpointMagic[8] = {'T', 'T', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr u64 kCheckpointVersion = 1;

namespace detail {

inline void write_u64(std::ostream& out, u64 v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline u64 read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    u64 v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<u64>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& out, double d) { write_u64(out, std::bit_cast<u64>(d)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline void write_str(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& in) {
    const u64 len = read_u64(in);
    if (len > (1u << 24)) fail(errc::io, "checkpoint: implausible string length");
    std::string s(static_cast<size_t>(len), '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    return s;
}

}  // namespace detail

inline u64 fnv1a(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    u64 h = 1469598103934665603ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline u64 param_hash(const Param& p) {
    return fnv1a(p.w.data(), static_cast<size_t>(p.w.size()) * sizeof(double));
}

// Flat key=value serialization of the model configuration.
inline std::string config_to_text(const SpeechLMConfig& cfg) {
    std::ostringstream os;
    os << "d_model=" << cfg.d_model << "\n";
    os << "n_layers_base=" << cfg.n_layers_base << "\n";
    os << "n_layers_adapter=" << cfg.n_layers_adapter << "\n";
    os << "n_heads=" << cfg.n_heads << "\n";
    os << "max_seq_len=" << cfg.max_seq_len << "\n";
    os << "n_text=" << cfg.vocab.n_text << "\n";
    os << "n_speech=" << cfg.vocab.n_speech << "\n";
    os << "k=" << cfg.vocab.k << "\n";
    os << "tie_heads=" << (cfg.tie_heads ? 1 : 0) << "\n";
    os << "positional="
       << (cfg.positional == Positional::rotary            ? "rotary"
           : cfg.positional == Positional::learned_absolute ? "learned_absolute"
                                                            : "chunk_relative")
       << "\n";
    os << "pad_embeddings_fixed_zero=" << (cfg.pad_embeddings_fixed_zero ? 1 : 0) << "\n";
    os << "init_std=" << cfg.init_std << "\n";
    return os.str();
}

inline SpeechLMConfig config_from_text(const std::string& text) {
    SpeechLMConfig cfg;
    i64 n_text = cfg.vocab.n_text, n_speech = cfg.vocab.n_speech, k = cfg.vocab.k;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "d_model") cfg.d_model = std::stoll(val);
        else if (key == "n_layers_base") cfg.n_layers_base = std::stoll(val);
        else if (key == "n_layers_adapter") cfg.n_layers_adapter = std::stoll(val);
        else if (key == "n_heads") cfg.n_heads = std::stoll(val);
        else if (key == "max_seq_len") cfg.max_seq_len = std::stoll(val);
        else if (key == "n_text") n_text = std::stoll(val);
        else if (key == "n_speech") n_speech = std::stoll(val);
        else if (key == "k") k = std::stoll(val);
        else if (key == "tie_heads") cfg.tie_heads = val == "1";
        else if (key == "positional")
            cfg.positional = val == "rotary"            ? Positional::rotary
                             : val == "learned_absolute" ? Positional::learned_absolute
                                                         : Positional::chunk_relative;
        else if (key == "pad_embeddings_fixed_zero") cfg.pad_embeddings_fixed_zero = val == "1";
        else if (key == "init_std") cfg.init_std = std::stod(val);
        else fail(errc::io, "checkpoint config: unknown key '" + key + "'");
    }
    cfg.vocab = ExtendedVocab(n_text, n_speech, k);
    return cfg;
}

// Layout: magic, version, config text, provenance lines, then each parameter
// in declared order as (name, group, rows, cols, raw 64-bit values), all
// integers and doubles little-endian.
inline void save_checkpoint(const std::filesystem::path& path, SpeechLM& model,
                            const std::vector<std::string>& provenance) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, 8);
    detail::write_u64(out, kCheckpointVersion);
    detail::write_str(out, config_to_text(model.config()));
    detail::write_u64(out, provenance.size());
    for (const auto& line : provenance) detail::write_str(out, line);

    u64 count = 0;
    model.visit_params([&](const std::string&, ParamGroup, Param&) { ++count; });
    detail::write_u64(out, count);
    model.visit_params([&](const std::string& name, ParamGroup group, Param& p) {
        detail::write_str(out, name);
        detail::write_u64(out, group == ParamGroup::base ? 0 : 1);
        detail::write_u64(out, static_cast<u64>(p.w.rows()));
        detail::write_u64(out, static_cast<u64>(p.w.cols()));
        for (i64 i = 0; i < p.w.size(); ++i) detail::write_f64(out, p.w.data()[i]);
    });
    if (!out) fail(errc::io, "write failed: " + path.string());
}

struct LoadedCheckpoint {
    SpeechLM model;
    std::vector<std::string> provenance;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io, "cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        fail(errc::io, "not a checkpoint file: " + path.string());
    const u64 version = detail::read_u64(in);
    if (version != kCheckpointVersion)
        fail(errc::version, "checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                std::to_string(kCheckpointVersion) + ")");
    const SpeechLMConfig cfg = config_from_text(detail::read_str(in));

    LoadedCheckpoint loaded{SpeechLM(cfg, 0), {}};
    const u64 n_prov = detail::read_u64(in);
    for (u64 i = 0; i < n_prov; ++i) loaded.provenance.push_back(detail::read_str(in));

    const u64 count = detail::read_u64(in);
    u64 seen = 0;
    loaded.model.visit_params([&](const std::string& name, ParamGroup group, Param& p) {
        ++seen;
        const std::string stored_name = detail::read_str(in);
        const u64 stored_group = detail::read_u64(in);
        const u64 rows = detail::read_u64(in);
        const u64 cols = detail::read_u64(in);
        if (stored_name != name || stored_group != (group == ParamGroup::base ? 0u : 1u) ||
            rows != static_cast<u64>(p.w.rows()) || cols != static_cast<u64>(p.w.cols()))
            fail(errc::io, "checkpoint: parameter mismatch at '" + stored_name + "' (expected '" + name + "')");
        for (i64 i = 0; i < p.w.size(); ++i) p.w.data()[i] = detail::read_f64(in);
    });
    if (seen != count) fail(errc::io, "checkpoint: parameter count mismatch");
    if (!in) fail(errc::io, "checkpoint truncated: " + path.string());
    return loaded;
}

struct CheckpointSummary {
    u64 version = 0;
    std::string config_text;
    std::vector<std::string> provenance;
    struct Entry {
        std::string name;
        std::string group;
        i64 rows = 0, cols = 0;
        u64 hash = 0;
    };
    std::vector<Entry> params;
};

inline CheckpointSummary inspect_checkpoint(const std::filesystem::path& path) {
    LoadedCheckpoint loaded = load_checkpoint(path);
    CheckpointSummary s;
    s.version = kCheckpointVersion;
    s.config_text = config_to_text(loaded.model.config());
    s.provenance = loaded.provenance;
    loaded.model.visit_params([&](const std::string& name, ParamGroup group, Param& p) {
        s.params.push_back({name, group_name(group), p.w.rows(), p.w.cols(), param_hash(p)});
    });
    return s;
}

}  // namespace ttslab
