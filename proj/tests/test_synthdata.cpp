#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ttslab/synthdata.hpp"

using namespace ttslab;

namespace {
OracleSpec default_spec() { return OracleSpec{}; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}
}  // namespace

TEST_CASE("degenerate parameters reduce to x mod n_speech") {
    OracleSpec spec;
    spec.a = 1;
    spec.b = 0;
    spec.m = 1;
    std::vector<LaneCode> codes = oracle_encode({17}, spec);
    REQUIRE(codes.size() == 2);  // one code plus EOS
    REQUIRE(codes[0] == 17 % spec.n_speech);
    REQUIRE(codes[1] == spec.eos_code());
}

TEST_CASE("encode emits the block formula and appends EOS") {
    OracleSpec spec;
    std::vector<TokenId> text{3, 60};
    std::vector<LaneCode> codes = oracle_encode(text, spec);
    REQUIRE(static_cast<i64>(codes.size()) == spec.m * 2 + 1);
    for (size_t p = 0; p < text.size(); ++p)
        for (i64 j = 0; j < spec.m; ++j)
            REQUIRE(codes[p * 8 + static_cast<size_t>(j)] ==
                    (spec.a * text[p] + spec.b * j + static_cast<i64>(p)) % spec.n_speech);
    REQUIRE(codes.back() == spec.eos_code());
}

TEST_CASE("round-trip over random texts is the identity") {
    for (i64 m : {1, 4, 8, 12}) {
        OracleSpec spec;
        spec.m = m;
        Rng rng(1000 + m);
        for (int trial = 0; trial < 2500; ++trial) {
            const i64 len = rng.uniform_range(0, 40);
            std::vector<TokenId> text;
            for (i64 i = 0; i < len; ++i) text.push_back(rng.uniform_int(spec.n_text));
            auto decoded = oracle_decode(oracle_encode(text, spec), spec);
            REQUIRE(decoded.text == text);
            for (bool clean : decoded.clean) REQUIRE(clean);
        }
    }
}

TEST_CASE("empty text encodes to EOS only") {
    OracleSpec spec;
    std::vector<LaneCode> codes = oracle_encode({}, spec);
    REQUIRE(codes.size() == 1);
    REQUIRE(codes[0] == spec.eos_code());
    auto decoded = oracle_decode(codes, spec);
    REQUIRE(decoded.text.empty());
}

TEST_CASE("out-of-range token rejected") {
    OracleSpec spec;
    REQUIRE_THROWS_AS(oracle_encode({spec.n_text}, spec), error);
    REQUIRE_THROWS_AS(oracle_encode({-1}, spec), error);
}

TEST_CASE("single corrupted code is outvoted but flagged") {
    OracleSpec spec;
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<TokenId> text{rng.uniform_int(spec.n_text), rng.uniform_int(spec.n_text)};
        std::vector<LaneCode> codes = oracle_encode(text, spec);
        const size_t victim = static_cast<size_t>(rng.uniform_int(spec.m));
        codes[victim] = static_cast<LaneCode>((codes[victim] + 1 + rng.uniform_int(spec.n_speech - 1)) %
                                              spec.n_speech);
        auto decoded = oracle_decode(codes, spec);
        REQUIRE(decoded.text == text);
        REQUIRE_FALSE(decoded.clean[0]);
        REQUIRE(decoded.clean[1]);
    }
}

TEST_CASE("fully random codes rarely agree") {
    OracleSpec spec;
    Rng rng(88);
    i64 clean = 0, total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<LaneCode> codes(static_cast<size_t>(spec.m * 10));
        for (auto& c : codes) c = static_cast<LaneCode>(rng.uniform_int(spec.n_speech));
        auto decoded = oracle_decode(codes, spec);
        for (bool c : decoded.clean) {
            clean += c ? 1 : 0;
            ++total;
        }
    }
    REQUIRE(static_cast<double>(clean) / static_cast<double>(total) < 0.05);
}

TEST_CASE("partial trailing block decodes best-effort and is flagged") {
    OracleSpec spec;
    std::vector<TokenId> text{5, 9};
    std::vector<LaneCode> codes = oracle_encode(text, spec);
    codes.pop_back();                       // drop EOS
    codes.resize(codes.size() - 3);         // cut into the last block
    auto decoded = oracle_decode(codes, spec);
    REQUIRE(decoded.text == text);          // majority of remaining codes still recovers it
    REQUIRE(decoded.clean[0]);
    REQUIRE_FALSE(decoded.clean[1]);
}

TEST_CASE("oracle is injective per position-block") {
    for (i64 n_speech : {16, 64, 251, 256}) {
        OracleSpec spec;
        spec.n_speech = n_speech;
        spec.n_text = std::min<i64>(n_speech, 64);
        spec.a = n_speech % 2 == 0 ? 5 : 3;
        spec.validate();
        for (i64 p : {0, 1, 63}) {
            for (i64 j : {i64(0), spec.m - 1}) {
                std::set<i64> outputs;
                for (TokenId x = 0; x < spec.n_text; ++x)
                    outputs.insert((spec.a * x + spec.b * j + p) % spec.n_speech);
                REQUIRE(static_cast<i64>(outputs.size()) == spec.n_text);
            }
        }
    }
}

TEST_CASE("non-coprime mixing constant is a config error naming the field") {
    OracleSpec spec;
    spec.a = 4;  // gcd(4, 64) != 1
    try {
        spec.validate();
        FAIL("expected config error");
    } catch (const error& e) {
        REQUIRE(e.code() == errc::config);
        REQUIRE(std::string(e.what()).find("oracle.a") != std::string::npos);
    }
}

TEST_CASE("windowed decode with offsets matches full decode on clean streams") {
    OracleSpec spec;
    Rng rng(99);
    std::vector<TokenId> text;
    for (int i = 0; i < 120; ++i) text.push_back(rng.uniform_int(spec.n_text));
    std::vector<LaneCode> codes = oracle_encode(text, spec);
    codes.pop_back();  // emitted streams carry no EOS

    // cut at an arbitrary boundary that splits a block
    const i64 cut = 701;
    std::vector<LaneCode> w1(codes.begin(), codes.begin() + cut);
    std::vector<LaneCode> w2(codes.begin() + cut, codes.end());
    auto d1 = oracle_decode_window(w1, spec, 0);
    auto d2 = oracle_decode_window(w2, spec, cut);
    std::vector<TokenId> merged = d1.text;
    merged.insert(merged.end(), d2.text.begin(), d2.text.end());
    REQUIRE(merged == text);
}

TEST_CASE("dataset generation is deterministic and sized as requested") {
    DatasetRequest req;
    req.n_train = 50;
    req.n_heldout_short = 10;
    req.n_heldout_long = 5;
    OracleSpec spec;
    Dataset a = make_dataset(req, spec, 4242);
    Dataset b = make_dataset(req, spec, 4242);
    REQUIRE(a.train.size() == 50);
    REQUIRE(a.heldout_short.size() == 10);
    REQUIRE(a.heldout_long.size() == 5);
    for (size_t i = 0; i < a.train.size(); ++i) {
        REQUIRE(a.train[i].text == b.train[i].text);
        REQUIRE(a.train[i].speech == b.train[i].speech);
    }

    const auto dir = std::filesystem::temp_directory_path() / "ttslab_test_datasets";
    std::filesystem::remove_all(dir);
    save_dataset(dir / "a.jsonl", a);
    save_dataset(dir / "b.jsonl", b);
    REQUIRE(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

    Dataset loaded = load_dataset(dir / "a.jsonl");
    REQUIRE(loaded.train.size() == a.train.size());
    REQUIRE(loaded.train[3].text == a.train[3].text);
    REQUIRE(loaded.spec.m == spec.m);
    std::filesystem::remove_all(dir);
}

TEST_CASE("heldout-long lengths are at least 8x the training median") {
    DatasetRequest req;
    req.n_train = 200;
    req.n_heldout_long = 20;
    req.long_len = {64, 80};  // requested too short on purpose
    Dataset ds = make_dataset(req, default_spec(), 7);
    std::vector<i64> lens;
    for (const auto& s : ds.train) lens.push_back(static_cast<i64>(s.text.size()));
    std::sort(lens.begin(), lens.end());
    const i64 median = lens[lens.size() / 2];
    for (const auto& s : ds.heldout_long)
        REQUIRE(static_cast<i64>(s.text.size()) >= 8 * median);
}

TEST_CASE("gold speech length is m per token plus EOS and inverts to the text") {
    DatasetRequest req;
    req.n_train = 30;
    Dataset ds = make_dataset(req, default_spec(), 11);
    for (const auto& s : ds.train) {
        REQUIRE(static_cast<i64>(s.speech.size()) == ds.spec.m * static_cast<i64>(s.text.size()) + 1);
        auto decoded = oracle_decode(s.speech, ds.spec);
        REQUIRE(decoded.text == s.text);
        REQUIRE(s.bucket == length_bucket(static_cast<i64>(s.text.size())));
    }
}

TEST_CASE("train length histogram matches the uniform request") {
    DatasetRequest req;
    req.n_train = 5000;
    req.train_len = {8, 32};  // 25 equally likely lengths
    Dataset ds = make_dataset(req, default_spec(), 123);
    std::map<i64, i64> hist;
    for (const auto& s : ds.train) hist[static_cast<i64>(s.text.size())]++;
    REQUIRE(hist.size() == 25);
    const double expected = 5000.0 / 25.0;
    double chi2 = 0;
    for (auto& [len, count] : hist) {
        REQUIRE(len >= 8);
        REQUIRE(len <= 32);
        chi2 += (count - expected) * (count - expected) / expected;
    }
    // chi-square critical value, 24 dof, alpha = 0.01
    REQUIRE(chi2 < 42.98);
}
