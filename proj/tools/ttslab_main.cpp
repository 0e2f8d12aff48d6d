// ttslab command-line interface: dataset generation, two-stage training,
// chunked parallel generation, decode benchmarking, and WER evaluation.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ttslab/checkpoint.hpp"
#include "ttslab/decoder.hpp"
#include "ttslab/evalkit.hpp"
#include "ttslab/speechlm.hpp"
#include "ttslab/synthdata.hpp"
#include "ttslab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ttslab;

namespace {

struct OracleFlags {
    i64 n_text = 64, n_speech = 64, m = 8, a = 5, b = 3;
    double rate_hz = 25.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--n-text", n_text, "text vocabulary size");
        cmd->add_option("--n-speech", n_speech, "speech codebook size");
        cmd->add_option("--rate-ratio", m, "speech codes per text token");
        cmd->add_option("--mix-a", a, "oracle mixing constant a (coprime with n-speech)");
        cmd->add_option("--mix-b", b, "oracle mixing constant b");
        cmd->add_option("--rate-hz", rate_hz, "speech tokens per second");
    }
    OracleSpec spec() const {
        OracleSpec s{n_text, n_speech, m, a, b, rate_hz};
        s.validate();
        return s;
    }
};

struct ModelFlags {
    i64 d_model = 128, base_layers = 4, adapter_layers = 2, heads = 4, max_seq = 2048, k = 4;
    std::string positional = "chunk";
    bool tie_heads = false;
    bool pad_zero = false;
    double init_std = 0.02;

    void attach(CLI::App* cmd) {
        cmd->add_option("--d-model", d_model, "model width");
        cmd->add_option("--base-layers", base_layers, "frozen-capable backbone depth");
        cmd->add_option("--adapter-layers", adapter_layers, "adapter depth");
        cmd->add_option("--heads", heads, "attention heads");
        cmd->add_option("--max-seq", max_seq, "maximum decode length in steps");
        cmd->add_option("--k", k, "parallel size (speech lanes per step)");
        cmd->add_option("--positional", positional, "rotary|learned|chunk")
            ->check(CLI::IsMember({"rotary", "learned", "chunk"}));
        cmd->add_flag("--tie-heads", tie_heads, "share one output head across lanes");
        cmd->add_flag("--pad-zero", pad_zero, "freeze pad embeddings at zero");
        cmd->add_option("--init-std", init_std, "weight init stddev");
    }
    SpeechLMConfig config(i64 n_text, i64 n_speech, i64 k_override = 0) const {
        SpeechLMConfig cfg;
        cfg.d_model = d_model;
        cfg.n_layers_base = base_layers;
        cfg.n_layers_adapter = adapter_layers;
        cfg.n_heads = heads;
        cfg.max_seq_len = max_seq;
        cfg.vocab = ExtendedVocab(n_text, n_speech, k_override > 0 ? k_override : k);
        cfg.tie_heads = tie_heads;
        cfg.positional = positional == "rotary"    ? Positional::rotary
                         : positional == "learned" ? Positional::learned_absolute
                                                   : Positional::chunk_relative;
        cfg.pad_embeddings_fixed_zero = pad_zero;
        cfg.init_std = init_std;
        return cfg;
    }
};

struct DecodeFlags {
    i64 delay = 4, chunk_max = 24;
    TokenId delimiter = 1;
    bool no_chunking = false;
    double budget_slack = 2.0;
    std::string timestamps = "mono";

    void attach(CLI::App* cmd) {
        cmd->add_option("--delay", delay, "token delay d");
        cmd->add_option("--chunk-max", chunk_max, "max text tokens per chunk");
        cmd->add_option("--delimiter-id", delimiter, "sentence delimiter token id");
        cmd->add_flag("--no-chunking", no_chunking, "decode the whole text as one chunk");
        cmd->add_option("--budget-slack", budget_slack, "step budget slack factor");
        cmd->add_option("--timestamps", timestamps, "mono|zero")->check(CLI::IsMember({"mono", "zero"}));
    }
    ChunkPolicy policy(i64 text_len) const {
        ChunkPolicy p;
        if (no_chunking) {
            p.max_chunk_tokens = std::max<i64>(text_len, 1);
            p.delimiters = {};
        } else {
            p.max_chunk_tokens = chunk_max;
            p.delimiters = {delimiter};
        }
        return p;
    }
    DecodeParams params(i64 rate_ratio) const {
        DecodeParams p;
        p.delay = delay;
        p.rate_ratio = rate_ratio;
        p.budget_slack = budget_slack;
        p.timestamps = timestamps == "mono";
        return p;
    }
};

std::vector<TokenId> parse_ids(const std::string& csv) {
    std::vector<TokenId> ids;
    std::string token;
    std::istringstream is(csv);
    while (std::getline(is, token, ',')) {
        if (!token.empty()) ids.push_back(std::stoll(token));
    }
    if (ids.empty()) fail(errc::config, "text: no token ids given");
    return ids;
}

void write_codes(const fs::path& path, const std::vector<LaneCode>& codes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(errc::io, "cannot open " + path.string() + " for writing");
    for (size_t i = 0; i < codes.size(); ++i) out << (i ? " " : "") << codes[i];
    out << "\n";
}

i64 provenance_steps(const std::vector<std::string>& provenance) {
    i64 total = 0;
    for (const auto& line : provenance) {
        const auto pos = line.find("steps=");
        if (pos != std::string::npos) total += std::stoll(line.substr(pos + 6));
    }
    return total;
}

// --- datagen ---------------------------------------------------------------

struct DatagenCmd {
    std::string out;
    u64 seed = 1;
    OracleFlags oracle;
    i64 n_train = 2000, n_short = 200, n_long = 100;
    i64 len_min = 8, len_max = 32, long_min = 256, long_max = 320;
    double delimiter_prob = 1.0 / 12.0;
    TokenId delimiter = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--out", out, "dataset file to write")->required();
        cmd->add_option("--seed", seed, "generation seed");
        oracle.attach(cmd);
        cmd->add_option("--n-train", n_train, "training samples");
        cmd->add_option("--n-short", n_short, "short heldout samples");
        cmd->add_option("--n-long", n_long, "long heldout samples");
        cmd->add_option("--len-min", len_min, "min training text length");
        cmd->add_option("--len-max", len_max, "max training text length");
        cmd->add_option("--long-min", long_min, "min heldout-long length");
        cmd->add_option("--long-max", long_max, "max heldout-long length");
        cmd->add_option("--delimiter-prob", delimiter_prob, "per-token delimiter probability");
        cmd->add_option("--delimiter-id", delimiter, "delimiter token id");
    }

    int run() const {
        DatasetRequest req;
        req.n_train = n_train;
        req.n_heldout_short = n_short;
        req.n_heldout_long = n_long;
        req.train_len = {len_min, len_max};
        req.long_len = {long_min, long_max};
        req.delimiter_prob = delimiter_prob;
        req.delimiter_id = delimiter;
        Dataset ds = make_dataset(req, oracle.spec(), seed);
        save_dataset(out, ds);
        std::cout << "wrote " << out << ": " << ds.train.size() << " train, " << ds.heldout_short.size()
                  << " short, " << ds.heldout_long.size() << " long samples\n";
        return 0;
    }
};

// --- train -----------------------------------------------------------------

struct TrainCmd {
    std::string dataset, out, loss_csv, resume, plan_audit;
    u64 seed = 1;
    ModelFlags model;
    i64 pretrain_steps = 0, posttrain_steps = 0;
    double base_lr = 1e-3, adapter_lr = 0;
    std::string optimizer = "sgd";
    double momentum = 0.9, weight_decay = 0.0;
    i64 batch_budget = 4096;
    double spread = 2.0;
    i64 chunk_max = 24, delay = 4;
    TokenId delimiter = 1;
    i64 log_every = 10;

    void attach(CLI::App* cmd) {
        cmd->add_option("--dataset", dataset, "training dataset file")->required();
        cmd->add_option("--out", out, "checkpoint to write")->required();
        cmd->add_option("--loss-csv", loss_csv, "loss curve CSV path");
        cmd->add_option("--resume", resume, "checkpoint to continue from");
        cmd->add_option("--plan-audit", plan_audit, "write the first stage batch plan here");
        cmd->add_option("--seed", seed, "training seed");
        model.attach(cmd);
        cmd->add_option("--pretrain-steps", pretrain_steps, "stage one steps (frozen base)");
        cmd->add_option("--posttrain-steps", posttrain_steps, "stage two steps (joint)");
        cmd->add_option("--base-lr", base_lr, "base group learning rate");
        cmd->add_option("--adapter-lr", adapter_lr, "adapter group learning rate (0 = derive)");
        cmd->add_option("--optimizer", optimizer, "sgd|adam")->check(CLI::IsMember({"sgd", "adam"}));
        cmd->add_option("--momentum", momentum, "sgd momentum");
        cmd->add_option("--weight-decay", weight_decay, "weight decay");
        cmd->add_option("--batch-budget", batch_budget, "token budget per batch");
        cmd->add_option("--spread", spread, "max intra-batch length ratio");
        cmd->add_option("--chunk-max", chunk_max, "teacher-forcing chunk cap");
        cmd->add_option("--delay", delay, "token delay d");
        cmd->add_option("--delimiter-id", delimiter, "sentence delimiter token id");
        cmd->add_option("--log-every", log_every, "console loss print interval");
    }

    int run() const {
        Dataset ds = load_dataset(dataset);
        std::vector<std::string> provenance;
        std::optional<SpeechLM> lm;
        if (!resume.empty()) {
            LoadedCheckpoint loaded = load_checkpoint(resume);
            lm.emplace(std::move(loaded.model));
            provenance = loaded.provenance;
            if (lm->vocab().n_text != ds.spec.n_text || lm->vocab().n_speech != ds.spec.n_speech)
                fail(errc::config, "resume: checkpoint vocabulary does not match the dataset");
        } else {
            lm.emplace(model.config(ds.spec.n_text, ds.spec.n_speech), seed);
        }

        TrainLayout layout;
        layout.policy.max_chunk_tokens = chunk_max;
        layout.policy.delimiters = {delimiter};
        layout.delay = delay;

        OptimizerConfig ocfg;
        ocfg.kind = optimizer == "adam" ? OptimizerConfig::Kind::adam : OptimizerConfig::Kind::sgd;
        ocfg.momentum = momentum;
        ocfg.weight_decay = weight_decay;

        i64 offset = provenance_steps(provenance);
        const bool append_csv = !resume.empty() && !loss_csv.empty() && fs::exists(loss_csv);
        bool wrote_csv = false;
        auto run_stage = [&](StageConfig::Kind kind, i64 steps) {
            if (steps <= 0) return;
            StageConfig stage;
            stage.kind = kind;
            stage.steps = steps;
            stage.base_lr = base_lr;
            stage.adapter_lr = adapter_lr;
            stage.batch_budget = batch_budget;
            stage.spread = spread;
            stage.optimizer = ocfg;
            TrainReport report = train_stage(*lm, ds, stage, layout, seed, offset);
            if (!plan_audit.empty() && provenance.empty()) save_batch_plan(plan_audit, report.plan);
            if (!loss_csv.empty()) {
                save_loss_curve(loss_csv, report.curve, append_csv || wrote_csv);
                wrote_csv = true;
            }
            for (size_t i = 0; i < report.curve.size(); i += static_cast<size_t>(std::max<i64>(log_every, 1)))
                std::cout << stage.name() << " step " << report.curve[i].step << " loss "
                          << report.curve[i].loss << "\n";
            std::ostringstream prov;
            prov << "stage=" << stage.name() << " steps=" << steps << " base_lr=" << stage.base_lr
                 << " adapter_lr=" << stage.effective_adapter_lr() << " optimizer=" << optimizer
                 << " seed=" << seed;
            provenance.push_back(prov.str());
            offset += steps;
        };
        run_stage(StageConfig::Kind::pretrain, pretrain_steps);
        run_stage(StageConfig::Kind::posttrain, posttrain_steps);

        save_checkpoint(out, *lm, provenance);
        std::cout << "wrote " << out << " after " << offset << " total steps\n";
        return 0;
    }
};

// --- generate ----------------------------------------------------------------

struct GenerateCmd {
    std::string ckpt, text_csv, dataset, split = "long", out_codes, out_events;
    i64 index = 0;
    std::string mode = "greedy";
    u64 sample_seed = 0;
    double temperature = 1.0;
    bool forced = false;
    i64 rate_ratio = 8;
    DecodeFlags decode;

    void attach(CLI::App* cmd) {
        cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
        cmd->add_option("--text", text_csv, "inline comma-separated text token ids");
        cmd->add_option("--dataset", dataset, "dataset file to draw text from");
        cmd->add_option("--split", split, "train|short|long")->check(CLI::IsMember({"train", "short", "long"}));
        cmd->add_option("--index", index, "sample index within the split");
        cmd->add_option("--out-codes", out_codes, "write emitted speech codes here");
        cmd->add_option("--events", out_events, "write the event log here");
        cmd->add_option("--mode", mode, "greedy|sampled")->check(CLI::IsMember({"greedy", "sampled"}));
        cmd->add_option("--sample-seed", sample_seed, "sampling seed");
        cmd->add_option("--temperature", temperature, "sampling temperature");
        cmd->add_flag("--forced", forced, "force rate-ratio codes per text token (no EOS)");
        cmd->add_option("--force-rate", rate_ratio, "codes per token for --forced and budgets");
        decode.attach(cmd);
    }

    int run() const {
        LoadedCheckpoint loaded = load_checkpoint(ckpt);
        std::vector<TokenId> text;
        i64 rate = rate_ratio;
        if (!text_csv.empty()) {
            text = parse_ids(text_csv);
        } else if (!dataset.empty()) {
            Dataset ds = load_dataset(dataset);
            const auto& pool = split == "train" ? ds.train : split == "short" ? ds.heldout_short : ds.heldout_long;
            if (index < 0 || index >= static_cast<i64>(pool.size()))
                fail(errc::config, "index: out of range for split '" + split + "'");
            text = pool[static_cast<size_t>(index)].text;
            rate = ds.spec.m;
        } else {
            fail(errc::config, "text: give --text or --dataset");
        }

        DecodeMode dm = mode == "greedy" ? DecodeMode::greedy() : DecodeMode::sampled(sample_seed, temperature);
        DecodeParams params = decode.params(rate);
        ChunkPolicy policy = decode.policy(static_cast<i64>(text.size()));
        SpeechLM::Stepper stepper(loaded.model);

        GenerateResult result;
        bool truncated = false;
        try {
            result = forced ? generate_forced(text, stepper, policy, dm, params)
                            : generate(text, stepper, policy, dm, params);
        } catch (const truncation_error& e) {
            result = e.partial();
            truncated = true;
        }
        if (!out_codes.empty()) write_codes(out_codes, result.codes);
        if (!out_events.empty()) save_events(out_events, result.events);

        std::cout << "steps " << result.steps << ", emitted " << result.codes.size() << " codes, wall "
                  << result.wall_seconds << " s";
        if (!result.codes.empty())
            std::cout << ", rtf " << rtf({result.wall_seconds, static_cast<i64>(result.codes.size()), 25.0});
        std::cout << (truncated ? ", TRUNCATED" : "") << "\n";
        return truncated ? 3 : 0;
    }
};

// --- bench -------------------------------------------------------------------

struct BenchCmd {
    std::string ckpt, out_csv;
    u64 seed = 1;
    i64 text_len = 48, trials = 3;
    ModelFlags model;
    OracleFlags oracle;
    DecodeFlags decode;
    double delimiter_prob = 1.0 / 12.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--ckpt", ckpt, "checkpoint used where the lane count matches");
        cmd->add_option("--out", out_csv, "write the bench table CSV here");
        cmd->add_option("--seed", seed, "text and model seed");
        cmd->add_option("--text-len", text_len, "benchmark text length");
        cmd->add_option("--trials", trials, "timed trials per row (median reported)");
        cmd->add_option("--delimiter-prob", delimiter_prob, "delimiter density in the bench text");
        model.attach(cmd);
        oracle.attach(cmd);
        decode.attach(cmd);
    }

    struct Row {
        i64 k;
        bool chunking;
        i64 steps;
        double wall, rtf_value, wer;
    };

    int run() const {
        OracleSpec spec = oracle.spec();
        Rng rng(seed);
        std::vector<TokenId> text;
        for (i64 i = 0; i < text_len; ++i)
            text.push_back(rng.uniform() < delimiter_prob ? decode.delimiter : rng.uniform_int(spec.n_text));

        std::optional<LoadedCheckpoint> loaded;
        if (!ckpt.empty()) loaded.emplace(load_checkpoint(ckpt));

        std::vector<Row> rows;
        for (i64 k : {i64(1), i64(2), i64(4)}) {
            std::optional<SpeechLM> lm;
            if (loaded && loaded->model.config().vocab.k == k) lm.emplace(loaded->model);
            else lm.emplace(SpeechLM(model.config(spec.n_text, spec.n_speech, k), seed));

            for (bool chunking : {true, false}) {
                DecodeParams params = decode.params(spec.m);
                params.timestamps = false;
                ChunkPolicy policy;
                if (chunking) {
                    policy.max_chunk_tokens = decode.chunk_max;
                    policy.delimiters = {decode.delimiter};
                } else {
                    policy.max_chunk_tokens = text_len;
                    policy.delimiters = {};
                }

                double best_wall = 0;
                GenerateResult result;
                std::vector<double> walls;
                for (i64 t = 0; t <= trials; ++t) {  // first run is warmup
                    SpeechLM::Stepper stepper(*lm);
                    result = generate_forced(text, stepper, policy, DecodeMode::greedy(), params);
                    if (t > 0) walls.push_back(result.wall_seconds);
                }
                std::sort(walls.begin(), walls.end());
                best_wall = walls[walls.size() / 2];

                auto decoded = oracle_decode(result.codes, spec);
                const double wer = edit_distance_rate(decoded.text, text);
                rows.push_back({k, chunking, result.steps, best_wall,
                                rtf({best_wall, static_cast<i64>(result.codes.size()), spec.token_rate_hz}),
                                wer});
            }
        }

        std::ostringstream table;
        table << "k,chunking,steps,wall_seconds,rtf,wer\n";
        for (const auto& r : rows)
            table << r.k << "," << (r.chunking ? "on" : "off") << "," << r.steps << "," << r.wall << ","
                  << r.rtf_value << "," << r.wer << "\n";
        std::cout << table.str();
        if (!out_csv.empty()) {
            fs::path p(out_csv);
            if (p.has_parent_path()) fs::create_directories(p.parent_path());
            std::ofstream out(p);
            out << table.str();
        }
        return 0;
    }
};

// --- eval --------------------------------------------------------------------

struct EvalCmd {
    std::string ckpt, dataset, split = "long", out_csv;
    i64 limit = 0;
    double window_seconds = 28.0;
    std::string normalizer = "none";
    bool use_gold = false;
    DecodeFlags decode;

    void attach(CLI::App* cmd) {
        cmd->add_option("--ckpt", ckpt, "model checkpoint");
        cmd->add_option("--dataset", dataset, "dataset file")->required();
        cmd->add_option("--split", split, "train|short|long")->check(CLI::IsMember({"train", "short", "long"}));
        cmd->add_option("--limit", limit, "evaluate at most this many samples (0 = all)");
        cmd->add_option("--out", out_csv, "write the report CSV here");
        cmd->add_option("--window-seconds", window_seconds, "transcription window");
        cmd->add_option("--normalizer", normalizer, "none|dedup")->check(CLI::IsMember({"none", "dedup"}));
        cmd->add_flag("--use-gold", use_gold, "score the gold codes instead of generating");
        decode.attach(cmd);
    }

    int run() const {
        Dataset ds = load_dataset(dataset);
        const auto& pool = split == "train" ? ds.train : split == "short" ? ds.heldout_short : ds.heldout_long;
        if (pool.empty()) fail(errc::config, "split '" + split + "' is empty");
        if (!use_gold && ckpt.empty()) fail(errc::config, "ckpt: required unless --use-gold");

        std::optional<LoadedCheckpoint> loaded;
        if (!use_gold) loaded.emplace(load_checkpoint(ckpt));

        const i64 n = limit > 0 ? std::min<i64>(limit, static_cast<i64>(pool.size()))
                                : static_cast<i64>(pool.size());
        std::vector<ScoredSample> scores;
        i64 truncations = 0;
        for (i64 i = 0; i < n; ++i) {
            const SynthSample& sample = pool[static_cast<size_t>(i)];
            std::vector<LaneCode> codes;
            if (use_gold) {
                codes.assign(sample.speech.begin(), sample.speech.end() - 1);  // strip EOS
            } else {
                DecodeParams params = decode.params(ds.spec.m);
                ChunkPolicy policy = decode.policy(static_cast<i64>(sample.text.size()));
                SpeechLM::Stepper stepper(loaded->model);
                try {
                    codes = generate(sample.text, stepper, policy, DecodeMode::greedy(), params).codes;
                } catch (const truncation_error& e) {
                    codes = e.partial().codes;
                    ++truncations;
                }
            }
            TokenStream stream{codes, ds.spec.token_rate_hz};
            EvalSample es;
            es.hyp = segment_transcribe(stream, window_seconds, oracle_transcriber(ds.spec));
            es.ref = sample.text;
            if (normalizer == "dedup") es.normalized = dedup_normalizer()(sample.text);
            es.category = split + "/bucket" + std::to_string(sample.bucket);
            scores.push_back({es.category, dual_reference_score(es)});
        }

        EvalReport report = aggregate(scores);
        std::cout << report_table(report);
        std::cout << "truncated " << truncations << "/" << n << " runs\n";
        if (!out_csv.empty()) save_report_csv(out_csv, report);
        return 0;
    }
};

// --- inspect-ckpt --------------------------------------------------------------

struct InspectCmd {
    std::string ckpt;

    void attach(CLI::App* cmd) { cmd->add_option("--ckpt", ckpt, "checkpoint file")->required(); }

    int run() const {
        CheckpointSummary s = inspect_checkpoint(ckpt);
        std::cout << "version " << s.version << "\n";
        std::cout << "-- config --\n" << s.config_text;
        std::cout << "-- provenance --\n";
        for (const auto& line : s.provenance) std::cout << line << "\n";
        std::cout << "-- parameters --\n";
        i64 total = 0;
        for (const auto& e : s.params) {
            std::cout << e.name << " [" << e.group << "] " << e.rows << "x" << e.cols << " hash "
                      << std::hex << e.hash << std::dec << "\n";
            total += e.rows * e.cols;
        }
        std::cout << "total " << total << " parameters in " << s.params.size() << " tensors\n";
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale speech-token generation lab"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file with [subcommand] sections");
    std::string dump_config;
    app.add_option("--dump-config", dump_config, "write the effective configuration to this file");

    DatagenCmd datagen;
    datagen.attach(app.add_subcommand("datagen", "generate a synthetic dataset"));
    TrainCmd train;
    train.attach(app.add_subcommand("train", "run the two-stage training schedule"));
    GenerateCmd generate_cmd;
    generate_cmd.attach(app.add_subcommand("generate", "decode speech tokens for a text"));
    BenchCmd bench;
    bench.attach(app.add_subcommand("bench", "sweep parallel size and chunking, report RTF"));
    EvalCmd eval_cmd;
    eval_cmd.attach(app.add_subcommand("eval", "score generations with the windowed WER protocol"));
    InspectCmd inspect;
    inspect.attach(app.add_subcommand("inspect-ckpt", "print checkpoint metadata"));

    try {
        app.parse(argc, argv);
        if (!dump_config.empty()) {
            fs::path p(dump_config);
            if (p.has_parent_path()) fs::create_directories(p.parent_path());
            std::ofstream out(p);
            out << app.config_to_str(true, true);
        }
        if (app.got_subcommand("datagen")) return datagen.run();
        if (app.got_subcommand("train")) return train.run();
        if (app.got_subcommand("generate")) return generate_cmd.run();
        if (app.got_subcommand("bench")) return bench.run();
        if (app.got_subcommand("eval")) return eval_cmd.run();
        if (app.got_subcommand("inspect-ckpt")) return inspect.run();
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const error& e) {
        std::cerr << "error: " << errc_name(e.code()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 2;
    }
}
