#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rat/bench.hpp"
#include "rat/config.hpp"
#include "rat/decoding.hpp"
#include "rat/evaluation.hpp"
#include "rat/gradcheck.hpp"
#include "rat/synthetic.hpp"
#include "rat/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// One JSON line per run, appended to <run_dir>/manifest.jsonl. Every input
/// and produced artifact is recorded with a content hash so a run can be
/// reproduced (and checked) from its manifest alone.
class Manifest {
  public:
    explicit Manifest(std::string command) : command_(std::move(command)) {}

    void set_config(const std::string& path) { config_path_ = path; }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void add_input(const std::string& name, const std::string& path) {
        inputs_.push_back({{"name", name}, {"path", path}, {"hash", rat::io::fnv1a64_file(path)}});
    }
    void add_output(const std::string& name, const std::string& path) {
        outputs_.push_back(
            {{"name", name}, {"path", path}, {"hash", rat::io::fnv1a64_file(path)}});
    }

    void write(const std::string& run_dir) const {
        fs::create_directories(run_dir);
        const fs::path path = fs::path(run_dir) / "manifest.jsonl";
        std::ofstream out(path, std::ios::app);
        if (!out) throw rat::IoError(rat::concat("manifest: cannot open ", path.string()));
        json j{{"command", command_},
               {"config_path", config_path_},
               {"seed", seed_},
               {"inputs", inputs_},
               {"outputs", outputs_},
               {"timestamp", timestamp_utc()}};
        out << j.dump() << '\n';
    }

  private:
    std::string command_;
    std::string config_path_;
    std::uint64_t seed_ = 0;
    json inputs_ = json::array();
    json outputs_ = json::array();
};

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw rat::IoError(rat::concat("cannot open ", path));
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw rat::IoError(rat::concat("cannot open ", path, " for writing"));
    for (const auto& line : lines) out << line << '\n';
}

rat::ModelConfig model_config_from(rat::KvConfig& cfg, const rat::Vocab& vocab) {
    rat::ModelConfig m;
    m.variant = rat::variant_from_name(cfg.get_string("variant", "baseline"));
    m.k = cfg.get_u64("k", m.k);
    m.enc_layers = cfg.get_u64("enc_layers", m.enc_layers);
    m.dec_layers = cfg.get_u64("dec_layers", m.dec_layers);
    m.d_model = cfg.get_u64("d_model", m.d_model);
    m.n_heads = cfg.get_u64("n_heads", m.n_heads);
    m.d_ff = cfg.get_u64("d_ff", m.d_ff);
    m.dropout = cfg.get_double("dropout", m.dropout);
    m.max_len = cfg.get_u64("max_len", m.max_len);
    m.vocab_size = cfg.get_u64("vocab_size", vocab.id_to_token.size());
    return m;
}

rat::TrainConfig train_config_from(rat::KvConfig& cfg) {
    rat::TrainConfig t;
    t.beta1 = cfg.get_double("beta1", t.beta1);
    t.beta2 = cfg.get_double("beta2", t.beta2);
    t.adam_eps = cfg.get_double("adam_eps", t.adam_eps);
    t.warmup_steps = cfg.get_u64("warmup_steps", t.warmup_steps);
    t.batch_src_tokens = cfg.get_u64("batch_src_tokens", t.batch_src_tokens);
    t.batch_tgt_tokens = cfg.get_u64("batch_tgt_tokens", t.batch_tgt_tokens);
    t.label_smoothing = cfg.get_double("label_smoothing", t.label_smoothing);
    t.dropout = cfg.get_double("dropout", t.dropout);
    t.checkpoint_every = cfg.get_u64("checkpoint_every", t.checkpoint_every);
    t.max_steps = cfg.get_u64("max_steps", t.max_steps);
    t.seed = cfg.get_u64("seed", t.seed);
    t.clip_grads = cfg.get_bool("clip_grads", t.clip_grads);
    t.clip_norm = cfg.get_double("clip_norm", t.clip_norm);
    return t;
}

struct DecodeFlags {
    std::size_t beam = 4;
    std::size_t max_output_len = 0;  // 0 derives 2*src_len+10
    double alpha = 0.6;

    rat::DecodeConfig to_config() const { return {beam, max_output_len, alpha}; }
    void add_to(CLI::App* cmd) {
        cmd->add_option("--beam", beam, "beam size (1 = greedy)")->capture_default_str();
        cmd->add_option("--max-output-len", max_output_len,
                        "output length cap (0 derives 2*source_len+10)")
            ->capture_default_str();
        cmd->add_option("--alpha", alpha, "length penalty exponent")->capture_default_str();
    }
};

// ---------------------------------------------------------------------------
// Subcommands. Each returns the process exit code.
// ---------------------------------------------------------------------------

int cmd_tokenizer_train(const std::string& tm_path, const std::vector<std::string>& text_paths,
                        std::size_t vocab_size, const std::string& out,
                        const std::string& run_dir) {
    if (tm_path.empty() && text_paths.empty())
        throw rat::ConfigError("tokenizer-train: provide --tm and/or --text inputs");
    Manifest manifest("tokenizer-train");
    std::vector<std::string> lines;
    if (!tm_path.empty()) {
        for (const auto& entry : rat::load_tm_tsv(tm_path).entries) {
            lines.push_back(entry.source);
            lines.push_back(entry.target);
        }
        manifest.add_input("tm", tm_path);
    }
    for (const auto& path : text_paths) {
        for (auto& line : read_lines(path)) lines.push_back(std::move(line));
        manifest.add_input("text", path);
    }
    const rat::Vocab vocab = rat::train_bpe(lines, vocab_size);
    rat::save_vocab(vocab, out);
    manifest.add_output("vocab", out);
    manifest.write(run_dir);
    std::printf("vocab\t%zu\t%s\n", vocab.id_to_token.size(), out.c_str());
    return 0;
}

int cmd_index_build(const std::string& tm_path, const std::string& out, double k1, double b,
                    const std::string& run_dir) {
    const auto tm = rat::load_tm_tsv(tm_path);
    const auto index = rat::build_index(tm, rat::Bm25Params{k1, b});
    rat::save_index(index, out);
    Manifest manifest("index-build");
    manifest.add_input("tm", tm_path);
    manifest.add_output("index", out);
    manifest.write(run_dir);
    std::printf("index\t%zu docs\t%zu terms\t%s\n", index.doc_lengths.size(),
                index.postings.size(), out.c_str());
    return 0;
}

int cmd_retrieve(const std::string& tm_path, const std::string& index_path,
                 const std::string& query, std::size_t k, std::optional<int> exclude,
                 const std::string& run_dir) {
    const auto tm = rat::load_tm_tsv(tm_path);
    const auto index = index_path.empty() ? rat::build_index(tm) : rat::load_index(index_path);
    const auto matches = rat::retrieve(index, tm, query, k, exclude);
    for (const auto& m : matches.matches)
        std::printf("%d\t%.4f\t%s\n", m.entry_id, m.score, m.target_text.c_str());
    Manifest manifest("retrieve");
    manifest.add_input("tm", tm_path);
    if (!index_path.empty()) manifest.add_input("index", index_path);
    manifest.write(run_dir);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& train_path,
              const std::string& valid_path, const std::string& vocab_path,
              const std::string& out_dir, const std::string& resume_path,
              std::string run_dir) {
    if (run_dir.empty()) run_dir = out_dir;
    auto cfg = rat::KvConfig::parse_file(config_path);
    const auto vocab = rat::load_vocab(vocab_path);
    const auto model_cfg = model_config_from(cfg, vocab);
    const auto train_cfg = train_config_from(cfg);
    cfg.reject_unconsumed();

    const auto corpus = rat::load_tm_tsv(train_path);
    rat::TranslationMemory valid;
    if (!valid_path.empty()) valid = rat::load_tm_tsv(valid_path);

    rat::Checkpoint resume;
    const rat::Checkpoint* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = rat::load_checkpoint(resume_path);
        resume_ptr = &resume;
    }

    const auto result =
        rat::train(model_cfg, train_cfg, corpus, valid, vocab, out_dir, resume_ptr);
    for (const auto& row : result.log)
        std::printf("step\t%zu\tlr\t%.6e\ttrain_loss\t%.6f\tvalid_loss\t%.6f\n", row.step,
                    row.lr, row.train_loss, row.valid_loss);

    Manifest manifest("train");
    manifest.set_config(config_path);
    manifest.set_seed(train_cfg.seed);
    manifest.add_input("train", train_path);
    if (!valid_path.empty()) manifest.add_input("valid", valid_path);
    manifest.add_input("vocab", vocab_path);
    if (!resume_path.empty()) manifest.add_input("resume", resume_path);
    for (const auto& path : result.checkpoint_paths) manifest.add_output("checkpoint", path);
    if (!result.final_checkpoint.empty())
        manifest.add_output("final_checkpoint", result.final_checkpoint);
    const auto loss_path = (fs::path(out_dir) / "loss.tsv").string();
    if (fs::exists(loss_path)) manifest.add_output("loss_log", loss_path);
    manifest.write(run_dir);

    if (result.diverged) {
        std::fprintf(stderr, "error: training diverged: %s\n",
                     result.divergence_reason.c_str());
        return 1;
    }
    std::printf("final_checkpoint\t%s\n", result.final_checkpoint.c_str());
    return 0;
}

struct PipelineFiles {
    rat::Vocab vocab;
    rat::TranslationMemory tm;
    rat::TmIndex index;
    rat::Checkpoint ckpt;
    bool has_tm = false;
};

PipelineFiles load_pipeline(const std::string& checkpoint_path, const std::string& vocab_path,
                            const std::string& tm_path) {
    PipelineFiles f;
    f.vocab = rat::load_vocab(vocab_path);
    f.ckpt = rat::load_checkpoint(checkpoint_path);
    if (!tm_path.empty()) {
        f.tm = rat::load_tm_tsv(tm_path);
        f.index = rat::build_index(f.tm);
        f.has_tm = true;
    }
    return f;
}

int cmd_translate(const std::string& checkpoint_path, const std::string& vocab_path,
                  const std::string& tm_path, const std::string& input_path,
                  const std::string& out_path, const DecodeFlags& flags,
                  const std::string& trace_path, const std::string& run_dir) {
    auto f = load_pipeline(checkpoint_path, vocab_path, tm_path);
    const rat::Pipeline pipe{&f.vocab, f.has_tm ? &f.tm : nullptr,
                             f.has_tm ? &f.index : nullptr, f.ckpt.config, &f.ckpt.params};
    const auto dcfg = flags.to_config();
    const auto sources = read_lines(input_path);

    std::vector<std::string> hyps;
    std::ofstream trace_out;
    if (!trace_path.empty()) {
        trace_out.open(trace_path);
        if (!trace_out)
            throw rat::IoError(rat::concat("cannot open ", trace_path, " for writing"));
        trace_out << "sentence\tmatches\tmemory_len\toutput_len\tencode_ms\ttotal_ms"
                     "\tlog_prob\tscore\ttruncated\n";
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
        rat::TranslateTrace trace;
        hyps.push_back(rat::translate(pipe, sources[i], dcfg, &trace));
        if (trace_out.is_open()) {
            std::string match_ids;
            for (const auto& m : trace.matches) {
                if (!match_ids.empty()) match_ids += ';';
                match_ids += std::to_string(m.entry_id);
            }
            trace_out << i << '\t' << match_ids << '\t' << trace.memory_len << '\t'
                      << trace.output_len << '\t' << trace.encode_ms << '\t' << trace.total_ms
                      << '\t' << trace.log_prob << '\t' << trace.score << '\t'
                      << (trace.truncated ? 1 : 0) << '\n';
        }
    }
    write_lines(hyps, out_path);

    Manifest manifest("translate");
    manifest.set_seed(0);
    manifest.add_input("checkpoint", checkpoint_path);
    manifest.add_input("vocab", vocab_path);
    if (!tm_path.empty()) manifest.add_input("tm", tm_path);
    manifest.add_input("input", input_path);
    manifest.add_output("hyp", out_path);
    if (!trace_path.empty()) manifest.add_output("trace", trace_path);
    manifest.write(run_dir);
    std::printf("translated\t%zu\t%s\n", hyps.size(), out_path.c_str());
    return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path,
                 const std::string& out_path, const std::string& run_dir) {
    const auto hyps = read_lines(hyp_path);
    const auto refs = read_lines(ref_path);
    const auto report = rat::corpus_bleu(hyps, refs);
    std::printf("BLEU = %.2f\n", report.score);
    std::printf("BP = %.4f\tratio = %.4f\thyp_len = %zu\tref_len = %zu\n",
                report.brevity_penalty,
                report.ref_len ? static_cast<double>(report.hyp_len) / report.ref_len : 0.0,
                report.hyp_len, report.ref_len);
    std::printf("precisions = %.1f/%.1f/%.1f/%.1f\n", report.precisions[0],
                report.precisions[1], report.precisions[2], report.precisions[3]);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw rat::IoError(rat::concat("cannot open ", out_path, " for writing"));
        out << "bleu\tbp\tp1\tp2\tp3\tp4\thyp_len\tref_len\n";
        out << std::fixed << std::setprecision(4) << report.score << '\t'
            << report.brevity_penalty << '\t' << report.precisions[0] << '\t'
            << report.precisions[1] << '\t' << report.precisions[2] << '\t'
            << report.precisions[3] << '\t' << report.hyp_len << '\t' << report.ref_len << '\n';
    }
    Manifest manifest("evaluate");
    manifest.add_input("hyp", hyp_path);
    manifest.add_input("ref", ref_path);
    if (!out_path.empty()) manifest.add_output("report", out_path);
    manifest.write(run_dir);
    return 0;
}

int cmd_significance(const std::string& hyp_a, const std::string& hyp_b,
                     const std::string& ref_path, std::size_t n, double threshold,
                     std::uint64_t seed, const std::string& out_path,
                     const std::string& run_dir) {
    const auto a = read_lines(hyp_a);
    const auto b = read_lines(hyp_b);
    const auto refs = read_lines(ref_path);
    const auto result = rat::paired_bootstrap(a, b, refs, n, threshold, seed);
    std::printf("p_value = %.4f\tsignificant = %s\n", result.p_value,
                result.significant ? "true" : "false");
    std::printf("wins_a = %zu\twins_b = %zu\tties = %zu\tn = %zu\n", result.wins_a,
                result.wins_b, result.ties, result.n_resamples);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw rat::IoError(rat::concat("cannot open ", out_path, " for writing"));
        out << "p_value\tsignificant\twins_a\twins_b\tties\tn_resamples\n";
        out << std::fixed << std::setprecision(6) << result.p_value << '\t'
            << (result.significant ? 1 : 0) << '\t' << result.wins_a << '\t' << result.wins_b
            << '\t' << result.ties << '\t' << result.n_resamples << '\n';
    }
    Manifest manifest("significance");
    manifest.set_seed(seed);
    manifest.add_input("hyp_a", hyp_a);
    manifest.add_input("hyp_b", hyp_b);
    manifest.add_input("ref", ref_path);
    if (!out_path.empty()) manifest.add_output("report", out_path);
    manifest.write(run_dir);
    return 0;
}

int cmd_bench(const std::string& checkpoint_path, const std::string& vocab_path,
              const std::string& tm_path, const std::string& input_path, std::size_t warmup,
              const DecodeFlags& flags, const std::string& out_path,
              const std::string& run_dir) {
    auto f = load_pipeline(checkpoint_path, vocab_path, tm_path);
    const rat::Pipeline pipe{&f.vocab, f.has_tm ? &f.tm : nullptr,
                             f.has_tm ? &f.index : nullptr, f.ckpt.config, &f.ckpt.params};
    const auto sentences = read_lines(input_path);
    const auto report = rat::bench_translate(pipe, sentences, flags.to_config(), warmup);
    std::fputs(rat::format_latency_summary(report).c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw rat::IoError(rat::concat("cannot open ", out_path, " for writing"));
        rat::write_latency_tsv(report, out);
    }
    Manifest manifest("bench");
    manifest.add_input("checkpoint", checkpoint_path);
    manifest.add_input("vocab", vocab_path);
    if (!tm_path.empty()) manifest.add_input("tm", tm_path);
    manifest.add_input("input", input_path);
    if (!out_path.empty()) manifest.add_output("report", out_path);
    manifest.write(run_dir);
    return 0;
}

int cmd_grad_check(std::uint64_t seed, const std::string& run_dir) {
    auto cases = rat::grad_check_ops(seed);
    cases.push_back(rat::grad_check_transformer());
    bool all_passed = true;
    for (const auto& c : cases) {
        std::printf("%s\t%.3e\t%.0e\t%s\n", c.name.c_str(), c.max_rel_err, c.tolerance,
                    c.passed ? "ok" : "FAIL");
        all_passed = all_passed && c.passed;
    }
    Manifest manifest("grad-check");
    manifest.set_seed(seed);
    manifest.write(run_dir);
    if (!all_passed) {
        std::fprintf(stderr, "error: gradient check failed\n");
        return 1;
    }
    return 0;
}

int cmd_make_synthetic(const std::string& config_path, const std::string& out_dir,
                       std::string run_dir) {
    if (run_dir.empty()) run_dir = out_dir;
    rat::SyntheticConfig scfg;
    if (!config_path.empty()) {
        auto cfg = rat::KvConfig::parse_file(config_path);
        scfg.source_words = cfg.get_u64("source_words", scfg.source_words);
        scfg.dialects = cfg.get_u64("dialects", scfg.dialects);
        scfg.len_min = cfg.get_u64("len_min", scfg.len_min);
        scfg.len_max = cfg.get_u64("len_max", scfg.len_max);
        scfg.train_pairs = cfg.get_u64("train_pairs", scfg.train_pairs);
        scfg.test_sentences = cfg.get_u64("test_sentences", scfg.test_sentences);
        scfg.distractors = cfg.get_u64("distractors", scfg.distractors);
        scfg.plant_rate = cfg.get_double("plant_rate", scfg.plant_rate);
        scfg.seed = cfg.get_u64("seed", scfg.seed);
        cfg.reject_unconsumed();
    }
    const auto data = rat::make_synthetic(scfg);

    fs::create_directories(out_dir);
    const auto train_path = (fs::path(out_dir) / "train.tsv").string();
    const auto test_tm_path = (fs::path(out_dir) / "test_tm.tsv").string();
    const auto src_path = (fs::path(out_dir) / "test.src").string();
    const auto ref_path = (fs::path(out_dir) / "test.ref").string();
    const auto planted_path = (fs::path(out_dir) / "planted.tsv").string();
    rat::save_tm_tsv(data.train, train_path);
    rat::save_tm_tsv(data.test_tm, test_tm_path);
    write_lines(data.test_sources, src_path);
    write_lines(data.test_references, ref_path);
    {
        std::ofstream out(planted_path);
        out << "test_sentence\tplanted_entry\tdistractor_entries\n";
        for (std::size_t j = 0; j < data.planted_entry_id.size(); ++j) {
            out << j << '\t' << data.planted_entry_id[j] << '\t';
            const auto& ids = data.distractor_entry_ids[j];
            for (std::size_t m = 0; m < ids.size(); ++m)
                out << (m ? ";" : "") << ids[m];
            out << '\n';
        }
    }

    Manifest manifest("make-synthetic");
    manifest.set_config(config_path);
    manifest.set_seed(scfg.seed);
    manifest.add_output("train", train_path);
    manifest.add_output("test_tm", test_tm_path);
    manifest.add_output("test_src", src_path);
    manifest.add_output("test_ref", ref_path);
    manifest.add_output("planted", planted_path);
    manifest.write(run_dir);
    std::printf("synthetic\ttrain=%zu\ttest=%zu\ttm=%zu\t%s\n", data.train.entries.size(),
                data.test_sources.size(), data.test_tm.entries.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval-augmented NMT workbench"};
    app.require_subcommand(1);
    std::function<int()> action;

    // tokenizer-train
    {
        auto* cmd = app.add_subcommand("tokenizer-train", "learn a BPE vocabulary");
        auto tm = std::make_shared<std::string>();
        auto texts = std::make_shared<std::vector<std::string>>();
        auto vocab_size = std::make_shared<std::size_t>(512);
        auto out = std::make_shared<std::string>();
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--tm", *tm, "TM TSV whose source and target sides feed training");
        cmd->add_option("--text", *texts, "plain text file, one sentence per line");
        cmd->add_option("--vocab-size", *vocab_size, "target vocabulary size")
            ->capture_default_str();
        cmd->add_option("--out", *out, "output vocabulary file")->required();
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] {
                return cmd_tokenizer_train(*tm, *texts, *vocab_size, *out, *run_dir);
            };
        });
    }
    // index-build
    {
        auto* cmd = app.add_subcommand("index-build", "build and save a BM25 index");
        auto tm = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto k1 = std::make_shared<double>(rat::Bm25Params{}.k1);
        auto b = std::make_shared<double>(rat::Bm25Params{}.b);
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--tm", *tm, "TM TSV to index")->required();
        cmd->add_option("--out", *out, "output index file")->required();
        cmd->add_option("--k1", *k1, "BM25 k1")->capture_default_str();
        cmd->add_option("--b", *b, "BM25 b")->capture_default_str();
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] { return cmd_index_build(*tm, *out, *k1, *b, *run_dir); };
        });
    }
    // retrieve
    {
        auto* cmd = app.add_subcommand("retrieve", "query fuzzy matches from a TM");
        auto tm = std::make_shared<std::string>();
        auto index = std::make_shared<std::string>();
        auto query = std::make_shared<std::string>();
        auto k = std::make_shared<std::size_t>(3);
        auto exclude = std::make_shared<int>(-1);
        auto has_exclude = std::make_shared<bool>(false);
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--tm", *tm, "TM TSV")->required();
        cmd->add_option("--index", *index, "prebuilt index file (default: build in memory)");
        cmd->add_option("--query", *query, "query sentence")->required();
        cmd->add_option("--k", *k, "matches to return")->capture_default_str();
        cmd->add_option("--exclude", *exclude, "TM entry id to exclude")
            ->each([has_exclude](const std::string&) { *has_exclude = true; });
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] {
                return cmd_retrieve(*tm, *index, *query, *k,
                                    *has_exclude ? std::optional<int>(*exclude) : std::nullopt,
                                    *run_dir);
            };
        });
    }
    // train
    {
        auto* cmd = app.add_subcommand("train", "train a translation model");
        auto config = std::make_shared<std::string>();
        auto train_tm = std::make_shared<std::string>();
        auto valid_tm = std::make_shared<std::string>();
        auto vocab = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto resume = std::make_shared<std::string>();
        auto run_dir = std::make_shared<std::string>();
        cmd->add_option("--config", *config, "key=value model/training config")->required();
        cmd->add_option("--train", *train_tm, "training corpus TM TSV")->required();
        cmd->add_option("--valid", *valid_tm, "validation corpus TM TSV");
        cmd->add_option("--vocab", *vocab, "vocabulary file")->required();
        cmd->add_option("--out-dir", *out_dir, "checkpoint/log directory")->required();
        cmd->add_option("--resume", *resume, "checkpoint to resume from");
        cmd->add_option("--run-dir", *run_dir, "manifest directory (default: --out-dir)");
        cmd->callback([=, &action] {
            action = [=] {
                return cmd_train(*config, *train_tm, *valid_tm, *vocab, *out_dir, *resume,
                                 *run_dir);
            };
        });
    }
    // translate
    {
        auto* cmd = app.add_subcommand("translate", "translate sentences from a file");
        auto ckpt = std::make_shared<std::string>();
        auto vocab = std::make_shared<std::string>();
        auto tm = std::make_shared<std::string>();
        auto input = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto trace = std::make_shared<std::string>();
        auto flags = std::make_shared<DecodeFlags>();
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--checkpoint", *ckpt, "model checkpoint")->required();
        cmd->add_option("--vocab", *vocab, "vocabulary file")->required();
        cmd->add_option("--tm", *tm, "TM TSV for fuzzy matches (optional)");
        cmd->add_option("--input", *input, "source sentences, one per line")->required();
        cmd->add_option("--out", *out, "output hypothesis file")->required();
        cmd->add_option("--trace", *trace, "per-sentence trace TSV (optional)");
        flags->add_to(cmd);
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] {
                return cmd_translate(*ckpt, *vocab, *tm, *input, *out, *flags, *trace,
                                     *run_dir);
            };
        });
    }
    // evaluate
    {
        auto* cmd = app.add_subcommand("evaluate", "corpus BLEU of hypotheses vs references");
        auto hyp = std::make_shared<std::string>();
        auto ref = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--hyp", *hyp, "hypothesis file")->required();
        cmd->add_option("--ref", *ref, "reference file")->required();
        cmd->add_option("--out", *out, "report TSV (optional)");
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] { return cmd_evaluate(*hyp, *ref, *out, *run_dir); };
        });
    }
    // significance
    {
        auto* cmd =
            app.add_subcommand("significance", "paired bootstrap between two systems");
        auto hyp_a = std::make_shared<std::string>();
        auto hyp_b = std::make_shared<std::string>();
        auto ref = std::make_shared<std::string>();
        auto n = std::make_shared<std::size_t>(1000);
        auto threshold = std::make_shared<double>(0.05);
        auto seed = std::make_shared<std::uint64_t>(1);
        auto out = std::make_shared<std::string>();
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--hyp-a", *hyp_a, "system A hypotheses")->required();
        cmd->add_option("--hyp-b", *hyp_b, "system B hypotheses")->required();
        cmd->add_option("--ref", *ref, "reference file")->required();
        cmd->add_option("--n", *n, "bootstrap resamples")->capture_default_str();
        cmd->add_option("--threshold", *threshold, "significance threshold")
            ->capture_default_str();
        cmd->add_option("--seed", *seed, "resampling seed")->capture_default_str();
        cmd->add_option("--out", *out, "report TSV (optional)");
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] {
                return cmd_significance(*hyp_a, *hyp_b, *ref, *n, *threshold, *seed, *out,
                                        *run_dir);
            };
        });
    }
    // bench
    {
        auto* cmd = app.add_subcommand("bench", "batch-1 latency measurement");
        auto ckpt = std::make_shared<std::string>();
        auto vocab = std::make_shared<std::string>();
        auto tm = std::make_shared<std::string>();
        auto input = std::make_shared<std::string>();
        auto warmup = std::make_shared<std::size_t>(10);
        auto out = std::make_shared<std::string>();
        auto flags = std::make_shared<DecodeFlags>();
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--checkpoint", *ckpt, "model checkpoint")->required();
        cmd->add_option("--vocab", *vocab, "vocabulary file")->required();
        cmd->add_option("--tm", *tm, "TM TSV for fuzzy matches (optional)");
        cmd->add_option("--input", *input, "sentences to time, one per line")->required();
        cmd->add_option("--warmup", *warmup, "leading runs to discard")->capture_default_str();
        cmd->add_option("--out", *out, "latency report TSV (optional)");
        flags->add_to(cmd);
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] {
                return cmd_bench(*ckpt, *vocab, *tm, *input, *warmup, *flags, *out, *run_dir);
            };
        });
    }
    // grad-check
    {
        auto* cmd = app.add_subcommand("grad-check", "finite-difference gradient suite");
        auto seed = std::make_shared<std::uint64_t>(2024);
        auto run_dir = std::make_shared<std::string>(".");
        cmd->add_option("--seed", *seed, "random tensor seed")->capture_default_str();
        cmd->add_option("--run-dir", *run_dir, "manifest directory")->capture_default_str();
        cmd->callback([=, &action] {
            action = [=] { return cmd_grad_check(*seed, *run_dir); };
        });
    }
    // make-synthetic
    {
        auto* cmd =
            app.add_subcommand("make-synthetic", "generate a planted-match corpus");
        auto config = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto run_dir = std::make_shared<std::string>();
        cmd->add_option("--config", *config, "key=value generator config (default values "
                                             "otherwise)");
        cmd->add_option("--out-dir", *out_dir, "output directory")->required();
        cmd->add_option("--run-dir", *run_dir, "manifest directory (default: --out-dir)");
        cmd->callback([=, &action] {
            action = [=] { return cmd_make_synthetic(*config, *out_dir, *run_dir); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n' << app.help();
        return 2;
    }

    try {
        return action();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
