#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rat/architectures.hpp"
#include "rat/error.hpp"
#include "rat/retriever.hpp"
#include "rat/tokenizer.hpp"
#include "rat/transformer.hpp"

namespace rat {

struct DecodeConfig {
    std::size_t beam_size = 4;
    std::size_t max_output_len = 0;  // 0: translate() derives 2 * source_len + 10
    double length_penalty_alpha = 0.6;

    void validate() const {
        if (beam_size == 0) throw ConfigError("decode config: beam_size must be >= 1");
        if (length_penalty_alpha < 0.0)
            throw ConfigError("decode config: length_penalty_alpha must be >= 0");
    }
};

struct DecodeResult {
    std::vector<int> ids;     // generated tokens, BOS and EOS excluded
    double log_prob = 0.0;    // sum of chosen-token log probs (EOS step included when terminated)
    double score = 0.0;       // log_prob / ((5 + len) / 6)^alpha with len = ids.size()
    bool truncated = false;   // hit max_output_len without an EOS anywhere in the beam
};

///// Next-token scorer: unnormalized logits over the vocabulary given the
/// BOS-prefixed partial output.
using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;

inline double length_penalty(std::size_t len, double alpha) {
    return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace detail {

inline std::vector<double> log_softmax_row(const std::vector<double>& logits) {
    if (logits.empty()) throw ShapeError("decode: step function returned an empty logits row");
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double x : logits) z += std::exp(x - m);
    const double lse = m + std::log(z);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

/// PAD, BOS, and SEP are structural and never valid output tokens.
inline void mask_structural(std::vector<double>& logp) {
    for (int id : {Vocab::kPad, Vocab::kBos, Vocab::kSep})
        if (static_cast<std::size_t>(id) < logp.size())
            logp[static_cast<std::size_t>(id)] = -std::numeric_limits<double>::infinity();
}

struct Hyp {
    std::vector<int> ids;  // includes the leading BOS
    double log_prob = 0.0;
};

}  // namespace detail

/// Beam search over a step function. Each step keeps the top 2*beam_size
/// continuations; EOS completes a hypothesis only from the top beam_size
/// ranks, and search stops once beam_size hypotheses have completed.
/// Completed hypotheses are ranked by log_prob / ((5 + len) / 6)^alpha and
/// always beat truncated ones. beam_size 1 is exactly greedy, and for wider
/// beams the greedy rollout stays in the candidate pool, so widening the
/// beam never returns a worse-scoring hypothesis.
inline DecodeResult beam_decode(const StepFn& step, const DecodeConfig& cfg) {
    cfg.validate();
    if (cfg.max_output_len == 0) throw ConfigError("beam_decode: max_output_len must be >= 1");

    std::vector<detail::Hyp> live{{{Vocab::kBos}, 0.0}};
    std::vector<DecodeResult> finished;
    const auto finish = [&](const detail::Hyp& h, double log_prob_with_eos) {
        DecodeResult r;
        r.ids.assign(h.ids.begin() + 1, h.ids.end());
        r.log_prob = log_prob_with_eos;
        r.score = log_prob_with_eos / length_penalty(r.ids.size(), cfg.length_penalty_alpha);
        finished.push_back(std::move(r));
    };

    for (std::size_t t = 0; t < cfg.max_output_len && !live.empty(); ++t) {
        struct Cand {
            std::size_t beam;
            int token;
            double log_prob;
        };
        std::vector<Cand> cands;
        for (std::size_t b = 0; b < live.size(); ++b) {
            std::vector<double> logp = detail::log_softmax_row(step(live[b].ids));
            detail::mask_structural(logp);
            for (std::size_t v = 0; v < logp.size(); ++v)
                if (std::isfinite(logp[v]))
                    cands.push_back({b, static_cast<int>(v), live[b].log_prob + logp[v]});
        }
        if (cands.empty()) throw ConfigError("beam_decode: every continuation is masked");
        const std::size_t keep = std::min(cands.size(), 2 * cfg.beam_size);
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                          cands.end(), [](const Cand& a, const Cand& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.beam != b.beam) return a.beam < b.beam;
                              return a.token < b.token;
                          });
        std::vector<detail::Hyp> next;
        for (std::size_t i = 0; i < keep; ++i) {
            const Cand& c = cands[i];
            if (c.token == Vocab::kEos) {
                // EOS only completes a hypothesis from within the top beam_size
                // ranks; with beam 1 that is exactly the greedy stopping rule.
                if (i < cfg.beam_size) finish(live[c.beam], c.log_prob);
            } else if (next.size() < cfg.beam_size) {
                detail::Hyp h = live[c.beam];
                h.ids.push_back(c.token);
                h.log_prob = c.log_prob;
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
        if (finished.size() >= cfg.beam_size) break;
    }

    if (cfg.beam_size > 1) {
        DecodeConfig greedy_cfg = cfg;
        greedy_cfg.beam_size = 1;
        DecodeResult greedy = beam_decode(step, greedy_cfg);
        if (!greedy.truncated) finished.push_back(std::move(greedy));
    }

    const DecodeResult* best = nullptr;
    for (const auto& r : finished)
        if (!best || r.score > best->score) best = &r;
    if (best) return *best;

    const detail::Hyp* top = nullptr;
    for (const auto& h : live)
        if (!top || h.log_prob > top->log_prob) top = &h;
    if (!top) throw ConfigError("beam_decode: no hypothesis survived");
    DecodeResult r;
    r.ids.assign(top->ids.begin() + 1, top->ids.end());
    r.log_prob = top->log_prob;
    r.score = top->log_prob / length_penalty(r.ids.size(), cfg.length_penalty_alpha);
    r.truncated = true;
    return r;
}

inline DecodeResult greedy_decode(const StepFn& step, std::size_t max_output_len) {
    DecodeConfig cfg;
    cfg.beam_size = 1;
    cfg.max_output_len = max_output_len;
    cfg.length_penalty_alpha = 0.0;
    return beam_decode(step, cfg);
}

// ---------------------------------------------------------------------------
/// End-to-end pipeline: retrieve, plan, encode, decode, detokenize.
// ---------------------------------------------------------------------------

struct Pipeline {
    const Vocab* vocab = nullptr;
    const TranslationMemory* tm = nullptr;  // optional; absent or empty means no matches
    const TmIndex* index = nullptr;
    ModelConfig cfg;
    const TransformerParams* params = nullptr;
};

struct TranslateTrace {
    std::vector<FuzzyMatch> matches;
    std::vector<std::size_t> pass_lengths;
    std::size_t memory_len = 0;
    std::size_t output_len = 0;
    double plan_ms = 0.0;
    double pass_ms = 0.0;
    double extract_ms = 0.0;
    double encode_ms = 0.0;  // window spanning plan assembly through memory completion
    double total_ms = 0.0;
    double log_prob = 0.0;
    double score = 0.0;
    bool truncated = false;
};

/// Translates one sentence. An empty (no-token) source yields an empty
/// output. With k = 0, a missing TM, or an empty TM every variant degenerates
/// to the plain source-only plan.
inline std::string translate(const Pipeline& pipe, const std::string& source_text,
                             const DecodeConfig& dcfg, TranslateTrace* trace = nullptr) {
    if (!pipe.vocab || !pipe.params)
        throw ConfigError("translate: pipeline is missing its vocab or parameters");
    dcfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    TranslateTrace local;
    TranslateTrace& tr = trace ? *trace : local;
    tr = {};
    const ModelConfig& cfg = pipe.cfg;

    std::vector<int> src = encode(*pipe.vocab, source_text);
    if (src.empty()) {
        tr.total_ms = detail::ms_since(t_start);
        return "";
    }
    if (src.size() + 1 > cfg.max_len) src.resize(cfg.max_len - 1);
    const std::size_t src_len = src.size();
    src.push_back(Vocab::kEos);

    std::vector<std::vector<int>> fuzzy;
    if (cfg.k > 0 && pipe.tm && pipe.index && !pipe.tm->entries.empty()) {
        FuzzyMatchSet matches = retrieve(*pipe.index, *pipe.tm, source_text, cfg.k);
        for (const auto& match : matches.matches)
            fuzzy.push_back(encode_with_eos(*pipe.vocab, match.target_text, cfg.max_len));
        tr.matches = matches.matches;
    }

    const auto t_encode = std::chrono::steady_clock::now();
    EncoderPlan plan = assemble_plan(cfg.variant, src, fuzzy, cfg.max_len);
    tr.plan_ms = detail::ms_since(t_encode);
    for (const auto& pass : plan.passes) tr.pass_lengths.push_back(pass.ids.size());

    EncodeTiming timing;
    FwdCtx ctx;
    Memory memory =
        encode_memory(cfg, *pipe.params, plan, ctx, PassExecution::Sequential, &timing);
    tr.pass_ms = timing.pass_ms;
    tr.extract_ms = timing.extract_ms;
    tr.encode_ms = detail::ms_since(t_encode);
    tr.memory_len = memory.states.rows();

    DecodeConfig effective = dcfg;
    if (effective.max_output_len == 0) effective.max_output_len = 2 * src_len + 10;
    // The decoder prefix is BOS plus the generated tokens and must fit max_len.
    effective.max_output_len = std::min(effective.max_output_len, cfg.max_len - 1);

    const StepFn step = [&](const std::vector<int>& prefix) {
        return decode_step(cfg, *pipe.params, memory, prefix);
    };
    DecodeResult result = beam_decode(step, effective);
    tr.output_len = result.ids.size();
    tr.log_prob = result.log_prob;
    tr.score = result.score;
    tr.truncated = result.truncated;

    std::string text = decode(*pipe.vocab, result.ids);
    tr.total_ms = detail::ms_since(t_start);
    return text;
}

}  // namespace rat
