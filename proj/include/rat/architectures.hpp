#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "rat/error.hpp"
#include "rat/tensor.hpp"
#include "rat/tokenizer.hpp"
#include "rat/transformer.hpp"

namespace rat {

enum class EncoderChoice { Main, MatchEnc };

/// One encoder pass: the tokens to run, which encoder runs them, the span of
/// rows that feeds the decoder memory (whole pass when absent), and the
/// provenance of the contributed block in block-relative coordinates.
struct EncoderPass {
    std::vector<int> ids;
    std::vector<std::uint8_t> pad_valid;
    EncoderChoice encoder = EncoderChoice::Main;
    std::optional<std::pair<std::size_t, std::size_t>> extract_span;
    std::vector<Memory::Span> block_spans;
};

struct EncoderPlan {
    Variant variant = Variant::Baseline;
    std::vector<EncoderPass> passes;

    std::size_t memory_len() const {
        std::size_t total = 0;
        for (const auto& p : passes)
            total += p.extract_span ? p.extract_span->second - p.extract_span->first : p.ids.size();
        return total;
    }
};

namespace detail {

inline EncoderPass make_pass(std::vector<int> ids, EncoderChoice enc,
                             std::optional<std::pair<std::size_t, std::size_t>> span,
                             std::vector<Memory::Span> spans) {
    EncoderPass p;
    p.pad_valid.assign(ids.size(), 1);
    p.ids = std::move(ids);
    p.encoder = enc;
    p.extract_span = span;
    p.block_spans = std::move(spans);
    return p;
}

}  // namespace detail

/// Builds the per-variant encoder schedule.
///   baseline  one pass [src]
///   rat-cat   one pass [src SEP fm1 SEP fm2 ...], memory is the whole pass
///   rat-sep   [src] on the main encoder, each [fm_i] on the match encoder
///   rat-si    [src] plus one joint [src SEP fm_i] per match, extracting only
///             the fm_i rows; source states enter memory exactly once
/// Matches that overflow max_len are cut right-to-left: rat-cat trims tokens
/// off the last match first and drops a match that empties (with its SEP);
/// rat-sep and rat-si cap each match independently by the room their own
/// pass has. A source that alone exceeds max_len is an error.
inline EncoderPlan assemble_plan(Variant variant, const std::vector<int>& src_ids,
                                 const std::vector<std::vector<int>>& fuzzy_targets,
                                 std::size_t max_len) {
    if (src_ids.empty()) throw ConfigError("assemble_plan: empty source");
    for (const auto& fm : fuzzy_targets)
        if (fm.empty()) throw ConfigError("assemble_plan: empty fuzzy match");
    const std::size_t s = src_ids.size();
    if (s > max_len)
        throw ConfigError(concat("assemble_plan: source length ", s, " exceeds max_len ", max_len));

    EncoderPlan plan;
    plan.variant = variant;
    const Memory::Span src_span{Memory::Span::Kind::Source, 0, 0, s};

    std::vector<std::vector<int>> matches = fuzzy_targets;
    if (variant == Variant::Baseline) matches.clear();

    switch (variant) {
        case Variant::Baseline:
        case Variant::RatCat: {
            if (matches.empty()) {
                plan.variant = variant;
                plan.passes.push_back(
                    detail::make_pass(src_ids, EncoderChoice::Main, std::nullopt, {src_span}));
                return plan;
            }
            auto assembled_len = [&]() {
                std::size_t total = s;
                for (const auto& fm : matches) total += 1 + fm.size();
                return total;
            };
            while (!matches.empty() && assembled_len() > max_len) {
                matches.back().pop_back();
                if (matches.back().empty()) matches.pop_back();
            }
            std::vector<int> ids = src_ids;
            std::vector<Memory::Span> spans{src_span};
            for (std::size_t i = 0; i < matches.size(); ++i) {
                const std::size_t begin = ids.size();
                ids.push_back(Vocab::kSep);
                ids.insert(ids.end(), matches[i].begin(), matches[i].end());
                spans.push_back({Memory::Span::Kind::Match, i, begin, ids.size()});
            }
            plan.passes.push_back(
                detail::make_pass(std::move(ids), EncoderChoice::Main, std::nullopt, std::move(spans)));
            return plan;
        }
        case Variant::RatSep: {
            plan.passes.push_back(
                detail::make_pass(src_ids, EncoderChoice::Main, std::nullopt, {src_span}));
            for (std::size_t i = 0; i < matches.size(); ++i) {
                auto fm = matches[i];
                if (fm.size() > max_len) fm.resize(max_len);
                const std::size_t len = fm.size();
                plan.passes.push_back(detail::make_pass(
                    std::move(fm), EncoderChoice::MatchEnc, std::nullopt,
                    {{Memory::Span::Kind::Match, i, 0, len}}));
            }
            return plan;
        }
        case Variant::RatSi: {
            plan.passes.push_back(
                detail::make_pass(src_ids, EncoderChoice::Main, std::nullopt, {src_span}));
            if (s + 1 >= max_len) return plan;  // no room for any joint pass
            const std::size_t room = max_len - s - 1;
            for (std::size_t i = 0; i < matches.size(); ++i) {
                auto fm = matches[i];
                if (fm.size() > room) fm.resize(room);
                std::vector<int> ids = src_ids;
                ids.push_back(Vocab::kSep);
                ids.insert(ids.end(), fm.begin(), fm.end());
                plan.passes.push_back(detail::make_pass(
                    std::move(ids), EncoderChoice::Main,
                    std::pair<std::size_t, std::size_t>{s + 1, s + 1 + fm.size()},
                    {{Memory::Span::Kind::Match, i, 0, fm.size()}}));
            }
            return plan;
        }
    }
    throw Error("assemble_plan: unreachable");
}

enum class PassExecution { Sequential, Packed };

/// Sub-timings of memory construction: running the encoder passes vs
/// slicing extract spans and concatenating blocks. A single-pass plan with no
/// extract span records exactly zero extraction time.
struct EncodeTiming {
    double pass_ms = 0.0;
    double extract_ms = 0.0;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

inline const EncoderParams& encoder_for(const TransformerParams& params, EncoderChoice choice) {
    if (choice == EncoderChoice::Main) return params.encoder;
    if (!params.match_encoder)
        throw ConfigError("encode_memory: plan needs the match encoder but none exists");
    return *params.match_encoder;
}

inline void check_span(const EncoderPass& pass) {
    if (!pass.extract_span) return;
    const auto [b, e] = *pass.extract_span;
    if (b >= e || e > pass.ids.size())
        throw ShapeError(concat("encode_memory: extract span [", b, ", ", e,
                                ") outside pass of length ", pass.ids.size()));
}

inline void append_block(Memory& memory, const EncoderPass& pass, Tensor block_states,
                         std::size_t block_begin_in_pass) {
    const std::size_t base = memory.key_mask.size();
    const std::size_t len = block_states.rows();
    for (std::size_t i = 0; i < len; ++i)
        memory.key_mask.push_back(pass.pad_valid[block_begin_in_pass + i]);
    for (Memory::Span span : pass.block_spans) {
        span.begin += base;
        span.end += base;
        memory.provenance.push_back(span);
    }
}

}  // namespace detail

/// Runs the plan and assembles decoder memory in pass order. Sequential
/// execution encodes pass-by-pass. Packed execution embeds every pass of the
/// same encoder (positions restarting per pass), concatenates them, and runs
/// one stack under a block-diagonal self-attention mask; the two paths agree
/// bit for bit at inference because masked columns underflow to exact zeros.
inline Memory encode_memory(const ModelConfig& cfg, const TransformerParams& params,
                            const EncoderPlan& plan, const FwdCtx& ctx,
                            PassExecution exec = PassExecution::Sequential,
                            EncodeTiming* timing = nullptr) {
    if (plan.passes.empty()) throw ConfigError("encode_memory: empty plan");
    for (const auto& pass : plan.passes) detail::check_span(pass);

    const auto pass_start = std::chrono::steady_clock::now();
    std::vector<Tensor> pass_states(plan.passes.size());
    if (exec == PassExecution::Sequential) {
        for (std::size_t i = 0; i < plan.passes.size(); ++i) {
            const auto& pass = plan.passes[i];
            pass_states[i] = encode(cfg, detail::encoder_for(params, pass.encoder),
                                    params.embedding, pass.ids, pass.pad_valid, ctx);
        }
    } else {
        for (EncoderChoice choice : {EncoderChoice::Main, EncoderChoice::MatchEnc}) {
            std::vector<std::size_t> group;
            for (std::size_t i = 0; i < plan.passes.size(); ++i)
                if (plan.passes[i].encoder == choice) group.push_back(i);
            if (group.empty()) continue;
            std::vector<Tensor> embedded;
            std::vector<std::size_t> lengths;
            std::vector<std::uint8_t> validity;
            for (auto i : group) {
                embedded.push_back(embed_sequence(cfg, params.embedding, plan.passes[i].ids, ctx));
                lengths.push_back(plan.passes[i].ids.size());
                validity.insert(validity.end(), plan.passes[i].pad_valid.begin(),
                                plan.passes[i].pad_valid.end());
            }
            Tensor x = embedded.size() == 1 ? embedded[0] : concat_rows(embedded, ctx.tape);
            AttnMask mask = AttnMask::block_diagonal(lengths);
            mask.intersect(AttnMask::from_key_validity(x.rows(), validity));
            Tensor packed =
                encoder_stack(cfg, detail::encoder_for(params, choice), x, mask, ctx);
            std::size_t base = 0;
            for (std::size_t gi = 0; gi < group.size(); ++gi) {
                pass_states[group[gi]] =
                    group.size() == 1 ? packed
                                      : slice_rows(packed, base, base + lengths[gi], ctx.tape);
                base += lengths[gi];
            }
        }
    }
    if (timing) timing->pass_ms += detail::ms_since(pass_start);

    Memory memory;
    std::vector<Tensor> blocks;
    for (std::size_t i = 0; i < plan.passes.size(); ++i) {
        const auto& pass = plan.passes[i];
        Tensor block = pass_states[i];
        std::size_t begin_in_pass = 0;
        if (pass.extract_span) {
            begin_in_pass = pass.extract_span->first;
            const auto t0 = std::chrono::steady_clock::now();
            block = slice_rows(block, pass.extract_span->first, pass.extract_span->second, ctx.tape);
            if (timing) timing->extract_ms += detail::ms_since(t0);
        }
        detail::append_block(memory, pass, block, begin_in_pass);
        blocks.push_back(block);
    }
    if (blocks.size() == 1) {
        memory.states = blocks[0];
    } else {
        const auto t0 = std::chrono::steady_clock::now();
        memory.states = concat_rows(blocks, ctx.tape);
        if (timing) timing->extract_ms += detail::ms_since(t0);
    }
    memory.validate();
    return memory;
}

}  // namespace rat
