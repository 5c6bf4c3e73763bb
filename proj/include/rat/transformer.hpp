#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rat/error.hpp"
#include "rat/rng.hpp"
#include "rat/tensor.hpp"
#include "rat/tokenizer.hpp"

namespace rat {

enum class Variant { Baseline, RatCat, RatSep, RatSi };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::RatCat: return "rat-cat";
        case Variant::RatSep: return "rat-sep";
        case Variant::RatSi: return "rat-si";
    }
    throw Error("variant_name: unreachable");
}

inline Variant variant_from_name(const std::string& name) {
    if (name == "baseline") return Variant::Baseline;
    if (name == "rat-cat") return Variant::RatCat;
    if (name == "rat-sep") return Variant::RatSep;
    if (name == "rat-si") return Variant::RatSi;
    throw ConfigError(concat("unknown variant '", name,
                             "' (expected baseline|rat-cat|rat-sep|rat-si)"));
}

struct ModelConfig {
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    double dropout = 0.1;
    std::size_t max_len = 128;
    std::size_t vocab_size = 0;
    Variant variant = Variant::Baseline;
    std::size_t k = 0;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError(concat("config: d_model ", d_model, " not divisible by n_heads ",
                                     n_heads));
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError(concat("config: dropout ", dropout, " outside [0, 1)"));
        if (max_len < 2) throw ConfigError(concat("config: max_len ", max_len, " < 2"));
        if (vocab_size <= Vocab::kNumSpecials)
            throw ConfigError(concat("config: vocab_size ", vocab_size, " too small"));
        if (enc_layers == 0 || dec_layers == 0)
            throw ConfigError("config: need at least one encoder and one decoder layer");
        if (d_ff == 0) throw ConfigError("config: d_ff must be positive");
    }
};

/// Encoder output handed to the decoder: states plus key validity and the
/// span bookkeeping that says which rows came from the source vs. which match.
struct Memory {
    struct Span {
        enum class Kind { Source, Match };
        Kind kind = Kind::Source;
        std::size_t match_index = 0;  // meaningful for Kind::Match
        std::size_t begin = 0;
        std::size_t end = 0;  // half-open
    };

    Tensor states;  // [total_len, d_model]
    std::vector<std::uint8_t> key_mask;
    std::vector<Span> provenance;

    void validate() const {
        if (!states.defined() || states.rows() != key_mask.size())
            throw ShapeError("Memory: key_mask length must equal state rows");
        bool any = false;
        for (auto v : key_mask) any = any || v;
        if (!any) throw Error("Memory: no valid keys");
    }
};

// ---------------------------------------------------------------------------
// Parameters. One embedding table is shared by the encoder input, decoder
// input, and output projection. The second encoder exists only for rat-sep.
// ---------------------------------------------------------------------------

struct AttnParams {
    Tensor wq, wk, wv, wo;  // [d,d]
    Tensor bq, bk, bv, bo;  // [d]
};

struct LnParams {
    Tensor gain, bias;  // [d]
};

struct FfnParams {
    Tensor w1, b1, w2, b2;  // [d,ff],[ff],[ff,d],[d]
};

struct EncLayerParams {
    AttnParams attn;
    LnParams ln1;
    FfnParams ffn;
    LnParams ln2;
};

struct DecLayerParams {
    AttnParams self_attn;
    LnParams ln1;
    AttnParams cross_attn;
    LnParams ln2;
    FfnParams ffn;
    LnParams ln3;
};

struct EncoderParams {
    std::vector<EncLayerParams> layers;
    LnParams final_ln;
};

struct DecoderParams {
    std::vector<DecLayerParams> layers;
    LnParams final_ln;
};

namespace detail {

inline Tensor param_normal(Shape shape, Rng& rng, double stddev) {
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = rng.normal() * stddev;
    return Tensor(std::move(shape), std::move(data), true);
}

inline AttnParams init_attn(std::size_t d, Rng& rng, double stddev) {
    AttnParams p;
    p.wq = param_normal({d, d}, rng, stddev);
    p.wk = param_normal({d, d}, rng, stddev);
    p.wv = param_normal({d, d}, rng, stddev);
    p.wo = param_normal({d, d}, rng, stddev);
    p.bq = Tensor(Shape{d}, 0.0, true);
    p.bk = Tensor(Shape{d}, 0.0, true);
    p.bv = Tensor(Shape{d}, 0.0, true);
    p.bo = Tensor(Shape{d}, 0.0, true);
    return p;
}

inline LnParams init_ln(std::size_t d) {
    return {Tensor(Shape{d}, 1.0, true), Tensor(Shape{d}, 0.0, true)};
}

inline FfnParams init_ffn(std::size_t d, std::size_t ff, Rng& rng, double stddev) {
    FfnParams p;
    p.w1 = param_normal({d, ff}, rng, stddev);
    p.b1 = Tensor(Shape{ff}, 0.0, true);
    p.w2 = param_normal({ff, d}, rng, stddev);
    p.b2 = Tensor(Shape{d}, 0.0, true);
    return p;
}

inline EncoderParams init_encoder(const ModelConfig& cfg, Rng& rng, double stddev) {
    EncoderParams enc;
    for (std::size_t l = 0; l < cfg.enc_layers; ++l)
        enc.layers.push_back(
            {init_attn(cfg.d_model, rng, stddev), init_ln(cfg.d_model),
             init_ffn(cfg.d_model, cfg.d_ff, rng, stddev), init_ln(cfg.d_model)});
    enc.final_ln = init_ln(cfg.d_model);
    return enc;
}

}  // namespace detail

struct TransformerParams {
    Tensor embedding;  // [vocab, d_model], shared three ways
    EncoderParams encoder;
    std::optional<EncoderParams> match_encoder;
    DecoderParams decoder;

    /// Deterministic init: same config + seed give identical parameters.
    static TransformerParams init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        const double stddev = 0.02;
        TransformerParams p;
        p.embedding = detail::param_normal({cfg.vocab_size, cfg.d_model}, rng, stddev);
        p.encoder = detail::init_encoder(cfg, rng, stddev);
        if (cfg.variant == Variant::RatSep) p.match_encoder = detail::init_encoder(cfg, rng, stddev);
        for (std::size_t l = 0; l < cfg.dec_layers; ++l)
            p.decoder.layers.push_back({detail::init_attn(cfg.d_model, rng, stddev),
                                        detail::init_ln(cfg.d_model),
                                        detail::init_attn(cfg.d_model, rng, stddev),
                                        detail::init_ln(cfg.d_model),
                                        detail::init_ffn(cfg.d_model, cfg.d_ff, rng, stddev),
                                        detail::init_ln(cfg.d_model)});
        p.decoder.final_ln = detail::init_ln(cfg.d_model);
        return p;
    }

    /// Stable name -> tensor enumeration; the checkpoint format and the
    /// optimizer state both key off this order.
    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embedding", embedding);
        auto add_attn = [&out](const std::string& prefix, const AttnParams& a) {
            out.emplace_back(prefix + ".wq", a.wq);
            out.emplace_back(prefix + ".wk", a.wk);
            out.emplace_back(prefix + ".wv", a.wv);
            out.emplace_back(prefix + ".wo", a.wo);
            out.emplace_back(prefix + ".bq", a.bq);
            out.emplace_back(prefix + ".bk", a.bk);
            out.emplace_back(prefix + ".bv", a.bv);
            out.emplace_back(prefix + ".bo", a.bo);
        };
        auto add_ln = [&out](const std::string& prefix, const LnParams& ln) {
            out.emplace_back(prefix + ".gain", ln.gain);
            out.emplace_back(prefix + ".bias", ln.bias);
        };
        auto add_ffn = [&out](const std::string& prefix, const FfnParams& f) {
            out.emplace_back(prefix + ".w1", f.w1);
            out.emplace_back(prefix + ".b1", f.b1);
            out.emplace_back(prefix + ".w2", f.w2);
            out.emplace_back(prefix + ".b2", f.b2);
        };
        auto add_encoder = [&](const std::string& prefix, const EncoderParams& enc) {
            for (std::size_t l = 0; l < enc.layers.size(); ++l) {
                const std::string base = prefix + ".layer" + std::to_string(l);
                add_attn(base + ".attn", enc.layers[l].attn);
                add_ln(base + ".ln1", enc.layers[l].ln1);
                add_ffn(base + ".ffn", enc.layers[l].ffn);
                add_ln(base + ".ln2", enc.layers[l].ln2);
            }
            add_ln(prefix + ".final_ln", enc.final_ln);
        };
        add_encoder("encoder", encoder);
        if (match_encoder) add_encoder("match_encoder", *match_encoder);
        for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
            const std::string base = "decoder.layer" + std::to_string(l);
            add_attn(base + ".self_attn", decoder.layers[l].self_attn);
            add_ln(base + ".ln1", decoder.layers[l].ln1);
            add_attn(base + ".cross_attn", decoder.layers[l].cross_attn);
            add_ln(base + ".ln2", decoder.layers[l].ln2);
            add_ffn(base + ".ffn", decoder.layers[l].ffn);
            add_ln(base + ".ln3", decoder.layers[l].ln3);
        }
        add_ln("decoder.final_ln", decoder.final_ln);
        return out;
    }

    std::vector<Tensor> all_params() const {
        std::vector<Tensor> out;
        for (auto& [name, tensor] : named_params()) out.push_back(tensor);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : all_params()) n += t.size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Forward passes. Pre-norm residual blocks with a final layer norm; sinusoidal
// positions restart at 0 for every separately encoded pass.
// ---------------------------------------------------------------------------

/// Per-run forward context: tape (null for inference), dropout source, and
/// the train flag that turns dropout on.
struct FwdCtx {
    Tape* tape = nullptr;
    Rng* rng = nullptr;
    bool train = false;
};

/// Optional hook capturing attention distributions (one [Tq,Tk] tensor per
/// head per layer) for invariant tests.
struct AttnProbe {
    std::vector<Tensor> cross_probs;
};

inline Tensor sinusoidal_positions(std::size_t len, std::size_t d_model) {
    Tensor pe(Shape{len, d_model}, 0.0);
    auto& v = pe.mutable_values();
    for (std::size_t pos = 0; pos < len; ++pos)
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double rate = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) / rate;
            v[pos * d_model + i] = std::sin(angle);
            if (i + 1 < d_model) v[pos * d_model + i + 1] = std::cos(angle);
        }
    return pe;
}

namespace detail {

inline Tensor maybe_dropout(Tensor x, const ModelConfig& cfg, const FwdCtx& ctx) {
    if (!ctx.train || cfg.dropout == 0.0) return x;
    if (!ctx.rng) throw ConfigError("forward: training mode needs an rng for dropout");
    return dropout(x, cfg.dropout, *ctx.rng, ctx.tape);
}

}  // namespace detail

/// Scaled embedding plus positional encoding for one pass; positions start
/// at 0. Dropout applies in training mode only.
inline Tensor embed_sequence(const ModelConfig& cfg, const Tensor& embedding,
                             const std::vector<int>& ids, const FwdCtx& ctx) {
    if (ids.empty()) throw ShapeError("embed_sequence: empty id sequence");
    if (ids.size() > cfg.max_len)
        throw ShapeError(concat("embed_sequence: length ", ids.size(), " exceeds max_len ",
                                cfg.max_len));
    Tensor x = embedding_lookup(embedding, ids, ctx.tape);
    x = scale(x, std::sqrt(static_cast<double>(cfg.d_model)), ctx.tape);
    x = add(x, sinusoidal_positions(ids.size(), cfg.d_model), ctx.tape);
    return detail::maybe_dropout(x, cfg, ctx);
}

/// Multi-head attention. mask rows index queries (x_q rows), cols index keys
/// (x_kv rows); forbidden positions get -1e9 before the softmax.
inline Tensor multi_head_attention(const ModelConfig& cfg, const AttnParams& p, Tensor x_q,
                                   Tensor x_kv, const AttnMask& mask, const FwdCtx& ctx,
                                   AttnProbe* probe = nullptr) {
    const std::size_t d = cfg.d_model, h = cfg.n_heads, dh = d / h;
    Tensor q = add_bias(matmul(x_q, p.wq, ctx.tape), p.bq, ctx.tape);
    Tensor k = add_bias(matmul(x_kv, p.wk, ctx.tape), p.bk, ctx.tape);
    Tensor v = add_bias(matmul(x_kv, p.wv, ctx.tape), p.bv, ctx.tape);
    std::vector<Tensor> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        Tensor qh = slice_cols(q, i * dh, (i + 1) * dh, ctx.tape);
        Tensor kh = slice_cols(k, i * dh, (i + 1) * dh, ctx.tape);
        Tensor vh = slice_cols(v, i * dh, (i + 1) * dh, ctx.tape);
        Tensor scores = scale(matmul(qh, transpose(kh, ctx.tape), ctx.tape),
                              1.0 / std::sqrt(static_cast<double>(dh)), ctx.tape);
        Tensor probs = softmax_rows(masked_fill(scores, mask, ctx.tape), ctx.tape);
        if (probe) probe->cross_probs.push_back(probs);
        heads.push_back(matmul(probs, vh, ctx.tape));
    }
    Tensor ctx_cat = concat_cols(heads, ctx.tape);
    return add_bias(matmul(ctx_cat, p.wo, ctx.tape), p.bo, ctx.tape);
}

namespace detail {

inline Tensor ffn_forward(const ModelConfig& cfg, const FfnParams& p, Tensor x, const FwdCtx& ctx) {
    Tensor hidden = gelu(add_bias(matmul(x, p.w1, ctx.tape), p.b1, ctx.tape), ctx.tape);
    return add_bias(matmul(hidden, p.w2, ctx.tape), p.b2, ctx.tape);
}

inline Tensor ln_forward(const LnParams& p, Tensor x, const FwdCtx& ctx) {
    return layer_norm(x, p.gain, p.bias, ctx.tape);
}

}  // namespace detail

/// Encoder stack over an already-embedded sequence.
inline Tensor encoder_stack(const ModelConfig& cfg, const EncoderParams& enc, Tensor x,
                            const AttnMask& self_mask, const FwdCtx& ctx) {
    for (const auto& layer : enc.layers) {
        Tensor normed = detail::ln_forward(layer.ln1, x, ctx);
        Tensor attn = multi_head_attention(cfg, layer.attn, normed, normed, self_mask, ctx);
        x = add(x, detail::maybe_dropout(attn, cfg, ctx), ctx.tape);
        Tensor normed2 = detail::ln_forward(layer.ln2, x, ctx);
        Tensor ff = detail::ffn_forward(cfg, layer.ffn, normed2, ctx);
        x = add(x, detail::maybe_dropout(ff, cfg, ctx), ctx.tape);
    }
    return detail::ln_forward(enc.final_ln, x, ctx);
}

/// One full encoder pass over token ids. pad_valid marks positions allowed to
/// act as attention keys; an extra self-attention mask intersects with it.
inline Tensor encode(const ModelConfig& cfg, const EncoderParams& enc, const Tensor& embedding,
                     const std::vector<int>& ids, const std::vector<std::uint8_t>& pad_valid,
                     const FwdCtx& ctx, const AttnMask* self_attn_mask = nullptr) {
    if (pad_valid.size() != ids.size())
        throw ShapeError(concat("encode: pad mask length ", pad_valid.size(), " vs ", ids.size(),
                                " tokens"));
    Tensor x = embed_sequence(cfg, embedding, ids, ctx);
    AttnMask mask = AttnMask::from_key_validity(ids.size(), pad_valid);
    if (self_attn_mask) mask.intersect(*self_attn_mask);
    return encoder_stack(cfg, enc, x, mask, ctx);
}

/// Decoder stack over an embedded prefix: causal self-attention, then
/// cross-attention over memory, then the feed-forward block, per layer.
inline Tensor decoder_stack(const ModelConfig& cfg, const DecoderParams& dec, Tensor x,
                            const Memory& memory, const FwdCtx& ctx, AttnProbe* probe = nullptr) {
    const AttnMask causal = AttnMask::causal(x.rows());
    const AttnMask cross = AttnMask::from_key_validity(x.rows(), memory.key_mask);
    for (const auto& layer : dec.layers) {
        Tensor normed = detail::ln_forward(layer.ln1, x, ctx);
        Tensor self_attn =
            multi_head_attention(cfg, layer.self_attn, normed, normed, causal, ctx);
        x = add(x, detail::maybe_dropout(self_attn, cfg, ctx), ctx.tape);
        Tensor normed2 = detail::ln_forward(layer.ln2, x, ctx);
        Tensor cross_attn = multi_head_attention(cfg, layer.cross_attn, normed2, memory.states,
                                                 cross, ctx, probe);
        x = add(x, detail::maybe_dropout(cross_attn, cfg, ctx), ctx.tape);
        Tensor normed3 = detail::ln_forward(layer.ln3, x, ctx);
        Tensor ff = detail::ffn_forward(cfg, layer.ffn, normed3, ctx);
        x = add(x, detail::maybe_dropout(ff, cfg, ctx), ctx.tape);
    }
    return detail::ln_forward(dec.final_ln, x, ctx);
}

/// Logits over the vocabulary via the tied embedding: states x E^T.
inline Tensor output_logits(const Tensor& embedding, Tensor states, Tape* tape) {
    return matmul(states, transpose(embedding, tape), tape);
}

/// Full-prefix decoder forward returning [T, vocab] logits; row t predicts
/// token t+1 of the sequence.
inline Tensor decoder_forward(const ModelConfig& cfg, const TransformerParams& params,
                              const Memory& memory, const std::vector<int>& prefix_ids,
                              const FwdCtx& ctx, AttnProbe* probe = nullptr) {
    if (prefix_ids.empty() || prefix_ids.front() != Vocab::kBos)
        throw ConfigError("decoder_forward: prefix must start with BOS");
    memory.validate();
    Tensor x = embed_sequence(cfg, params.embedding, prefix_ids, ctx);
    Tensor states = decoder_stack(cfg, params.decoder, x, memory, ctx, probe);
    return output_logits(params.embedding, states, ctx.tape);
}

/// Next-token logits after the given prefix (inference only, no tape).
inline std::vector<double> decode_step(const ModelConfig& cfg, const TransformerParams& params,
                                       const Memory& memory, const std::vector<int>& prefix_ids) {
    FwdCtx ctx;
    Tensor logits = decoder_forward(cfg, params, memory, prefix_ids, ctx);
    const std::size_t t = logits.rows() - 1, v = logits.cols();
    std::vector<double> row(v);
    for (std::size_t j = 0; j < v; ++j) row[j] = logits.at(t, j);
    return row;
}

}  // namespace rat
