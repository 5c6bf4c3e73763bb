#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rat/architectures.hpp"
#include "rat/error.hpp"
#include "rat/io.hpp"
#include "rat/retriever.hpp"
#include "rat/rng.hpp"
#include "rat/tensor.hpp"
#include "rat/tokenizer.hpp"
#include "rat/transformer.hpp"

namespace rat {

struct TrainConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    std::size_t warmup_steps = 400;
    std::size_t batch_src_tokens = 2000;
    std::size_t batch_tgt_tokens = 2000;
    double label_smoothing = 0.1;
    double dropout = 0.1;
    std::size_t checkpoint_every = 500;
    std::size_t max_steps = 20000;
    std::uint64_t seed = 1;
    bool clip_grads = true;
    double clip_norm = 1.0;

    void validate() const {
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
            throw ConfigError(concat("train config: betas must lie in (0,1), got ", beta1, ", ",
                                     beta2));
        if (adam_eps <= 0.0) throw ConfigError("train config: adam_eps must be positive");
        if (warmup_steps == 0) throw ConfigError("train config: warmup_steps must be >= 1");
        if (batch_src_tokens == 0 || batch_tgt_tokens == 0)
            throw ConfigError("train config: token budgets must be >= 1");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ConfigError(concat("train config: label_smoothing ", label_smoothing,
                                     " outside [0,1)"));
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError(concat("train config: dropout ", dropout, " outside [0,1)"));
        if (checkpoint_every == 0) throw ConfigError("train config: checkpoint_every must be >= 1");
        if (max_steps == 0) throw ConfigError("train config: max_steps must be >= 1");
        if (clip_norm <= 0.0) throw ConfigError("train config: clip_norm must be positive");
    }
};

/// Warmup schedule: d_model^(-1/2) * min(step^(-1/2), step * warmup^(-3/2)).
/// Linear below warmup, inverse square root above, continuous at the joint.
inline double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup) {
    if (step == 0) throw ConfigError("noam_lr: step must be >= 1");
    if (d_model == 0 || warmup == 0) throw ConfigError("noam_lr: d_model and warmup must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// First and second moment buffers, one pair per parameter tensor, aligned
/// with the model's stable parameter enumeration order.
struct AdamMoments {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamMoments zeros_like(const NamedParams& params) {
        AdamMoments out;
        out.m.reserve(params.size());
        out.v.reserve(params.size());
        for (const auto& [name, t] : params) {
            out.m.emplace_back(t.size(), 0.0);
            out.v.emplace_back(t.size(), 0.0);
        }
        return out;
    }
};

inline double global_grad_norm(const NamedParams& params) {
    double ss = 0.0;
    for (const auto& [name, t] : params)
        for (double g : t.grad_or_zeros()) ss += g * g;
    return std::sqrt(ss);
}

/// Scales every gradient so the global norm does not exceed max_norm.
/// Returns the pre-clip norm.
inline double clip_gradients(NamedParams& params, double max_norm) {
    if (max_norm <= 0.0) throw ConfigError("clip_gradients: max_norm must be positive");
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& [name, t] : params)
            for (double& g : t.grad_buffer()) g *= factor;
    }
    return norm;
}

/// Bias-corrected Adam update reading gradients off the parameter tensors:
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps). Parameters with no
/// recorded gradient decay their moments as if the gradient were zero.
inline void adam_step(NamedParams& params, AdamMoments& moments, std::size_t step, double lr,
                      const AdamHyper& hyper = {}) {
    if (step == 0) throw ConfigError("adam_step: step must be >= 1");
    if (moments.m.size() != params.size() || moments.v.size() != params.size())
        throw ShapeError(concat("adam_step: ", params.size(), " parameters but ", moments.m.size(),
                                "/", moments.v.size(), " moment buffers"));
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        const std::vector<double> g = t.grad_or_zeros();
        if (moments.m[i].size() != g.size())
            throw ShapeError(concat("adam_step: moment size ", moments.m[i].size(),
                                    " mismatches parameter ", name, " of size ", g.size()));
        auto& values = t.mutable_values();
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw NumericError(concat("adam_step: non-finite gradient in ", name));
            moments.m[i][j] = hyper.beta1 * moments.m[i][j] + (1.0 - hyper.beta1) * g[j];
            moments.v[i][j] = hyper.beta2 * moments.v[i][j] + (1.0 - hyper.beta2) * g[j] * g[j];
            const double m_hat = moments.m[i][j] / bc1;
            const double v_hat = moments.v[i][j] / bc2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training stream: examples with fuzzy matches resolved once, then shuffled
// and greedily packed into token-budget batches per epoch.
// ---------------------------------------------------------------------------

struct TrainExample {
    int entry_id = 0;
    std::vector<int> src_ids;                  // subword ids + EOS
    std::vector<std::vector<int>> fuzzy_ids;   // per-match target ids + EOS
    std::vector<int> match_ids;                // TM entry id per fuzzy match
    std::vector<int> tgt_ids;                  // subword ids, BOS/EOS added at loss time
};

/// Resolves each corpus entry into token ids plus the target sides of its
/// top-k fuzzy matches retrieved from tm. exclude_self drops the entry's own
/// id from retrieval and requires corpus and tm to be the same store.
inline std::vector<TrainExample> resolve_examples(const TranslationMemory& corpus,
                                                  const TranslationMemory& tm, const TmIndex& index,
                                                  const Vocab& vocab, std::size_t k,
                                                  bool exclude_self, std::size_t max_len) {
    if (max_len < 2) throw ConfigError("resolve_examples: max_len must be >= 2");
    std::vector<TrainExample> out;
    out.reserve(corpus.entries.size());
    for (const auto& entry : corpus.entries) {
        TrainExample ex;
        ex.entry_id = entry.id;
        ex.src_ids = encode_with_eos(vocab, entry.source, max_len);
        ex.tgt_ids = encode(vocab, entry.target);
        if (ex.tgt_ids.size() + 1 > max_len) ex.tgt_ids.resize(max_len - 1);
        if (k > 0) {
            FuzzyMatchSet matches =
                retrieve(index, tm, entry.source, k,
                         exclude_self ? std::optional<int>(entry.id) : std::nullopt);
            for (const auto& match : matches.matches) {
                ex.fuzzy_ids.push_back(encode_with_eos(vocab, match.target_text, max_len));
                ex.match_ids.push_back(match.entry_id);
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

/// Greedy batching: walk the given order, open a new batch whenever adding
/// the next example would push either token budget over its limit. A single
/// oversized example still forms a batch of one.
inline std::vector<std::vector<std::size_t>> batch_by_budget(
        const std::vector<TrainExample>& examples, const std::vector<std::size_t>& order,
        std::size_t src_budget, std::size_t tgt_budget) {
    if (src_budget == 0 || tgt_budget == 0)
        throw ConfigError("batch_by_budget: budgets must be >= 1");
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> cur;
    std::size_t src_sum = 0, tgt_sum = 0;
    for (std::size_t idx : order) {
        const auto& ex = examples[idx];
        const std::size_t s = ex.src_ids.size();
        const std::size_t t = ex.tgt_ids.size() + 1;  // EOS counts against the budget
        if (!cur.empty() && (src_sum + s > src_budget || tgt_sum + t > tgt_budget)) {
            batches.push_back(std::move(cur));
            cur.clear();
            src_sum = tgt_sum = 0;
        }
        cur.push_back(idx);
        src_sum += s;
        tgt_sum += t;
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    return batches;
}

namespace detail {

/// Shuffle seed for one epoch, decoupled from the dropout stream so a resumed
/// run can rebuild any epoch's batch order without replaying earlier epochs.
inline std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1));
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(epoch_seed(seed, epoch));
    rng.shuffle(order);
    return order;
}

}  // namespace detail

/// One epoch of batches: top-k fuzzy matches resolved with self-exclusion,
/// order shuffled by seed, batches greedily filled to the token budgets.
inline std::vector<std::vector<TrainExample>> build_training_stream(
        const TranslationMemory& corpus, const TmIndex& index, const Vocab& vocab, std::size_t k,
        std::uint64_t seed, std::size_t src_budget, std::size_t tgt_budget,
        std::size_t max_len = 128) {
    auto examples = resolve_examples(corpus, corpus, index, vocab, k, true, max_len);
    auto order = detail::epoch_order(examples.size(), seed, 0);
    std::vector<std::vector<TrainExample>> batches;
    for (const auto& batch : batch_by_budget(examples, order, src_budget, tgt_budget)) {
        std::vector<TrainExample> group;
        for (std::size_t idx : batch) group.push_back(examples[idx]);
        batches.push_back(std::move(group));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Loss evaluation.
// ---------------------------------------------------------------------------

/// Label-smoothed cross-entropy summed over one example's target tokens
/// (gold = target shifted left plus EOS).
inline Tensor example_loss_sum(const ModelConfig& cfg, const TransformerParams& params,
                               const TrainExample& ex, double eps, const FwdCtx& ctx) {
    EncoderPlan plan = assemble_plan(cfg.variant, ex.src_ids, ex.fuzzy_ids, cfg.max_len);
    Memory memory = encode_memory(cfg, params, plan, ctx);
    std::vector<int> prefix;
    prefix.reserve(ex.tgt_ids.size() + 1);
    prefix.push_back(Vocab::kBos);
    prefix.insert(prefix.end(), ex.tgt_ids.begin(), ex.tgt_ids.end());
    std::vector<int> gold = ex.tgt_ids;
    gold.push_back(Vocab::kEos);
    std::vector<std::uint8_t> valid(gold.size(), 1);
    Tensor logits = decoder_forward(cfg, params, memory, prefix, ctx);
    return label_smoothed_cross_entropy(logits, gold, valid, eps, Reduction::Sum, ctx.tape);
}

inline std::size_t target_token_count(const std::vector<TrainExample>& batch) {
    std::size_t n = 0;
    for (const auto& ex : batch) n += ex.tgt_ids.size() + 1;
    return n;
}

/// Mean loss per target token over a set of examples, inference mode.
inline double corpus_loss(const ModelConfig& cfg, const TransformerParams& params,
                          const std::vector<TrainExample>& examples, double eps) {
    if (examples.empty()) throw ConfigError("corpus_loss: no examples");
    FwdCtx ctx;
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : examples) {
        total += example_loss_sum(cfg, params, ex, eps, ctx).item();
        tokens += ex.tgt_ids.size() + 1;
    }
    return total / static_cast<double>(tokens);
}

/// Forward + backward for one batch; the loss is the token-weighted mean over
/// the batch so gradients are independent of how examples were grouped.
inline double train_step(const ModelConfig& cfg, const TransformerParams& params,
                         const std::vector<TrainExample>& batch, double eps, Tape& tape,
                         Rng& rng) {
    if (batch.empty()) throw ConfigError("train_step: empty batch");
    FwdCtx ctx{&tape, &rng, true};
    Tensor total;
    for (const auto& ex : batch) {
        Tensor part = example_loss_sum(cfg, params, ex, eps, ctx);
        total = total.defined() ? add(total, part, &tape) : part;
    }
    Tensor mean = scale(total, 1.0 / static_cast<double>(target_token_count(batch)), &tape);
    const double loss = mean.item();
    tape.backward(mean);
    return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "RATCKPT1";
inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    TransformerParams params;
    AdamMoments moments;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;           // epoch holding the next batch
    std::uint64_t batch_in_epoch = 0;  // batches already consumed in that epoch
    std::string rng_state;             // dropout stream
};

namespace detail {

inline void write_model_config(std::ostream& out, const ModelConfig& cfg) {
    io::write_u64(out, cfg.enc_layers);
    io::write_u64(out, cfg.dec_layers);
    io::write_u64(out, cfg.d_model);
    io::write_u64(out, cfg.n_heads);
    io::write_u64(out, cfg.d_ff);
    io::write_f64(out, cfg.dropout);
    io::write_u64(out, cfg.max_len);
    io::write_u64(out, cfg.vocab_size);
    io::write_u64(out, static_cast<std::uint64_t>(cfg.variant));
    io::write_u64(out, cfg.k);
}

inline ModelConfig read_model_config(std::istream& in) {
    ModelConfig cfg;
    cfg.enc_layers = io::read_u64(in);
    cfg.dec_layers = io::read_u64(in);
    cfg.d_model = io::read_u64(in);
    cfg.n_heads = io::read_u64(in);
    cfg.d_ff = io::read_u64(in);
    cfg.dropout = io::read_f64(in);
    cfg.max_len = io::read_u64(in);
    cfg.vocab_size = io::read_u64(in);
    const std::uint64_t variant = io::read_u64(in);
    if (variant > static_cast<std::uint64_t>(Variant::RatSi))
        throw IoError(concat("checkpoint: unknown variant tag ", variant));
    cfg.variant = static_cast<Variant>(variant);
    cfg.k = io::read_u64(in);
    return cfg;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(concat("cannot write checkpoint ", path));
    io::write_magic(out, kCheckpointMagic);
    io::write_u64(out, kCheckpointVersion);
    detail::write_model_config(out, ckpt.config);
    io::write_u64(out, ckpt.step);
    io::write_u64(out, ckpt.epoch);
    io::write_u64(out, ckpt.batch_in_epoch);
    io::write_string(out, ckpt.rng_state);
    const NamedParams named = ckpt.params.named_params();
    if (ckpt.moments.m.size() != named.size())
        throw ShapeError(concat("checkpoint: ", named.size(), " parameters but ",
                                ckpt.moments.m.size(), " moment buffers"));
    io::write_u64(out, named.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& [name, t] = named[i];
        io::write_string(out, name);
        io::write_u64(out, t.shape().size());
        for (std::size_t dim : t.shape()) io::write_u64(out, dim);
        io::write_f64_vec(out, t.values());
        io::write_f64_vec(out, ckpt.moments.m[i]);
        io::write_f64_vec(out, ckpt.moments.v[i]);
    }
    if (!out) throw IoError(concat("short write to checkpoint ", path));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("cannot open checkpoint ", path));
    io::check_magic(in, kCheckpointMagic, path);
    const std::uint64_t version = io::read_u64(in);
    if (version != kCheckpointVersion)
        throw IoError(concat("checkpoint ", path, ": unsupported version ", version));
    Checkpoint ckpt;
    ckpt.config = detail::read_model_config(in);
    ckpt.config.validate();
    ckpt.step = io::read_u64(in);
    ckpt.epoch = io::read_u64(in);
    ckpt.batch_in_epoch = io::read_u64(in);
    ckpt.rng_state = io::read_string(in);
    Rng scratch(0);
    ckpt.params = TransformerParams::init(ckpt.config, scratch);
    NamedParams named = ckpt.params.named_params();
    const std::uint64_t count = io::read_u64(in);
    if (count != named.size())
        throw IoError(concat("checkpoint ", path, ": expected ", named.size(), " tensors, found ",
                             count));
    ckpt.moments.m.resize(named.size());
    ckpt.moments.v.resize(named.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        const std::string stored = io::read_string(in);
        if (stored != name)
            throw IoError(concat("checkpoint ", path, ": tensor ", i, " is '", stored,
                                 "', expected '", name, "'"));
        const std::uint64_t ndim = io::read_u64(in);
        Shape shape(ndim);
        for (auto& dim : shape) dim = io::read_u64(in);
        if (shape != t.shape())
            throw IoError(concat("checkpoint ", path, ": tensor ", name,
                                 " has a shape inconsistent with its model config"));
        std::vector<double> data = io::read_f64_vec(in);
        if (data.size() != t.size())
            throw IoError(concat("checkpoint ", path, ": tensor ", name, " has ", data.size(),
                                 " values, expected ", t.size()));
        t.mutable_values() = std::move(data);
        ckpt.moments.m[i] = io::read_f64_vec(in);
        ckpt.moments.v[i] = io::read_f64_vec(in);
        if (ckpt.moments.m[i].size() != t.size() || ckpt.moments.v[i].size() != t.size())
            throw IoError(concat("checkpoint ", path, ": moment buffers for ", name,
                                 " mismatch its size"));
    }
    if (!in) throw IoError(concat("truncated checkpoint ", path));
    return ckpt;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct LossLogRow {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
};

inline void save_loss_log(const std::vector<LossLogRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError(concat("cannot write loss log ", path));
    out << "step\tlr\ttrain_loss\tvalid_loss\n";
    for (const auto& row : rows)
        out << row.step << '\t' << std::setprecision(10) << row.lr << '\t' << row.train_loss
            << '\t' << row.valid_loss << '\n';
}

struct TrainResult {
    std::vector<LossLogRow> log;
    std::vector<std::string> checkpoint_paths;
    std::string final_checkpoint;
    std::size_t steps_run = 0;
    bool diverged = false;
    std::string divergence_reason;
};

/// Full training run. Fuzzy matches come from the training corpus itself with
/// self-exclusion; validation examples retrieve from the same store without
/// exclusion. Checkpoints land in out_dir every checkpoint_every steps and at
/// the final step; a non-finite loss or gradient aborts the run with the last
/// good checkpoint retained. Pass resume to continue a checkpointed run
/// bit-identically to an uninterrupted one.
inline TrainResult train(ModelConfig model_cfg, const TrainConfig& train_cfg,
                         const TranslationMemory& corpus, const TranslationMemory& valid,
                         const Vocab& vocab, const std::string& out_dir,
                         const Checkpoint* resume = nullptr) {
    train_cfg.validate();
    if (resume) model_cfg = resume->config;
    model_cfg.dropout = train_cfg.dropout;
    if (model_cfg.vocab_size == 0)
        model_cfg.vocab_size = vocab.id_to_token.size();
    model_cfg.validate();
    std::filesystem::create_directories(out_dir);

    const TmIndex index = build_index(corpus);
    const auto train_examples = resolve_examples(corpus, corpus, index, vocab, model_cfg.k, true,
                                                 model_cfg.max_len);
    std::vector<TrainExample> valid_examples;
    if (!valid.entries.empty())
        valid_examples = resolve_examples(valid, corpus, index, vocab, model_cfg.k, false,
                                          model_cfg.max_len);

    Rng rng(train_cfg.seed);
    TransformerParams params;
    AdamMoments moments;
    std::size_t step = 0;
    std::uint64_t epoch = 0;
    std::size_t batch_skip = 0;
    if (resume) {
        // Deep-copy: parameter tensors are shared handles, and training must
        // not mutate the caller's checkpoint in place.
        params = TransformerParams::init(model_cfg, rng);
        NamedParams dst = params.named_params();
        const NamedParams src = resume->params.named_params();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i].second.mutable_values() = src[i].second.values();
        moments = resume->moments;
        step = resume->step;
        epoch = resume->epoch;
        batch_skip = resume->batch_in_epoch;
        rng.load_state(resume->rng_state);
    } else {
        params = TransformerParams::init(model_cfg, rng);
        moments = AdamMoments::zeros_like(params.named_params());
    }
    NamedParams named = params.named_params();
    const AdamHyper hyper{train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps};

    TrainResult result;
    double loss_accum = 0.0;
    std::size_t loss_count = 0;
    const auto checkpoint_path = [&](std::size_t at) {
        return (std::filesystem::path(out_dir) / concat("checkpoint-", at, ".bin")).string();
    };

    bool done = step >= train_cfg.max_steps;
    while (!done) {
        const auto order =
            detail::epoch_order(train_examples.size(), train_cfg.seed, epoch);
        const auto batches = batch_by_budget(train_examples, order, train_cfg.batch_src_tokens,
                                             train_cfg.batch_tgt_tokens);
        if (batches.empty()) throw ConfigError("train: corpus produced no batches");
        for (std::size_t bi = batch_skip; bi < batches.size() && !done; ++bi) {
            ++step;
            const double lr = noam_lr(step, model_cfg.d_model, train_cfg.warmup_steps);
            std::vector<TrainExample> batch;
            batch.reserve(batches[bi].size());
            for (std::size_t idx : batches[bi]) batch.push_back(train_examples[idx]);
            try {
                Tape tape;
                const double loss =
                    train_step(model_cfg, params, batch, train_cfg.label_smoothing, tape, rng);
                if (train_cfg.clip_grads) clip_gradients(named, train_cfg.clip_norm);
                adam_step(named, moments, step, lr, hyper);
                loss_accum += loss;
                ++loss_count;
            } catch (const NumericError& err) {
                result.diverged = true;
                result.divergence_reason = err.what();
                done = true;
                break;
            }
            for (auto& [name, t] : named) t.drop_grad();

            if (step % train_cfg.checkpoint_every == 0 || step == train_cfg.max_steps) {
                LossLogRow row;
                row.step = step;
                row.lr = lr;
                row.train_loss = loss_count ? loss_accum / static_cast<double>(loss_count) : 0.0;
                row.valid_loss =
                    valid_examples.empty()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : corpus_loss(model_cfg, params, valid_examples,
                                      train_cfg.label_smoothing);
                result.log.push_back(row);
                loss_accum = 0.0;
                loss_count = 0;

                Checkpoint ckpt;
                ckpt.config = model_cfg;
                ckpt.params = params;
                ckpt.moments = moments;
                ckpt.step = step;
                ckpt.epoch = epoch;
                ckpt.batch_in_epoch = bi + 1;
                ckpt.rng_state = rng.save_state();
                const std::string path = checkpoint_path(step);
                save_checkpoint(ckpt, path);
                result.checkpoint_paths.push_back(path);
            }
            if (step >= train_cfg.max_steps) done = true;
        }
        batch_skip = 0;
        ++epoch;
    }

    result.steps_run = step;
    if (!result.checkpoint_paths.empty()) result.final_checkpoint = result.checkpoint_paths.back();
    save_loss_log(result.log, (std::filesystem::path(out_dir) / "loss.tsv").string());
    return result;
}

}  // namespace rat
