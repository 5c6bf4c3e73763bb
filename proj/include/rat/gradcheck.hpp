#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rat/architectures.hpp"
#include "rat/tensor.hpp"

namespace rat {

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true,
                            double scl = 1.0) {
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = rng.normal() * scl;
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

inline GradCheckCase run_case(const std::string& name, double tolerance, double step,
                              const std::function<Tensor(Tape&)>& f,
                              std::vector<Tensor> leaves) {
    GradCheckCase result{name, grad_check(f, leaves, step), tolerance, false};
    result.passed = result.max_rel_err < tolerance;
    return result;
}

}  // namespace detail

/// Finite-difference checks covering every differentiable op, one case per
/// op family. Central differences with step 1e-5 against tolerance 1e-4.
inline std::vector<GradCheckCase> grad_check_ops(std::uint64_t seed = 2024) {
    Rng rng(seed);
    const double step = 1e-5;
    const double tol = 1e-4;
    std::vector<GradCheckCase> cases;

    {
        Tensor a = detail::random_tensor({3, 4}, rng);
        Tensor b = detail::random_tensor({4, 2}, rng);
        cases.push_back(detail::run_case(
            "matmul", tol, step, [&](Tape& t) { return sum(matmul(a, b, &t), &t); }, {a, b}));
    }
    {
        Tensor a = detail::random_tensor({2, 3}, rng);
        Tensor b = detail::random_tensor({2, 3}, rng);
        Tensor bias = detail::random_tensor({3}, rng);
        cases.push_back(detail::run_case(
            "add_mul_scale_bias", tol, step,
            [&](Tape& t) {
                Tensor x = add_bias(add(a, b, &t), bias, &t);
                return sum(scale(mul(x, x, &t), 0.5, &t), &t);
            },
            {a, b, bias}));
    }
    {
        Tensor a = detail::random_tensor({3, 3}, rng);
        cases.push_back(detail::run_case(
            "relu_gelu", 2e-4, step,
            [&](Tape& t) { return sum(mul(relu(a, &t), gelu(a, &t), &t), &t); }, {a}));
    }
    {
        Tensor a = detail::random_tensor({2, 4}, rng);
        Tensor w = detail::random_tensor({2, 4}, rng, false);
        cases.push_back(detail::run_case(
            "softmax_log_softmax", tol, step,
            [&](Tape& t) {
                Tensor p = mul(softmax_rows(a, &t), w, &t);
                Tensor lp = mul(log_softmax_rows(a, &t), w, &t);
                return sum(add(p, lp, &t), &t);
            },
            {a}));
    }
    {
        Tensor a = detail::random_tensor({3, 6}, rng);
        Tensor g = detail::random_tensor({6}, rng);
        Tensor b = detail::random_tensor({6}, rng);
        Tensor w = detail::random_tensor({3, 6}, rng, false);
        cases.push_back(detail::run_case(
            "layer_norm", tol, step,
            [&](Tape& t) { return sum(mul(layer_norm(a, g, b, &t), w, &t), &t); }, {a, g, b}));
    }
    {
        Tensor table = detail::random_tensor({5, 3}, rng);
        Tensor extra = detail::random_tensor({2, 3}, rng);
        Tensor w = detail::random_tensor({3, 4}, rng, false);
        cases.push_back(detail::run_case(
            "embedding_concat_slice_transpose_reshape", tol, step,
            [&](Tape& t) {
                Tensor e = embedding_lookup(table, {0, 4, 1}, &t);
                std::vector<Tensor> parts{e, extra};
                Tensor cat = concat_rows(parts, &t);
                Tensor sl = slice_rows(cat, 1, 4, &t);
                Tensor tr = transpose(sl, &t);
                Tensor rs = reshape(matmul(tr, w, &t), {12}, &t);
                return sum(mul(rs, rs, &t), &t);
            },
            {table, extra}));
    }
    {
        Tensor a = detail::random_tensor({2, 3}, rng);
        AttnMask m{2, 3, {1, 1, 0, 0, 1, 1}};
        Tensor w = detail::random_tensor({2, 3}, rng, false);
        cases.push_back(detail::run_case(
            "masked_fill_softmax", tol, step,
            [&](Tape& t) {
                return sum(mul(softmax_rows(masked_fill(a, m, &t), &t), w, &t), &t);
            },
            {a}));
    }
    {
        Tensor logits = detail::random_tensor({3, 7}, rng);
        const std::vector<int> gold{2, 5, 6};
        const std::vector<std::uint8_t> valid{1, 1, 0};
        cases.push_back(detail::run_case(
            "label_smoothed_cross_entropy", tol, step,
            [&](Tape& t) {
                return label_smoothed_cross_entropy(logits, gold, valid, 0.1, Reduction::Mean,
                                                    &t);
            },
            {logits}));
    }
    {
        ModelConfig mini;
        mini.d_model = 8;
        mini.n_heads = 2;
        Tensor q = detail::random_tensor({3, 8}, rng);
        Tensor kv = detail::random_tensor({4, 8}, rng);
        AttnParams attn = detail::init_attn(8, rng, 0.1);
        std::vector<Tensor> leaves{q,       kv,      attn.wq, attn.wk, attn.wv,
                                   attn.wo, attn.bq, attn.bk, attn.bv, attn.bo};
        cases.push_back(detail::run_case(
            "multi_head_attention", tol, step,
            [&](Tape& t) {
                FwdCtx ctx{&t, nullptr, false};
                return sum(multi_head_attention(mini, attn, q, kv, AttnMask::all(3, 4), ctx),
                           &t);
            },
            leaves));
    }
    return cases;
}

/// End-to-end check on the full model: two layers each side, d_model 16,
/// two heads, a short RAT-CAT plan with one fuzzy match, label-smoothed
/// loss over every parameter. Tolerance 1e-3 with step 1e-4 (roundoff on
/// ~1e-9 gradient coordinates dominates below that).
inline GradCheckCase grad_check_transformer(std::uint64_t seed = 8) {
    ModelConfig cfg;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 24;
    cfg.dropout = 0.0;
    cfg.max_len = 24;
    cfg.vocab_size = 11;
    cfg.variant = Variant::RatCat;
    cfg.k = 1;
    Rng rng(seed);
    TransformerParams params = TransformerParams::init(cfg, rng);

    const std::vector<int> src{5, 6, 7, Vocab::kEos};
    const std::vector<std::vector<int>> fuzzy{{9, 10, Vocab::kEos}};
    const std::vector<int> prefix{Vocab::kBos, 8, 9};
    const std::vector<int> gold{8, 9, Vocab::kEos};
    const std::vector<std::uint8_t> valid(3, 1);

    auto loss_fn = [&](Tape& tape) {
        FwdCtx ctx{&tape, nullptr, false};
        Memory memory =
            encode_memory(cfg, params, assemble_plan(cfg.variant, src, fuzzy, cfg.max_len), ctx);
        Tensor logits = decoder_forward(cfg, params, memory, prefix, ctx);
        return label_smoothed_cross_entropy(logits, gold, valid, 0.1, Reduction::Mean, &tape);
    };
    GradCheckCase result{"transformer_end_to_end", 0.0, 1e-3, false};
    std::vector<Tensor> leaves = params.all_params();
    result.max_rel_err = grad_check(loss_fn, leaves, 1e-4);
    result.passed = result.max_rel_err < result.tolerance;
    return result;
}

}  // namespace rat
