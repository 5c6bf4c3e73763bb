#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rat/architectures.hpp"
#include "rat/tensor.hpp"
#include "rat/transformer.hpp"

using namespace rat;

namespace {

ModelConfig tiny_config(Variant variant = Variant::Baseline, std::size_t layers = 1) {
    ModelConfig cfg;
    cfg.enc_layers = layers;
    cfg.dec_layers = layers;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.dropout = 0.0;
    cfg.max_len = 64;
    cfg.vocab_size = 30;
    cfg.variant = variant;
    return cfg;
}

Memory encode_baseline(const ModelConfig& cfg, const TransformerParams& params,
                       const std::vector<int>& src, const FwdCtx& ctx) {
    return encode_memory(cfg, params, assemble_plan(cfg.variant, src, {}, cfg.max_len), ctx);
}

}  // namespace

TEST_CASE("config invariants are enforced", "[transformer]") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    ModelConfig bad = cfg;
    bad.n_heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.max_len = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.vocab_size = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    CHECK(variant_from_name("rat-si") == Variant::RatSi);
    CHECK(std::string(variant_name(Variant::RatCat)) == "rat-cat");
    CHECK_THROWS_AS(variant_from_name("ratsi"), ConfigError);
}

TEST_CASE("sinusoidal positions interleave sin and cos", "[transformer]") {
    Tensor pe = sinusoidal_positions(4, 6);
    CHECK(pe.at(0, 0) == 0.0);
    CHECK(pe.at(0, 1) == 1.0);
    CHECK(pe.at(1, 0) == Catch::Approx(std::sin(1.0)));
    CHECK(pe.at(1, 1) == Catch::Approx(std::cos(1.0)));
    CHECK(pe.at(2, 2) == Catch::Approx(std::sin(2.0 / std::pow(10000.0, 2.0 / 6.0))));
}

TEST_CASE("decoder logits have vocab width and causal rows", "[transformer]") {
    ModelConfig cfg = tiny_config();
    cfg.vocab_size = 7;
    Rng rng(1);
    TransformerParams params = TransformerParams::init(cfg, rng);
    FwdCtx ctx;
    Memory memory = encode_baseline(cfg, params, {5, 6, 5}, ctx);

    auto step = decode_step(cfg, params, memory, {Vocab::kBos, 5});
    CHECK(step.size() == 7);

    Tensor full = decoder_forward(cfg, params, memory, {Vocab::kBos, 5, 6, 5}, ctx);
    CHECK(full.rows() == 4);
    CHECK(full.cols() == 7);

    // appending tokens after position t never changes the step-t logits
    Tensor shorter = decoder_forward(cfg, params, memory, {Vocab::kBos, 5}, ctx);
    for (std::size_t t = 0; t < shorter.rows(); ++t)
        for (std::size_t v = 0; v < 7; ++v) CHECK(shorter.at(t, v) == full.at(t, v));

    CHECK_THROWS_AS(decoder_forward(cfg, params, memory, {5, 6}, ctx), ConfigError);
}

TEST_CASE("invalid memory keys cannot influence the decoder", "[transformer]") {
    ModelConfig cfg = tiny_config();
    Rng rng(2);
    TransformerParams params = TransformerParams::init(cfg, rng);
    FwdCtx ctx;
    Memory memory = encode_baseline(cfg, params, {5, 6, 7, 8}, ctx);
    memory.key_mask = {1, 1, 0, 0};

    const std::vector<int> prefix{Vocab::kBos, 9, 10};
    Tensor before = decoder_forward(cfg, params, memory, prefix, ctx);
    auto& states = memory.states.mutable_values();
    const std::size_t d = cfg.d_model;
    for (std::size_t i = 2 * d; i < 4 * d; ++i) states[i] = states[i] * -3.0 + 1.5;
    Tensor after = decoder_forward(cfg, params, memory, prefix, ctx);
    CHECK(before.values() == after.values());

    memory.key_mask = {0, 0, 0, 0};
    CHECK_THROWS_AS(decoder_forward(cfg, params, memory, prefix, ctx), Error);
}

TEST_CASE("cross attention rows are proper distributions", "[transformer]") {
    ModelConfig cfg = tiny_config(Variant::Baseline, 2);
    Rng rng(3);
    TransformerParams params = TransformerParams::init(cfg, rng);
    FwdCtx ctx;
    Memory memory = encode_baseline(cfg, params, {11, 12, 13, 14, 15}, ctx);
    AttnProbe probe;
    decoder_forward(cfg, params, memory, {Vocab::kBos, 5, 6}, ctx, &probe);
    REQUIRE(probe.cross_probs.size() == cfg.dec_layers * cfg.n_heads);
    for (const auto& probs : probe.cross_probs) {
        REQUIRE(probs.cols() == memory.states.rows());
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < probs.cols(); ++j) row_sum += probs.at(i, j);
            CHECK(std::abs(row_sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("masked encoder keys leave other states untouched", "[transformer]") {
    ModelConfig cfg = tiny_config();  // one layer: masking effects are exact
    Rng rng(4);
    TransformerParams params = TransformerParams::init(cfg, rng);
    FwdCtx ctx;
    std::vector<int> ids{5, 6, 7, 8, 9};
    std::vector<std::uint8_t> valid{1, 1, 1, 1, 0};

    Tensor before = encode(cfg, params.encoder, params.embedding, ids, valid, ctx);
    std::vector<int> permuted = ids;
    permuted[4] = 21;  // only the masked-out tail position changes
    Tensor after = encode(cfg, params.encoder, params.embedding, permuted, valid, ctx);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < cfg.d_model; ++j) CHECK(before.at(i, j) == after.at(i, j));

    // an explicit self-attention mask works the same way
    AttnMask extra = AttnMask::all(5, 5);
    for (std::size_t i = 0; i < 5; ++i)
        if (i != 3) extra.allowed[i * 5 + 3] = 0;
    std::vector<std::uint8_t> all_valid(5, 1);
    Tensor b2 = encode(cfg, params.encoder, params.embedding, ids, all_valid, ctx, &extra);
    std::vector<int> changed = ids;
    changed[3] = 22;
    Tensor a2 = encode(cfg, params.encoder, params.embedding, changed, all_valid, ctx, &extra);
    for (std::size_t i = 0; i < 5; ++i) {
        if (i == 3) continue;
        for (std::size_t j = 0; j < cfg.d_model; ++j) CHECK(b2.at(i, j) == a2.at(i, j));
    }

    CHECK_THROWS_AS(encode(cfg, params.encoder, params.embedding, ids, {1, 1}, ctx), ShapeError);
}

TEST_CASE("forward passes are deterministic", "[transformer]") {
    ModelConfig cfg = tiny_config(Variant::Baseline, 2);
    Rng rng(5);
    TransformerParams params = TransformerParams::init(cfg, rng);
    std::vector<int> ids{6, 7, 8};
    std::vector<std::uint8_t> valid(3, 1);
    FwdCtx ctx;
    Tensor a = encode(cfg, params.encoder, params.embedding, ids, valid, ctx);
    Tensor b = encode(cfg, params.encoder, params.embedding, ids, valid, ctx);
    CHECK(a.values() == b.values());

    // training mode: same dropout seed, same output; different seed differs
    cfg.dropout = 0.3;
    Rng d1(77), d2(77), d3(78);
    FwdCtx t1{nullptr, &d1, true}, t2{nullptr, &d2, true}, t3{nullptr, &d3, true};
    Tensor x1 = encode(cfg, params.encoder, params.embedding, ids, valid, t1);
    Tensor x2 = encode(cfg, params.encoder, params.embedding, ids, valid, t2);
    Tensor x3 = encode(cfg, params.encoder, params.embedding, ids, valid, t3);
    CHECK(x1.values() == x2.values());
    CHECK(x1.values() != x3.values());

    Rng i1(9), i2(9);
    TransformerParams p1 = TransformerParams::init(cfg, i1);
    TransformerParams p2 = TransformerParams::init(cfg, i2);
    CHECK(p1.embedding.values() == p2.embedding.values());
    CHECK(p1.decoder.layers[0].ffn.w1.values() == p2.decoder.layers[0].ffn.w1.values());
}

TEST_CASE("attention core is permutation equivariant without positions", "[transformer]") {
    ModelConfig cfg = tiny_config();
    Rng rng(6);
    TransformerParams params = TransformerParams::init(cfg, rng);
    FwdCtx ctx;
    const std::size_t n = 5, d = cfg.d_model;
    Tensor x = embedding_lookup(params.embedding, {5, 9, 13, 17, 21}, nullptr);
    Tensor y = encoder_stack(cfg, params.encoder, x, AttnMask::all(n, n), ctx);

    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<double> px(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) px[i * d + j] = x.at(perm[i], j);
    Tensor yp = encoder_stack(cfg, params.encoder, Tensor({n, d}, px), AttnMask::all(n, n), ctx);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(yp.at(i, j) == Catch::Approx(y.at(perm[i], j)).margin(1e-9));
}

TEST_CASE("embedding is shared three ways", "[transformer]") {
    ModelConfig cfg = tiny_config();
    Rng rng(7);
    TransformerParams params = TransformerParams::init(cfg, rng);
    std::size_t embedding_entries = 0;
    for (const auto& [name, tensor] : params.named_params())
        if (name.find("embed") != std::string::npos) ++embedding_entries;
    CHECK(embedding_entries == 1);

    // logits against the tied table: row v of E scores token v
    Tensor states(Shape{1, cfg.d_model}, 0.0);
    for (std::size_t j = 0; j < cfg.d_model; ++j)
        states.mutable_values()[j] = params.embedding.at(4, j);
    Tensor logits = output_logits(params.embedding, states, nullptr);
    double dot4 = 0.0;
    for (std::size_t j = 0; j < cfg.d_model; ++j)
        dot4 += params.embedding.at(4, j) * params.embedding.at(4, j);
    CHECK(logits.at(0, 4) == Catch::Approx(dot4));
}

TEST_CASE("full model gradients match finite differences", "[transformer][grad]") {
    ModelConfig cfg;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.dropout = 0.0;
    cfg.max_len = 16;
    cfg.vocab_size = 11;
    Rng rng(8);
    TransformerParams params = TransformerParams::init(cfg, rng);

    const std::vector<int> src{5, 6, 7};
    const std::vector<int> prefix{Vocab::kBos, 8, 9};
    const std::vector<int> gold{8, 9, Vocab::kEos};
    const std::vector<std::uint8_t> valid(3, 1);

    auto loss_fn = [&](Tape& tape) {
        FwdCtx ctx{&tape, nullptr, false};
        Memory memory =
            encode_memory(cfg, params, assemble_plan(cfg.variant, src, {}, cfg.max_len), ctx);
        Tensor logits = decoder_forward(cfg, params, memory, prefix, ctx);
        return label_smoothed_cross_entropy(logits, gold, valid, 0.1, Reduction::Mean, &tape);
    };

    // 1e-4 keeps central-difference roundoff below the tolerance on
    // coordinates whose true gradient is ~1e-9
    std::vector<Tensor> leaves = params.all_params();
    const double err = grad_check(loss_fn, leaves, 1e-4);
    INFO("max relative error " << err);
    CHECK(err < 1e-3);
}
