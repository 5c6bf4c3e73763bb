#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rat/tensor.hpp"

using namespace rat;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scl = 1.0) {
    std::vector<double> data(detail::numel(shape));
    for (auto& v : data) v = rng.normal() * scl;
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform", "[tensor]") {
    Tensor x(Shape{1, 2}, {0.0, 0.0});
    Tensor y = softmax_rows(x, nullptr);
    CHECK(y.values()[0] == Catch::Approx(0.5));
    CHECK(y.values()[1] == Catch::Approx(0.5));

    Tensor x4(Shape{2, 4}, 3.25);
    Tensor y4 = softmax_rows(x4, nullptr);
    for (double v : y4.values()) CHECK(v == Catch::Approx(0.25));
}

TEST_CASE("layer_norm of a constant row is all zeros under unit gain", "[tensor]") {
    Tensor x(Shape{2, 5}, 7.0);
    Tensor g(Shape{5}, 1.0);
    Tensor b(Shape{5}, 0.0);
    Tensor y = layer_norm(x, g, b, nullptr);
    for (double v : y.values()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("layer_norm normalizes each row to zero mean unit variance", "[tensor]") {
    Rng rng(11);
    Tensor x = random_tensor({4, 16}, rng, false, 3.0);
    Tensor g(Shape{16}, 1.0);
    Tensor b(Shape{16}, 0.0);
    Tensor y = layer_norm(x, g, b, nullptr);
    for (std::size_t i = 0; i < 4; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mean += y.at(i, j);
        mean /= 16.0;
        for (std::size_t j = 0; j < 16; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == Catch::Approx(1.0).margin(1e-4));
    }
}

TEST_CASE("masked softmax sends forbidden positions to zero", "[tensor]") {
    Tensor x(Shape{1, 2}, {0.0, 0.0});
    AttnMask m{1, 2, {1, 0}};
    Tensor y = softmax_rows(masked_fill(x, m, nullptr), nullptr);
    CHECK(y.values()[0] == Catch::Approx(1.0));
    CHECK(y.values()[1] == Catch::Approx(0.0).margin(1e-300));
}

TEST_CASE("masked_fill rejects a fully masked row", "[tensor]") {
    Tensor x(Shape{2, 3}, 1.0);
    AttnMask m{2, 3, {1, 1, 1, 0, 0, 0}};
    CHECK_THROWS_AS(masked_fill(x, m, nullptr), Error);
}

TEST_CASE("sum of elementwise square has gradient 2x", "[tensor]") {
    Tensor x(Shape{3}, {1.0, 2.0, 3.0}, true);
    Tape tape;
    Tensor loss = sum(mul(x, x, &tape), &tape);
    CHECK(loss.item() == Catch::Approx(14.0));
    tape.backward(loss);
    const auto& g = x.grad();
    CHECK(g[0] == Catch::Approx(2.0));
    CHECK(g[1] == Catch::Approx(4.0));
    CHECK(g[2] == Catch::Approx(6.0));
}

TEST_CASE("gradients accumulate across multiple uses of one tensor", "[tensor]") {
    Tensor x(Shape{2}, {1.5, -0.5}, true);
    Tape tape;
    Tensor loss = sum(add(x, x, &tape), &tape);
    tape.backward(loss);
    CHECK(x.grad()[0] == Catch::Approx(2.0));
    CHECK(x.grad()[1] == Catch::Approx(2.0));
}

TEST_CASE("parameter unused by the loss keeps an all-zero gradient", "[tensor]") {
    Tensor used(Shape{2}, {1.0, 2.0}, true);
    Tensor unused(Shape{3}, {5.0, 6.0, 7.0}, true);
    Tape tape;
    Tensor loss = sum(used, &tape);
    tape.backward(loss);
    auto g = unused.grad_or_zeros();
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("backward validates its inputs", "[tensor]") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), Error);
    Tensor x(Shape{2}, {1.0, 2.0}, true);
    Tensor y = add(x, x, &tape);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("non-finite op output raises NumericError", "[tensor]") {
    Tensor big(Shape{1, 1}, {1e308});
    CHECK_THROWS_AS(mul(big, big, nullptr), NumericError);
    Tensor nan_in(Shape{2}, {std::nan(""), 1.0});
    CHECK_THROWS_AS(scale(nan_in, 1.0, nullptr), NumericError);
}

TEST_CASE("shape mismatches are rejected", "[tensor]") {
    Tensor a(Shape{2, 3}, 1.0);
    Tensor b(Shape{3, 3}, 1.0);
    CHECK_THROWS_AS(add(a, b, nullptr), ShapeError);
    CHECK_THROWS_AS(mul(a, b, nullptr), ShapeError);
    Tensor c(Shape{4, 2}, 1.0);
    CHECK_THROWS_AS(matmul(a, c, nullptr), ShapeError);
    CHECK_THROWS_AS(reshape(a, {5}, nullptr), ShapeError);
    CHECK_THROWS_AS(slice_rows(a, 1, 1, nullptr), ShapeError);
    CHECK_THROWS_AS(slice_cols(a, 2, 5, nullptr), ShapeError);
}

TEST_CASE("dropout p=0 is the identity and a fixed seed reproduces the mask", "[tensor]") {
    Rng rng(7);
    Tensor x(Shape{4, 4}, 2.0, true);
    Tape tape;
    Tensor y = dropout(x, 0.0, rng, &tape);
    CHECK(y.same_node(x));

    Rng r1(42), r2(42);
    Tensor a = dropout(x, 0.5, r1, nullptr);
    Tensor b = dropout(x, 0.5, r2, nullptr);
    CHECK(a.values() == b.values());
    for (double v : a.values()) CHECK((v == 0.0 || v == Catch::Approx(4.0)));

    CHECK_THROWS_AS(dropout(x, 1.0, rng, nullptr), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, nullptr), ConfigError);
}

TEST_CASE("cross entropy on uniform logits equals ln(V) for any smoothing", "[tensor]") {
    Tensor logits(Shape{3, 4}, 1.7);
    std::vector<int> gold{0, 2, 3};
    std::vector<std::uint8_t> valid{1, 1, 1};
    for (double eps : {0.0, 0.1, 0.5}) {
        Tensor loss = label_smoothed_cross_entropy(logits, gold, valid, eps, Reduction::Mean, nullptr);
        CHECK(loss.item() == Catch::Approx(std::log(4.0)));
    }
}

TEST_CASE("cross entropy ignores padded positions and rejects all-pad input", "[tensor]") {
    Tensor logits(Shape{2, 3}, {0.0, 5.0, 0.0, 9.0, 9.0, 9.0});
    std::vector<int> gold{1, 0};
    Tensor only_first =
        label_smoothed_cross_entropy(logits, gold, {1, 0}, 0.0, Reduction::Sum, nullptr);
    Tensor first_row(Shape{1, 3}, {0.0, 5.0, 0.0});
    Tensor expect = label_smoothed_cross_entropy(first_row, {1}, {1}, 0.0, Reduction::Sum, nullptr);
    CHECK(only_first.item() == Catch::Approx(expect.item()));
    CHECK_THROWS_AS(
        label_smoothed_cross_entropy(logits, gold, {0, 0}, 0.0, Reduction::Sum, nullptr), Error);
}

TEST_CASE("cross entropy gradient is softmax minus smoothed target", "[tensor]") {
    Rng rng(3);
    Tensor logits = random_tensor({2, 5}, rng);
    std::vector<int> gold{4, 1};
    std::vector<std::uint8_t> valid{1, 1};
    const double eps = 0.1;
    Tape tape;
    Tensor loss = label_smoothed_cross_entropy(logits, gold, valid, eps, Reduction::Sum, &tape);
    tape.backward(loss);
    Tensor probs = softmax_rows(logits, nullptr);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const double q = (j == static_cast<std::size_t>(gold[i]) ? 1.0 - eps : 0.0) + eps / 5.0;
            CHECK(logits.grad()[i * 5 + j] == Catch::Approx(probs.at(i, j) - q).margin(1e-12));
        }
}

TEST_CASE("embedding lookup gathers rows and scatters gradients", "[tensor]") {
    Tensor table(Shape{4, 2}, {0, 1, 10, 11, 20, 21, 30, 31}, true);
    Tape tape;
    Tensor out = embedding_lookup(table, {2, 0, 2}, &tape);
    CHECK(out.at(0, 1) == 21.0);
    CHECK(out.at(1, 0) == 0.0);
    Tensor loss = sum(out, &tape);
    tape.backward(loss);
    // row 2 used twice, row 0 once, rows 1 and 3 never
    CHECK(table.grad()[2 * 2] == Catch::Approx(2.0));
    CHECK(table.grad()[0] == Catch::Approx(1.0));
    CHECK(table.grad()[1 * 2] == 0.0);
    CHECK(table.grad()[3 * 2] == 0.0);
    CHECK_THROWS_AS(embedding_lookup(table, {4}, nullptr), ShapeError);
    CHECK_THROWS_AS(embedding_lookup(table, {-1}, nullptr), ShapeError);
}

TEST_CASE("concat and slice are exact inverses", "[tensor]") {
    Rng rng(5);
    Tensor a = random_tensor({2, 3}, rng, false);
    Tensor b = random_tensor({4, 3}, rng, false);
    std::vector<Tensor> parts{a, b};
    Tensor cat = concat_rows(parts, nullptr);
    CHECK(cat.rows() == 6);
    CHECK(slice_rows(cat, 0, 2, nullptr).values() == a.values());
    CHECK(slice_rows(cat, 2, 6, nullptr).values() == b.values());

    Tensor c = random_tensor({2, 5}, rng, false);
    std::vector<Tensor> wide{a, c};
    Tensor side = concat_cols(wide, nullptr);
    CHECK(side.cols() == 8);
    CHECK(slice_cols(side, 0, 3, nullptr).values() == a.values());
    CHECK(slice_cols(side, 3, 8, nullptr).values() == c.values());
}

TEST_CASE("attention mask builders", "[tensor]") {
    AttnMask c = AttnMask::causal(3);
    CHECK(c.allowed_at(0, 0));
    CHECK_FALSE(c.allowed_at(0, 1));
    CHECK(c.allowed_at(2, 0));

    AttnMask bd = AttnMask::block_diagonal({2, 1});
    CHECK(bd.allowed_at(0, 1));
    CHECK_FALSE(bd.allowed_at(0, 2));
    CHECK(bd.allowed_at(2, 2));
    CHECK_FALSE(bd.allowed_at(2, 0));

    AttnMask kv = AttnMask::from_key_validity(2, {1, 0, 1});
    CHECK(kv.allowed_at(0, 0));
    CHECK_FALSE(kv.allowed_at(1, 1));
    CHECK(kv.allowed_at(1, 2));

    AttnMask both = AttnMask::causal(3);
    both.intersect(AttnMask::from_key_validity(3, {0, 1, 1}));
    CHECK_FALSE(both.allowed_at(0, 0));
    CHECK(both.allowed_at(1, 1));
    CHECK_FALSE(both.allowed_at(1, 2));
    AttnMask wrong = AttnMask::all(2, 2);
    CHECK_THROWS_AS(wrong.intersect(AttnMask::all(2, 3)), ShapeError);
}

TEST_CASE("finite differences confirm every op gradient", "[tensor][grad]") {
    Rng rng(2024);
    const double step = 1e-5;
    const double tol = 1e-4;

    SECTION("matmul chain") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        std::vector<Tensor> leaves{a, b};
        double err = grad_check(
            [&](Tape& t) { return sum(matmul(a, b, &t), &t); }, leaves, step);
        CHECK(err < tol);
    }

    SECTION("add, add_bias, mul, scale") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 3}, rng);
        Tensor bias = random_tensor({3}, rng);
        std::vector<Tensor> leaves{a, b, bias};
        double err = grad_check(
            [&](Tape& t) {
                Tensor x = add_bias(add(a, b, &t), bias, &t);
                return sum(scale(mul(x, x, &t), 0.5, &t), &t);
            },
            leaves, step);
        CHECK(err < tol);
    }

    SECTION("relu and gelu") {
        Tensor a = random_tensor({3, 3}, rng);
        std::vector<Tensor> leaves{a};
        double err = grad_check(
            [&](Tape& t) { return sum(mul(relu(a, &t), gelu(a, &t), &t), &t); }, leaves, step);
        CHECK(err < 2e-4);
    }

    SECTION("softmax and log_softmax") {
        Tensor a = random_tensor({2, 4}, rng);
        Tensor w = random_tensor({2, 4}, rng, false);
        std::vector<Tensor> leaves{a};
        double err = grad_check(
            [&](Tape& t) {
                Tensor p = mul(softmax_rows(a, &t), w, &t);
                Tensor lp = mul(log_softmax_rows(a, &t), w, &t);
                return sum(add(p, lp, &t), &t);
            },
            leaves, step);
        CHECK(err < tol);
    }

    SECTION("layer_norm") {
        Tensor a = random_tensor({3, 6}, rng);
        Tensor g = random_tensor({6}, rng);
        Tensor b = random_tensor({6}, rng);
        Tensor w = random_tensor({3, 6}, rng, false);
        std::vector<Tensor> leaves{a, g, b};
        double err = grad_check(
            [&](Tape& t) { return sum(mul(layer_norm(a, g, b, &t), w, &t), &t); }, leaves, step);
        CHECK(err < tol);
    }

    SECTION("embedding, concat, slice, transpose, reshape") {
        Tensor table = random_tensor({5, 3}, rng);
        Tensor extra = random_tensor({2, 3}, rng);
        Tensor w = random_tensor({3, 4}, rng, false);
        std::vector<Tensor> leaves{table, extra};
        double err = grad_check(
            [&](Tape& t) {
                Tensor e = embedding_lookup(table, {0, 4, 1}, &t);
                std::vector<Tensor> parts{e, extra};
                Tensor cat = concat_rows(parts, &t);
                Tensor sl = slice_rows(cat, 1, 4, &t);
                Tensor tr = transpose(sl, &t);
                Tensor rs = reshape(matmul(tr, w, &t), {12}, &t);
                return sum(mul(rs, rs, &t), &t);
            },
            leaves, step);
        CHECK(err < tol);
    }

    SECTION("masked softmax") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor w = random_tensor({2, 3}, rng, false);
        AttnMask m{2, 3, {1, 1, 0, 0, 1, 1}};
        std::vector<Tensor> leaves{a};
        double err = grad_check(
            [&](Tape& t) {
                return sum(mul(softmax_rows(masked_fill(a, m, &t), &t), w, &t), &t);
            },
            leaves, step);
        CHECK(err < tol);
    }

    SECTION("label smoothed cross entropy, mean reduction") {
        Tensor logits = random_tensor({3, 6}, rng);
        std::vector<int> gold{1, 5, 0};
        std::vector<std::uint8_t> valid{1, 0, 1};
        std::vector<Tensor> leaves{logits};
        double err = grad_check(
            [&](Tape& t) {
                return label_smoothed_cross_entropy(logits, gold, valid, 0.1, Reduction::Mean, &t);
            },
            leaves, step);
        CHECK(err < tol);
    }

    SECTION("dropout with a replayed seed") {
        Tensor a = random_tensor({3, 3}, rng);
        std::vector<Tensor> leaves{a};
        double err = grad_check(
            [&](Tape& t) {
                Rng local(99);
                return sum(dropout(a, 0.4, local, &t), &t);
            },
            leaves, step);
        CHECK(err < tol);
    }
}

TEST_CASE("grad_check rejects bad arguments", "[tensor]") {
    Tensor a(Shape{2}, {1.0, 2.0}, true);
    Tensor frozen(Shape{2}, {1.0, 2.0}, false);
    std::vector<Tensor> leaves{a};
    std::vector<Tensor> bad{frozen};
    auto f = [&](Tape& t) { return sum(a, &t); };
    CHECK_THROWS_AS(grad_check(f, leaves, 0.0), ConfigError);
    CHECK_THROWS_AS(grad_check(f, bad, 1e-5), Error);
}
