#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rat/evaluation.hpp"
#include "rat/rng.hpp"

using namespace rat;

TEST_CASE("13a tokenization follows the mteval rules", "[evaluation]") {
    CHECK(tokenize_13a("Hello, world!") == std::vector<std::string>{"Hello", ",", "world", "!"});
    CHECK(tokenize_13a("a b c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(tokenize_13a("").empty());
    // digits keep separators, apostrophes stay attached, case preserved
    CHECK(tokenize_13a("1,000 or 3.14") == std::vector<std::string>{"1,000", "or", "3.14"});
    CHECK(tokenize_13a("It's Fine") == std::vector<std::string>{"It's", "Fine"});
    CHECK(tokenize_13a("5-year re-run") == std::vector<std::string>{"5", "-", "year", "re-run"});
    CHECK(tokenize_13a("a&quot;b &amp; c") == std::vector<std::string>{"a", "\"", "b", "&", "c"});
    CHECK(tokenize_13a("end. next") == std::vector<std::string>{"end", ".", "next"});
    CHECK(tokenize_13a("(x) [y] {z}") ==
          std::vector<std::string>{"(", "x", ")", "[", "y", "]", "{", "z", "}"});
    CHECK(tokenize_13a("naïve café") == std::vector<std::string>{"naïve", "café"});
}

TEST_CASE("corpus bleu matches hand-derived anchors", "[evaluation]") {
    BleuReport identity = corpus_bleu({"a b c d"}, {"a b c d"});
    CHECK(identity.score == Catch::Approx(100.0));
    CHECK(identity.brevity_penalty == 1.0);

    BleuReport worked = corpus_bleu({"a b c e"}, {"a b c d"});
    CHECK(worked.score == Catch::Approx(59.46).margin(0.02));
    CHECK(worked.precisions[0] == Catch::Approx(75.0));
    CHECK(worked.precisions[1] == Catch::Approx(100.0 * 2.0 / 3.0));
    CHECK(worked.precisions[2] == Catch::Approx(50.0));
    CHECK(worked.precisions[3] == Catch::Approx(50.0));  // smoothed 1/2 over 1 total
    CHECK(worked.hyp_len == 4);
    CHECK(worked.ref_len == 4);

    BleuReport short_hyp = corpus_bleu({"a b c d"}, {"a b c d e f g h"});
    CHECK(short_hyp.brevity_penalty == Catch::Approx(std::exp(-1.0)));
    CHECK(short_hyp.score == Catch::Approx(100.0 * std::exp(-1.0)).margin(1e-9));

    CHECK_THROWS_AS(corpus_bleu({"a"}, {"a", "b"}), ConfigError);
    CHECK_THROWS_AS(corpus_bleu({}, {}), ConfigError);
}

TEST_CASE("corpus bleu is permutation invariant and monotone under perfect pairs",
          "[evaluation][property]") {
    std::vector<std::string> hyps = {"the cat sat", "a dog ran fast", "hello there world",
                                     "numbers 1,000 here", "it's done."};
    std::vector<std::string> refs = {"the cat sat down", "a dog ran", "hello world",
                                     "numbers 1,000 there", "it's done now."};
    const double base = corpus_bleu(hyps, refs).score;

    Rng rng(9);
    for (int t = 0; t < 5; ++t) {
        std::vector<std::size_t> perm(hyps.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<std::string> ph, pr;
        for (auto i : perm) {
            ph.push_back(hyps[i]);
            pr.push_back(refs[i]);
        }
        CHECK(corpus_bleu(ph, pr).score == base);
    }

    std::vector<std::string> hyps2 = hyps, refs2 = refs;
    hyps2.push_back("a perfectly matched sentence pair");
    refs2.push_back("a perfectly matched sentence pair");
    CHECK(corpus_bleu(hyps2, refs2).score >= base);
}

TEST_CASE("corpus bleu agrees with the frozen reference fixtures", "[evaluation][oracle]") {
    std::ifstream in(std::string(RAT_TESTS_DATA_DIR) + "/bleu_cases.json");
    REQUIRE(in.good());
    nlohmann::json doc = nlohmann::json::parse(in);
    REQUIRE(doc["cases"].size() == 100);
    double max_diff = 0.0;
    for (const auto& c : doc["cases"]) {
        std::vector<std::string> hyps = c["hyps"].get<std::vector<std::string>>();
        std::vector<std::string> refs = c["refs"].get<std::vector<std::string>>();
        const double want = c["bleu"].get<double>();
        const double got = corpus_bleu(hyps, refs).score;
        max_diff = std::max(max_diff, std::abs(got - want));
        CHECK(got == Catch::Approx(want).margin(0.01));
    }
    INFO("max |ours - reference| = " << max_diff);
    CHECK(max_diff < 0.01);
}

TEST_CASE("paired bootstrap behaves at the extremes", "[evaluation]") {
    std::vector<std::string> refs;
    for (int i = 0; i < 50; ++i)
        refs.push_back("sentence number " + std::to_string(i) + " with several shared words");

    SECTION("identical systems always tie") {
        SignificanceResult r = paired_bootstrap(refs, refs, refs, 200, 0.05, 1);
        CHECK(r.p_value == 1.0);
        CHECK_FALSE(r.significant);
        CHECK(r.ties == 200);
        CHECK(r.wins_a + r.wins_b + r.ties == r.n_resamples);
    }

    SECTION("perfect system beats reversed-token garbage") {
        std::vector<std::string> garbage;
        for (const auto& ref : refs) {
            auto toks = tokenize_13a(ref);
            std::reverse(toks.begin(), toks.end());
            std::string joined;
            for (const auto& t : toks) joined += joined.empty() ? t : " " + t;
            garbage.push_back("zz " + joined + " qq");
        }
        SignificanceResult r = paired_bootstrap(refs, garbage, refs, 300, 0.05, 7);
        CHECK(r.p_value == 0.0);
        CHECK(r.significant);
        CHECK(r.wins_a == 300);
    }

    SECTION("same seed reproduces the result exactly") {
        std::vector<std::string> hyps_b = refs;
        for (std::size_t i = 0; i < hyps_b.size(); i += 3) hyps_b[i] += " extra noise token";
        SignificanceResult r1 = paired_bootstrap(refs, hyps_b, refs, 500, 0.05, 42);
        SignificanceResult r2 = paired_bootstrap(refs, hyps_b, refs, 500, 0.05, 42);
        CHECK(r1.p_value == r2.p_value);
        CHECK(r1.wins_a == r2.wins_a);
        CHECK(r1.wins_b == r2.wins_b);
        CHECK(r1.ties == r2.ties);
        SignificanceResult r3 = paired_bootstrap(refs, hyps_b, refs, 500, 0.05, 43);
        CHECK((r3.wins_a != r1.wins_a || r3.ties != r1.ties || r3.p_value == r1.p_value));
    }

    SECTION("input validation") {
        std::vector<std::string> shorter(refs.begin(), refs.end() - 1);
        CHECK_THROWS_AS(paired_bootstrap(shorter, refs, refs, 10, 0.05, 1), ConfigError);
        CHECK_THROWS_AS(paired_bootstrap(refs, refs, refs, 0, 0.05, 1), ConfigError);
    }
}
