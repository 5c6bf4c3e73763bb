#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "rat/tokenizer.hpp"

using namespace rat;

namespace {
const char* kMarker = "\xE2\x96\x81";
}

TEST_CASE("most frequent pair merges first", "[tokenizer]") {
    Vocab v = train_bpe({"ab", "ab", "ab"}, 64);
    CHECK(v.id("ab") >= 0);
    CHECK(v.id(std::string(kMarker) + "ab") >= 0);
    REQUIRE_FALSE(v.merges.empty());
    // ("a","b") and (marker,"a") tie at count 3; "a" sorts before the marker.
    CHECK(v.merges[0].first == "a");
    CHECK(v.merges[0].second == "b");
}

TEST_CASE("tied pair counts resolve to the lexicographically smallest pair", "[tokenizer]") {
    Vocab v = train_bpe({"xy", "xy", "xz", "xz"}, 64);
    REQUIRE(v.merges.size() >= 2);
    CHECK(v.merges[0] == std::make_pair(std::string(kMarker), std::string("x")));
    CHECK(v.merges[1] == std::make_pair(std::string(kMarker) + "x", std::string("y")));
}

TEST_CASE("exact minimum budget trains zero merges", "[tokenizer]") {
    // distinct characters: marker, a, b
    Vocab v = train_bpe({"ab"}, 5 + 3);
    CHECK(v.size() == 8);
    CHECK(v.merges.empty());
}

TEST_CASE("training rejects empty corpus and undersized budget", "[tokenizer]") {
    CHECK_THROWS_AS(train_bpe({}, 100), ConfigError);
    CHECK_THROWS_AS(train_bpe({"   "}, 100), ConfigError);
    try {
        train_bpe({"ab"}, 7);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find('8') != std::string::npos);
    }
}

TEST_CASE("encode/decode round-trips corpus text", "[tokenizer]") {
    std::vector<std::string> corpus = {"the cat sat", "the dog sat", "a cat and a dog"};
    Vocab v = train_bpe(corpus, 64);
    for (const auto& line : corpus) CHECK(decode(v, encode(v, line)) == line);
    CHECK(decode(v, encode(v, "the cat sat")) == "the cat sat");
    CHECK(decode(v, encode(v, "dog and cat")) == "dog and cat");
}

TEST_CASE("unknown characters map to UNK", "[tokenizer]") {
    Vocab v = train_bpe({"abc abc"}, 32);
    auto ids = encode(v, "abz");
    REQUIRE_FALSE(ids.empty());
    CHECK(std::count(ids.begin(), ids.end(), Vocab::kUnk) == 1);
}

TEST_CASE("encode never emits structural specials", "[tokenizer]") {
    std::vector<std::string> corpus = {"ratio nation station", "the rat sat on the mat"};
    Vocab v = train_bpe(corpus, 48);
    for (const auto& line : corpus)
        for (int id : encode(v, line)) {
            CHECK(id != Vocab::kPad);
            CHECK(id != Vocab::kBos);
            CHECK(id != Vocab::kEos);
            CHECK(id != Vocab::kSep);
        }
}

TEST_CASE("decode strips specials and validates ids", "[tokenizer]") {
    Vocab v = train_bpe({"hi"}, 16);
    CHECK(decode(v, {Vocab::kBos, Vocab::kEos}) == "");
    auto ids = encode(v, "hi");
    ids.insert(ids.begin(), Vocab::kBos);
    ids.push_back(Vocab::kEos);
    CHECK(decode(v, ids) == "hi");
    CHECK_THROWS_AS(decode(v, {static_cast<int>(v.size())}), Error);
    CHECK_THROWS_AS(decode(v, {-1}), Error);
}

TEST_CASE("training is deterministic", "[tokenizer]") {
    std::vector<std::string> corpus = {"low lower lowest", "new newer newest", "wide wider widest"};
    Vocab a = train_bpe(corpus, 80);
    Vocab b = train_bpe(corpus, 80);
    CHECK(a.id_to_token == b.id_to_token);
    CHECK(a.merges == b.merges);
}

TEST_CASE("vocab file round-trips", "[tokenizer]") {
    std::vector<std::string> corpus = {"abra cadabra", "abra abra"};
    Vocab v = train_bpe(corpus, 40);
    const std::string path = "vocab_roundtrip_test.txt";
    save_vocab(v, path);
    Vocab loaded = load_vocab(path);
    CHECK(loaded.id_to_token == v.id_to_token);
    CHECK(loaded.merges == v.merges);
    CHECK(encode(loaded, "cadabra") == encode(v, "cadabra"));
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_vocab("no_such_vocab_file.txt"), IoError);
}
