#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rat/synthetic.hpp"
#include "rat/training.hpp"

namespace {

std::vector<std::string> split_words(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

}  // namespace

TEST_CASE("keyed-translation corpus shape", "[synthetic]") {
    rat::SyntheticConfig cfg;
    cfg.train_pairs = 400;
    cfg.test_sentences = 50;
    cfg.seed = 11;
    auto data = rat::make_synthetic(cfg);

    SECTION("lexicons are disjoint and sized as configured") {
        REQUIRE(data.source_lexicon.size() == cfg.source_words);
        REQUIRE(data.dialect_tables.size() == cfg.dialects);
        std::set<std::string> all(data.source_lexicon.begin(), data.source_lexicon.end());
        for (const auto& table : data.dialect_tables) {
            REQUIRE(table.size() == cfg.source_words);
            all.insert(table.begin(), table.end());
        }
        CHECK(all.size() == cfg.source_words * (1 + cfg.dialects));
    }
    SECTION("train pairs are twins with distinct sources across pairs") {
        REQUIRE(data.train.entries.size() == cfg.train_pairs);
        std::set<std::string> sources;
        for (std::size_t i = 0; i < cfg.train_pairs; i += 2) {
            const auto& a = data.train.entries[i];
            const auto& b = data.train.entries[i + 1];
            CHECK(a.source == b.source);
            CHECK(a.target == b.target);
            CHECK(a.id == static_cast<int>(i));
            CHECK(b.id == static_cast<int>(i + 1));
            sources.insert(a.source);
            const auto words = split_words(a.source);
            CHECK(words.size() >= cfg.len_min);
            CHECK(words.size() <= cfg.len_max);
        }
        CHECK(sources.size() == cfg.train_pairs / 2);
    }
    SECTION("each target is rendered wholly in one dialect") {
        std::vector<std::set<std::string>> tables;
        for (const auto& t : data.dialect_tables) tables.emplace_back(t.begin(), t.end());
        auto single_dialect = [&](const std::string& target) {
            const auto words = split_words(target);
            for (const auto& table : tables)
                if (std::all_of(words.begin(), words.end(),
                                [&](const std::string& w) { return table.count(w) > 0; }))
                    return true;
            return false;
        };
        for (const auto& entry : data.train.entries) CHECK(single_dialect(entry.target));
        for (const auto& ref : data.test_references) CHECK(single_dialect(ref));
    }
    SECTION("all dialects actually occur") {
        std::set<std::size_t> used;
        for (const auto& entry : data.train.entries) {
            const auto first = split_words(entry.target)[0];
            for (std::size_t d = 0; d < data.dialect_tables.size(); ++d) {
                const auto& t = data.dialect_tables[d];
                if (std::find(t.begin(), t.end(), first) != t.end()) used.insert(d);
            }
        }
        CHECK(used.size() == cfg.dialects);
    }
    SECTION("test sources are unseen and planted entries carry the reference") {
        REQUIRE(data.test_sources.size() == cfg.test_sentences);
        REQUIRE(data.test_references.size() == cfg.test_sentences);
        REQUIRE(data.planted_entry_id.size() == cfg.test_sentences);
        std::set<std::string> train_sources;
        for (const auto& entry : data.train.entries) train_sources.insert(entry.source);
        for (std::size_t j = 0; j < cfg.test_sentences; ++j) {
            CHECK(train_sources.count(data.test_sources[j]) == 0);
            REQUIRE(data.planted_entry_id[j] >= 0);
            const auto& planted =
                data.test_tm.entries[static_cast<std::size_t>(data.planted_entry_id[j])];
            CHECK(planted.source == data.test_sources[j]);
            CHECK(planted.target == data.test_references[j]);
        }
    }
    SECTION("distractors are near misses in another dialect") {
        REQUIRE(data.test_tm.entries.size() ==
                cfg.train_pairs + cfg.test_sentences * (1 + cfg.distractors));
        for (std::size_t j = 0; j < cfg.test_sentences; ++j) {
            REQUIRE(data.distractor_entry_ids[j].size() == cfg.distractors);
            const auto src_words = split_words(data.test_sources[j]);
            for (int id : data.distractor_entry_ids[j]) {
                const auto& entry = data.test_tm.entries[static_cast<std::size_t>(id)];
                CHECK(entry.source != data.test_sources[j]);
                const auto words = split_words(entry.source);
                REQUIRE(words.size() == src_words.size());
                std::size_t differing = 0;
                for (std::size_t w = 0; w < words.size(); ++w)
                    if (words[w] != src_words[w]) ++differing;
                CHECK(differing >= 1);
                CHECK(differing <= 2);
                CHECK(entry.target != data.test_references[j]);
            }
        }
    }
    SECTION("same seed reproduces the corpus exactly") {
        auto again = rat::make_synthetic(cfg);
        REQUIRE(again.train.entries.size() == data.train.entries.size());
        for (std::size_t i = 0; i < data.train.entries.size(); ++i) {
            CHECK(again.train.entries[i].source == data.train.entries[i].source);
            CHECK(again.train.entries[i].target == data.train.entries[i].target);
        }
        CHECK(again.test_sources == data.test_sources);
        CHECK(again.test_references == data.test_references);
        CHECK(again.planted_entry_id == data.planted_entry_id);
    }
}

TEST_CASE("planted answers dominate retrieval", "[synthetic]") {
    rat::SyntheticConfig cfg;
    cfg.train_pairs = 400;
    cfg.test_sentences = 40;
    cfg.seed = 5;
    auto data = rat::make_synthetic(cfg);
    auto index = rat::build_index(data.test_tm);

    for (std::size_t j = 0; j < cfg.test_sentences; ++j) {
        auto matches = rat::retrieve(index, data.test_tm, data.test_sources[j], 3);
        REQUIRE(!matches.matches.empty());
        CHECK(matches.matches[0].entry_id == data.planted_entry_id[j]);
        CHECK(matches.matches[0].target_text == data.test_references[j]);
    }
}

TEST_CASE("training stream retrieves the twin's gold target", "[synthetic]") {
    rat::SyntheticConfig cfg;
    cfg.train_pairs = 200;
    cfg.test_sentences = 1;
    cfg.seed = 7;
    auto data = rat::make_synthetic(cfg);

    std::vector<std::string> lines;
    for (const auto& entry : data.train.entries) {
        lines.push_back(entry.source);
        lines.push_back(entry.target);
    }
    auto vocab = rat::train_bpe(lines, 260);
    auto index = rat::build_index(data.train);
    auto examples = rat::resolve_examples(data.train, data.train, index, vocab, 3, true, 64);

    REQUIRE(examples.size() == cfg.train_pairs);
    for (const auto& ex : examples) {
        const int twin = ex.entry_id ^ 1;
        REQUIRE(!ex.match_ids.empty());
        CHECK(std::find(ex.match_ids.begin(), ex.match_ids.end(), twin) != ex.match_ids.end());
        CHECK(std::find(ex.match_ids.begin(), ex.match_ids.end(), ex.entry_id) ==
              ex.match_ids.end());
    }
    std::size_t twin_first = 0;
    for (const auto& ex : examples)
        if (ex.match_ids[0] == (ex.entry_id ^ 1)) ++twin_first;
    CHECK(twin_first >= examples.size() * 95 / 100);
}

TEST_CASE("generator configuration is validated", "[synthetic]") {
    rat::SyntheticConfig cfg;
    cfg.train_pairs = 3;
    CHECK_THROWS_AS(rat::make_synthetic(cfg), rat::ConfigError);
    cfg.train_pairs = 4;
    cfg.plant_rate = 1.5;
    CHECK_THROWS_AS(rat::make_synthetic(cfg), rat::ConfigError);
    cfg.plant_rate = 0.0;
    cfg.test_sentences = 10;
    auto data = rat::make_synthetic(cfg);
    for (int id : data.planted_entry_id) CHECK(id == -1);
    CHECK(data.test_tm.entries.size() == 4 + 10 * cfg.distractors);

    cfg.len_min = 1;
    cfg.len_max = 1;
    cfg.source_words = 2;
    cfg.train_pairs = 10;  // only two distinct one-word sentences exist
    CHECK_THROWS_AS(rat::make_synthetic(cfg), rat::ConfigError);
}
