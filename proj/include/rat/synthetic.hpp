#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "rat/error.hpp"
#include "rat/retriever.hpp"
#include "rat/rng.hpp"

namespace rat {

/// Keyed-translation corpus generator. Source sentences are random words
/// from a small lexicon; each sentence is rendered word-by-word into one of
/// several "dialects" with mutually disjoint target vocabularies. The
/// dialect is sampled per sentence and never marked in the source, so a
/// model conditioned on the source alone cannot beat chance dialect
/// accuracy, while the correct rendering is always present in the TM:
///
///   - every train pair appears twice, and self-excluded retrieval returns
///     the twin (an exact source match whose target is the gold answer);
///   - every test sentence gets a planted TM entry with the exact source
///     and the reference as target, plus near-miss distractors (a few words
///     swapped, rendered in a different dialect).
///
/// With the defaults there are 48 * (1 + 3) = 192 distinct word types.
struct SyntheticConfig {
    std::size_t source_words = 48;
    std::size_t dialects = 3;
    std::size_t len_min = 4;
    std::size_t len_max = 8;
    std::size_t train_pairs = 5000;  // must be even: pairs are generated as twins
    std::size_t test_sentences = 500;
    std::size_t distractors = 2;  // near-miss TM entries per test sentence
    double plant_rate = 1.0;      // probability a test sentence's answer enters the TM
    std::uint64_t seed = 1;

    void validate() const {
        if (source_words < 2) throw ConfigError("synthetic: source_words must be >= 2");
        if (dialects == 0) throw ConfigError("synthetic: dialects must be >= 1");
        if (len_min == 0) throw ConfigError("synthetic: len_min must be >= 1");
        if (len_max < len_min) throw ConfigError("synthetic: len_max must be >= len_min");
        if (train_pairs < 2 || train_pairs % 2 != 0)
            throw ConfigError("synthetic: train_pairs must be even and >= 2");
        if (test_sentences == 0) throw ConfigError("synthetic: test_sentences must be >= 1");
        if (plant_rate < 0.0 || plant_rate > 1.0)
            throw ConfigError("synthetic: plant_rate must be in [0, 1]");
    }
};

struct SyntheticData {
    std::vector<std::string> source_lexicon;
    std::vector<std::vector<std::string>> dialect_tables;  // [dialect][source word index]

    TranslationMemory train;    // twin pairs at ids (2i, 2i+1)
    TranslationMemory test_tm;  // train entries plus planted answers and distractors

    std::vector<std::string> test_sources;
    std::vector<std::string> test_references;
    std::vector<int> planted_entry_id;                 // per test sentence; -1 when not planted
    std::vector<std::vector<int>> distractor_entry_ids;  // per test sentence
};

namespace detail {

/// Enumerates distinct CVCV word shapes: 14 consonants x 5 vowels give 70
/// syllables and 4900 two-syllable words.
inline std::vector<std::string> word_pool(std::size_t n) {
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    const std::size_t syllables = consonants.size() * vowels.size();
    if (n > syllables * syllables)
        throw ConfigError(concat("synthetic: lexicon needs ", n, " words, pool has ",
                                 syllables * syllables));
    std::vector<std::string> pool;
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = i / syllables, b = i % syllables;
        std::string w;
        w += consonants[a / vowels.size()];
        w += vowels[a % vowels.size()];
        w += consonants[b / vowels.size()];
        w += vowels[b % vowels.size()];
        pool.push_back(std::move(w));
    }
    return pool;
}

inline std::string join_words(const std::vector<std::size_t>& idx,
                              const std::vector<std::string>& table) {
    std::string out;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (i) out += ' ';
        out += table[idx[i]];
    }
    return out;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticData data;

    auto pool = detail::word_pool(cfg.source_words * (1 + cfg.dialects));
    auto next = pool.begin();
    data.source_lexicon.assign(next, next + static_cast<std::ptrdiff_t>(cfg.source_words));
    next += static_cast<std::ptrdiff_t>(cfg.source_words);
    for (std::size_t d = 0; d < cfg.dialects; ++d) {
        data.dialect_tables.emplace_back(next,
                                         next + static_cast<std::ptrdiff_t>(cfg.source_words));
        next += static_cast<std::ptrdiff_t>(cfg.source_words);
    }

    Rng rng(cfg.seed);
    std::set<std::string> seen;
    const auto fresh_sentence = [&] {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<std::size_t> idx(cfg.len_min +
                                         rng.below(cfg.len_max - cfg.len_min + 1));
            for (auto& w : idx) w = rng.below(cfg.source_words);
            if (seen.insert(detail::join_words(idx, data.source_lexicon)).second) return idx;
        }
        throw ConfigError("synthetic: lexicon too small for the requested distinct sentences");
    };

    for (std::size_t i = 0; i < cfg.train_pairs / 2; ++i) {
        const auto idx = fresh_sentence();
        const std::size_t d = rng.below(cfg.dialects);
        const std::string src = detail::join_words(idx, data.source_lexicon);
        const std::string tgt = detail::join_words(idx, data.dialect_tables[d]);
        data.train.entries.push_back({static_cast<int>(2 * i), src, tgt});
        data.train.entries.push_back({static_cast<int>(2 * i + 1), src, tgt});
    }

    data.test_tm = data.train;
    int next_id = static_cast<int>(data.test_tm.entries.size());
    for (std::size_t j = 0; j < cfg.test_sentences; ++j) {
        const auto idx = fresh_sentence();
        const std::size_t d = rng.below(cfg.dialects);
        data.test_sources.push_back(detail::join_words(idx, data.source_lexicon));
        data.test_references.push_back(detail::join_words(idx, data.dialect_tables[d]));

        if (rng.bernoulli(cfg.plant_rate)) {
            data.planted_entry_id.push_back(next_id);
            data.test_tm.entries.push_back(
                {next_id++, data.test_sources.back(), data.test_references.back()});
        } else {
            data.planted_entry_id.push_back(-1);
        }

        data.distractor_entry_ids.emplace_back();
        for (std::size_t m = 0; m < cfg.distractors; ++m) {
            auto perturbed = idx;
            const std::size_t swaps = std::min(1 + rng.below(2), perturbed.size());
            std::vector<std::size_t> positions(perturbed.size());
            for (std::size_t p = 0; p < positions.size(); ++p) positions[p] = p;
            rng.shuffle(positions);
            for (std::size_t s = 0; s < swaps; ++s) {
                const std::size_t pos = positions[s];
                std::size_t w = rng.below(cfg.source_words);
                while (w == idx[pos]) w = rng.below(cfg.source_words);
                perturbed[pos] = w;
            }
            std::size_t other = rng.below(cfg.dialects);
            while (cfg.dialects > 1 && other == d) other = rng.below(cfg.dialects);
            data.distractor_entry_ids.back().push_back(next_id);
            data.test_tm.entries.push_back({next_id++,
                                            detail::join_words(perturbed, data.source_lexicon),
                                            detail::join_words(perturbed,
                                                               data.dialect_tables[other])});
        }
    }
    return data;
}

}  // namespace rat
