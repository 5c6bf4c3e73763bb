#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rat/error.hpp"

namespace rat {

// Joint subword vocabulary learned with byte-pair merges. Words are marked
// with a U+2581 prefix so decoding is a plain concatenation; the five special
// tokens own ids 0..4 and are never produced by encode or by a merge.
//
// Vocab file grammar (UTF-8):
//   lines 1..V   one token per line, line number - 1 = id
//   one line     "== merges =="       (tokens never contain a space)
//   lines        "<left> <right>"     merge rules in training order
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kUnk = 4;
    static constexpr int kNumSpecials = 5;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::pair<std::string, std::string>> merges;

    std::size_t size() const { return id_to_token.size(); }

    int id(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? -1 : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_token.size())
            throw Error(concat("Vocab::token: id ", id, " out of range [0, ", id_to_token.size(), ")"));
        return id_to_token[static_cast<std::size_t>(id)];
    }
};

namespace detail {

inline const char* kWordMarker = "\xE2\x96\x81";  // U+2581
inline const char* kMergesSentinel = "== merges ==";

inline const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> s = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
    return s;
}

/// Splits a UTF-8 string into codepoint-sized chunks. Stray continuation or
/// truncated bytes fall through as single-byte chunks.
inline std::vector<std::string> utf8_chars(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if (c >= 0xF0)
            len = 4;
        else if (c >= 0xE0)
            len = 3;
        else if (c >= 0xC0)
            len = 2;
        if (i + len > s.size()) len = 1;
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

inline std::vector<std::string> whitespace_words(const std::string& line) {
    std::vector<std::string> words;
    std::istringstream in(line);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

inline void add_token(Vocab& v, const std::string& tok) {
    if (v.token_to_id.count(tok)) throw Error(concat("vocab: duplicate token '", tok, "'"));
    v.token_to_id.emplace(tok, static_cast<int>(v.id_to_token.size()));
    v.id_to_token.push_back(tok);
}

}  // namespace detail

/// Learns a merge list over the whitespace-split words of the corpus. Each
/// word is prefixed with the boundary marker before splitting to characters.
/// Merging stops at target_size or when no adjacent pair occurs twice; ties
/// pick the lexicographically smallest pair, so training is deterministic.
inline Vocab train_bpe(const std::vector<std::string>& corpus, std::size_t target_size) {
    std::map<std::string, long> word_freq;
    for (const auto& line : corpus)
        for (const auto& w : detail::whitespace_words(line)) ++word_freq[detail::kWordMarker + w];
    if (word_freq.empty()) throw ConfigError("train_bpe: corpus is empty");

    std::vector<std::vector<std::string>> words;
    std::vector<long> freqs;
    std::set<std::string> alphabet;
    for (const auto& [word, freq] : word_freq) {
        words.push_back(detail::utf8_chars(word));
        freqs.push_back(freq);
        for (const auto& ch : words.back()) alphabet.insert(ch);
    }

    const std::size_t min_size = Vocab::kNumSpecials + alphabet.size();
    if (target_size < min_size)
        throw ConfigError(concat("train_bpe: target_size ", target_size,
                                 " below minimum ", min_size,
                                 " (5 specials + ", alphabet.size(), " distinct characters)"));

    Vocab vocab;
    for (const auto& s : detail::special_tokens()) detail::add_token(vocab, s);
    for (const auto& ch : alphabet) detail::add_token(vocab, ch);

    while (vocab.size() < target_size) {
        std::map<std::pair<std::string, std::string>, long> pair_count;
        for (std::size_t wi = 0; wi < words.size(); ++wi)
            for (std::size_t i = 0; i + 1 < words[wi].size(); ++i)
                pair_count[{words[wi][i], words[wi][i + 1]}] += freqs[wi];

        long best_count = 0;
        const std::pair<std::string, std::string>* best = nullptr;
        for (const auto& [pair, count] : pair_count)
            if (count > best_count) {  // map order makes the first max the smallest pair
                best_count = count;
                best = &pair;
            }
        if (!best || best_count < 2) break;

        const std::string merged = best->first + best->second;
        vocab.merges.push_back(*best);
        detail::add_token(vocab, merged);
        for (auto& word : words) {
            std::vector<std::string> next;
            next.reserve(word.size());
            for (std::size_t i = 0; i < word.size(); ++i) {
                if (i + 1 < word.size() && word[i] == best->first && word[i + 1] == best->second) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(word[i]);
                }
            }
            word = std::move(next);
        }
    }
    return vocab;
}

/// Text to ids. Characters outside the vocabulary become UNK and block merges
/// across themselves. Never emits a special id other than UNK.
inline std::vector<int> encode(const Vocab& vocab, const std::string& text) {
    std::vector<int> out;
    for (const auto& w : detail::whitespace_words(text)) {
        std::vector<std::string> symbols = detail::utf8_chars(detail::kWordMarker + w);
        // Unknown characters are collapsed to a placeholder no merge matches.
        for (auto& s : symbols)
            if (vocab.id(s) < 0) s.clear();
        for (const auto& [left, right] : vocab.merges) {
            std::vector<std::string> next;
            next.reserve(symbols.size());
            for (std::size_t i = 0; i < symbols.size(); ++i) {
                if (i + 1 < symbols.size() && !symbols[i].empty() && symbols[i] == left &&
                    symbols[i + 1] == right) {
                    next.push_back(left + right);
                    ++i;
                } else {
                    next.push_back(symbols[i]);
                }
            }
            symbols = std::move(next);
        }
        for (const auto& s : symbols) out.push_back(s.empty() ? Vocab::kUnk : vocab.id(s));
    }
    return out;
}

/// Encoder-side sequence: subword ids capped to leave room for the trailing
/// EOS within max_len.
inline std::vector<int> encode_with_eos(const Vocab& vocab, const std::string& text,
                                        std::size_t max_len) {
    if (max_len < 2) throw ConfigError("encode_with_eos: max_len must be >= 2");
    std::vector<int> ids = encode(vocab, text);
    if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
    ids.push_back(Vocab::kEos);
    return ids;
}

/// Ids to text. Specials are stripped; the boundary marker becomes a space.
inline std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
    std::string joined;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
            throw Error(concat("decode: id ", id, " out of range [0, ", vocab.size(), ")"));
        if (id < Vocab::kNumSpecials) continue;
        joined += vocab.id_to_token[static_cast<std::size_t>(id)];
    }
    std::string out;
    const std::string marker = detail::kWordMarker;
    std::size_t i = 0;
    while (i < joined.size()) {
        if (joined.compare(i, marker.size(), marker) == 0) {
            if (!out.empty()) out += ' ';
            i += marker.size();
        } else {
            out += joined[i];
            ++i;
        }
    }
    return out;
}

inline void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(concat("save_vocab: cannot open ", path));
    for (const auto& tok : vocab.id_to_token) out << tok << '\n';
    out << detail::kMergesSentinel << '\n';
    for (const auto& [left, right] : vocab.merges) out << left << ' ' << right << '\n';
    if (!out) throw IoError(concat("save_vocab: write failed for ", path));
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("load_vocab: cannot open ", path));
    Vocab vocab;
    std::string line;
    bool saw_sentinel = false;
    while (std::getline(in, line)) {
        if (line == detail::kMergesSentinel) {
            saw_sentinel = true;
            break;
        }
        detail::add_token(vocab, line);
    }
    if (!saw_sentinel) throw IoError(concat("load_vocab: ", path, " has no merges section"));
    const auto& specials = detail::special_tokens();
    if (vocab.size() < specials.size())
        throw IoError(concat("load_vocab: ", path, " is missing the special tokens"));
    for (std::size_t i = 0; i < specials.size(); ++i)
        if (vocab.id_to_token[i] != specials[i])
            throw IoError(concat("load_vocab: id ", i, " is '", vocab.id_to_token[i],
                                 "', expected '", specials[i], "'"));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos)
            throw IoError(concat("load_vocab: malformed merge line '", line, "'"));
        std::string left = line.substr(0, space);
        std::string right = line.substr(space + 1);
        if (vocab.id(left) < 0 || vocab.id(right) < 0 || vocab.id(left + right) < 0)
            throw IoError(concat("load_vocab: merge '", line, "' references unknown tokens"));
        vocab.merges.emplace_back(std::move(left), std::move(right));
    }
    return vocab;
}

}  // namespace rat
