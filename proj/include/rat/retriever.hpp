#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rat/error.hpp"
#include "rat/io.hpp"

namespace rat {

struct TmEntry {
    int id = 0;
    std::string source;
    std::string target;
};

struct TranslationMemory {
    std::vector<TmEntry> entries;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Inverted index over the source sides of a translation memory.
struct TmIndex {
    Bm25Params params;
    std::uint64_t n_docs = 0;
    double avgdl = 0.0;
    std::vector<std::uint64_t> doc_lengths;
    // term -> (entry_id, term frequency), postings sorted by entry_id
    std::map<std::string, std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings;
};

struct FuzzyMatch {
    int entry_id = 0;
    double score = 0.0;
    std::string target_text;
};

struct FuzzyMatchSet {
    std::vector<FuzzyMatch> matches;  // descending score, ties by ascending entry_id
    std::size_t k_requested = 0;
};

/// Lexical-match tokenization: lowercase, alphanumeric runs only. Bytes
/// outside ASCII count as word characters so UTF-8 text stays intact.
inline std::vector<std::string> retrieval_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        const bool word = c >= 0x80 || std::isalnum(c);
        if (word) {
            cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline TmIndex build_index(const TranslationMemory& tm, Bm25Params params = {}) {
    if (tm.entries.empty()) throw ConfigError("build_index: translation memory is empty");
    TmIndex index;
    index.params = params;
    index.n_docs = tm.entries.size();
    index.doc_lengths.resize(tm.entries.size());
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < tm.entries.size(); ++i) {
        const auto tokens = retrieval_tokens(tm.entries[i].source);
        index.doc_lengths[i] = tokens.size();
        total += tokens.size();
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : tokens) ++tf[t];
        for (const auto& [term, count] : tf)
            index.postings[term].emplace_back(static_cast<std::uint32_t>(i), count);
    }
    index.avgdl = index.n_docs ? static_cast<double>(total) / static_cast<double>(index.n_docs) : 0.0;
    return index;
}

namespace detail {

inline double bm25_idf(const TmIndex& index, std::size_t n_t) {
    const double n = static_cast<double>(index.n_docs);
    const double nt = static_cast<double>(n_t);
    return std::log(1.0 + (n - nt + 0.5) / (nt + 0.5));
}

inline double bm25_term(const TmIndex& index, double idf, std::uint32_t tf, std::uint64_t doc_len) {
    const double f = static_cast<double>(tf);
    const auto [k1, b] = index.params;
    const double norm = k1 * (1.0 - b + b * static_cast<double>(doc_len) / index.avgdl);
    return idf * f * (k1 + 1.0) / (f + norm);
}

}  // namespace detail

/// Okapi BM25 with the non-negative ln(1 + .) IDF. Terms are scored in query
/// order and duplicated query terms contribute once per occurrence.
inline double bm25_score(const TmIndex& index, const std::vector<std::string>& query_terms,
                         int entry_id) {
    if (entry_id < 0 || static_cast<std::uint64_t>(entry_id) >= index.n_docs)
        throw Error(concat("bm25_score: entry_id ", entry_id, " out of range [0, ", index.n_docs, ")"));
    const auto id = static_cast<std::uint32_t>(entry_id);
    double score = 0.0;
    for (const auto& term : query_terms) {
        const auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const auto& plist = it->second;
        const auto pos = std::lower_bound(plist.begin(), plist.end(), id,
                                          [](const auto& p, std::uint32_t v) { return p.first < v; });
        if (pos == plist.end() || pos->first != id) continue;
        score += detail::bm25_term(index, detail::bm25_idf(index, plist.size()), pos->second,
                                   index.doc_lengths[id]);
    }
    return score;
}

/// Top-k fuzzy matches for a query. Accumulates term-at-a-time in query
/// order, so every per-entry sum matches bm25_score bit for bit. Zero-score
/// entries are dropped; exclude_id removes one entry outright.
inline FuzzyMatchSet retrieve(const TmIndex& index, const TranslationMemory& tm,
                              const std::string& query_text, std::size_t k,
                              std::optional<int> exclude_id = std::nullopt) {
    if (tm.entries.size() != index.n_docs)
        throw ConfigError(concat("retrieve: index covers ", index.n_docs, " entries but TM has ",
                                 tm.entries.size()));
    FuzzyMatchSet result;
    result.k_requested = k;
    if (k == 0) return result;

    std::vector<double> scores(index.n_docs, 0.0);
    for (const auto& term : retrieval_tokens(query_text)) {
        const auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const double idf = detail::bm25_idf(index, it->second.size());
        for (const auto& [entry, tf] : it->second)
            scores[entry] += detail::bm25_term(index, idf, tf, index.doc_lengths[entry]);
    }

    std::vector<std::uint32_t> candidates;
    for (std::uint32_t i = 0; i < scores.size(); ++i) {
        if (scores[i] <= 0.0) continue;
        if (exclude_id && static_cast<std::uint32_t>(*exclude_id) == i) continue;
        candidates.push_back(i);
    }
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [&scores](std::uint32_t a, std::uint32_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    candidates.resize(take);
    for (auto id : candidates)
        result.matches.push_back({static_cast<int>(id), scores[id], tm.entries[id].target});
    return result;
}

// ---------------------------------------------------------------------------
// Translation memory files: either one TSV ("source<TAB>target" per line) or
// two aligned one-sentence-per-line files.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

inline TranslationMemory load_tm_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("load_tm_tsv: cannot open ", path));
    TranslationMemory tm;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError(concat("load_tm_tsv: ", path, ":", lineno, ": missing tab separator"));
        TmEntry e;
        e.id = static_cast<int>(tm.entries.size());
        e.source = detail::trim(line.substr(0, tab));
        e.target = detail::trim(line.substr(tab + 1));
        if (e.source.empty() || e.target.empty())
            throw IoError(concat("load_tm_tsv: ", path, ":", lineno, ": empty source or target"));
        tm.entries.push_back(std::move(e));
    }
    return tm;
}

inline void save_tm_tsv(const TranslationMemory& tm, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(concat("save_tm_tsv: cannot open ", path));
    for (const auto& e : tm.entries) out << e.source << '\t' << e.target << '\n';
    if (!out) throw IoError(concat("save_tm_tsv: write failed for ", path));
}

inline TranslationMemory load_tm_pair(const std::string& source_path, const std::string& target_path) {
    std::ifstream src(source_path, std::ios::binary);
    if (!src) throw IoError(concat("load_tm_pair: cannot open ", source_path));
    std::ifstream tgt(target_path, std::ios::binary);
    if (!tgt) throw IoError(concat("load_tm_pair: cannot open ", target_path));
    TranslationMemory tm;
    std::string sline, tline;
    std::size_t lineno = 0;
    while (true) {
        const bool got_s = static_cast<bool>(std::getline(src, sline));
        const bool got_t = static_cast<bool>(std::getline(tgt, tline));
        if (!got_s && !got_t) break;
        ++lineno;
        if (got_s != got_t)
            throw IoError(concat("load_tm_pair: ", source_path, " and ", target_path,
                                 " have different line counts"));
        TmEntry e;
        e.id = static_cast<int>(tm.entries.size());
        e.source = detail::trim(sline);
        e.target = detail::trim(tline);
        if (e.source.empty() || e.target.empty())
            throw IoError(concat("load_tm_pair: line ", lineno, ": empty source or target"));
        tm.entries.push_back(std::move(e));
    }
    return tm;
}

// ---------------------------------------------------------------------------
// Index persistence: magic, params, lengths, postings. Doubles round-trip
// bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr char kIndexMagic[9] = "RATIDX01";

inline void save_index(const TmIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(concat("save_index: cannot open ", path));
    io::write_magic(out, kIndexMagic);
    io::write_f64(out, index.params.k1);
    io::write_f64(out, index.params.b);
    io::write_u64(out, index.n_docs);
    io::write_f64(out, index.avgdl);
    io::write_u64(out, index.doc_lengths.size());
    for (auto len : index.doc_lengths) io::write_u64(out, len);
    io::write_u64(out, index.postings.size());
    for (const auto& [term, plist] : index.postings) {
        io::write_string(out, term);
        io::write_u64(out, plist.size());
        for (const auto& [entry, tf] : plist) {
            io::write_u64(out, entry);
            io::write_u64(out, tf);
        }
    }
    if (!out) throw IoError(concat("save_index: write failed for ", path));
}

inline TmIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("load_index: cannot open ", path));
    io::check_magic(in, kIndexMagic, path);
    TmIndex index;
    index.params.k1 = io::read_f64(in);
    index.params.b = io::read_f64(in);
    index.n_docs = io::read_u64(in);
    index.avgdl = io::read_f64(in);
    index.doc_lengths.resize(io::read_u64(in));
    for (auto& len : index.doc_lengths) len = io::read_u64(in);
    const std::uint64_t n_terms = io::read_u64(in);
    for (std::uint64_t t = 0; t < n_terms; ++t) {
        std::string term = io::read_string(in);
        auto& plist = index.postings[term];
        plist.resize(io::read_u64(in));
        for (auto& [entry, tf] : plist) {
            entry = static_cast<std::uint32_t>(io::read_u64(in));
            tf = static_cast<std::uint32_t>(io::read_u64(in));
        }
    }
    return index;
}

}  // namespace rat
