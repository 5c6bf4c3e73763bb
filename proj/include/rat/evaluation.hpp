#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rat/error.hpp"
#include "rat/rng.hpp"

namespace rat {

struct BleuReport {
    double score = 0.0;                       // 0..100
    std::array<double, 4> precisions{};       // percentages, after smoothing
    double brevity_penalty = 1.0;
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
};

struct SignificanceResult {
    double p_value = 1.0;
    std::size_t n_resamples = 0;
    std::size_t wins_a = 0;
    std::size_t wins_b = 0;
    std::size_t ties = 0;
    bool significant = false;
};

// ---------------------------------------------------------------------------
// mteval-13a tokenization. Passes run in order with sub-style left-to-right
// scanning, exactly mirroring the reference rules:
//   0. drop "<skipped>", join hyphenated line breaks, newlines to spaces,
//      unescape &quot; &amp; &lt; &gt;
//   1. pad the ASCII punctuation classes [{-~ [-` space-& (-+ :-@ /] with
//      spaces (leaves ' , - . untouched)
//   2. "X." / "X," with X not a digit -> "X . " / "X , "
//   3. ".X" / ",X" with X not a digit -> " . X" / " , X"
//   4. "D-" with D a digit -> "D - "
// then split on whitespace. Case is preserved and bytes >= 0x80 flow through
// untouched, so UTF-8 words survive intact.
// ---------------------------------------------------------------------------

namespace detail {

inline bool tok13a_padded(unsigned char c) {
    return (c >= 0x7B && c <= 0x7E) || (c >= 0x5B && c <= 0x60) || (c >= 0x20 && c <= 0x26) ||
           (c >= 0x28 && c <= 0x2B) || (c >= 0x3A && c <= 0x40) || c == 0x2F;
}

inline void replace_all(std::string& s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

inline bool ascii_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace detail

inline std::vector<std::string> tokenize_13a(const std::string& text) {
    std::string line = text;
    detail::replace_all(line, "<skipped>", "");
    detail::replace_all(line, "-\n", "");
    detail::replace_all(line, "\n", " ");
    if (line.find('&') != std::string::npos) {
        detail::replace_all(line, "&quot;", "\"");
        detail::replace_all(line, "&amp;", "&");
        detail::replace_all(line, "&lt;", "<");
        detail::replace_all(line, "&gt;", ">");
    }
    line = " " + line + " ";

    std::string s1;
    s1.reserve(line.size() * 2);
    for (char c : line) {
        if (detail::tok13a_padded(static_cast<unsigned char>(c))) {
            s1 += ' ';
            s1 += c;
            s1 += ' ';
        } else {
            s1 += c;
        }
    }

    std::string s2;
    s2.reserve(s1.size());
    for (std::size_t i = 0; i < s1.size();) {
        if (i + 1 < s1.size() && !detail::ascii_digit(s1[i]) &&
            (s1[i + 1] == '.' || s1[i + 1] == ',')) {
            s2 += s1[i];
            s2 += ' ';
            s2 += s1[i + 1];
            s2 += ' ';
            i += 2;
        } else {
            s2 += s1[i++];
        }
    }

    std::string s3;
    s3.reserve(s2.size());
    for (std::size_t i = 0; i < s2.size();) {
        if (i + 1 < s2.size() && (s2[i] == '.' || s2[i] == ',') && !detail::ascii_digit(s2[i + 1])) {
            s3 += ' ';
            s3 += s2[i];
            s3 += ' ';
            s3 += s2[i + 1];
            i += 2;
        } else {
            s3 += s2[i++];
        }
    }

    std::string s4;
    s4.reserve(s3.size());
    for (std::size_t i = 0; i < s3.size();) {
        if (i + 1 < s3.size() && detail::ascii_digit(s3[i]) && s3[i + 1] == '-') {
            s4 += s3[i];
            s4 += " - ";
            i += 2;
        } else {
            s4 += s3[i++];
        }
    }

    std::vector<std::string> tokens;
    std::string cur;
    for (char c : s4) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

// ---------------------------------------------------------------------------
// Corpus BLEU, n = 1..4, clipped counts aggregated corpus-level, exponential
// smoothing of zero numerators (the j-th zero order scores 1/2^j over its
// total), all four orders always contribute, BP = exp(1 - ref/hyp) when the
// hypothesis is short. An order with zero possible n-grams zeroes the score.
// ---------------------------------------------------------------------------

namespace detail {

struct BleuStats {
    std::array<std::uint64_t, 4> matches{};
    std::array<std::uint64_t, 4> totals{};
    std::uint64_t hyp_len = 0;
    std::uint64_t ref_len = 0;

    BleuStats& operator+=(const BleuStats& o) {
        for (int n = 0; n < 4; ++n) {
            matches[n] += o.matches[n];
            totals[n] += o.totals[n];
        }
        hyp_len += o.hyp_len;
        ref_len += o.ref_len;
        return *this;
    }
};

inline std::map<std::vector<std::string>, std::uint64_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::uint64_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

inline BleuStats sentence_stats(const std::string& hyp, const std::string& ref) {
    BleuStats s;
    const auto h = tokenize_13a(hyp);
    const auto r = tokenize_13a(ref);
    s.hyp_len = h.size();
    s.ref_len = r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto hc = ngram_counts(h, n);
        if (hc.empty()) continue;
        const auto rc = ngram_counts(r, n);
        std::uint64_t total = 0, match = 0;
        for (const auto& [gram, count] : hc) {
            total += count;
            const auto it = rc.find(gram);
            if (it != rc.end()) match += std::min(count, it->second);
        }
        s.totals[n - 1] = total;
        s.matches[n - 1] = match;
    }
    return s;
}

inline BleuReport bleu_from_stats(const BleuStats& s) {
    BleuReport report;
    report.hyp_len = s.hyp_len;
    report.ref_len = s.ref_len;
    if (s.hyp_len == 0) return report;

    double log_sum = 0.0;
    bool zero_order = false;
    double smooth = 1.0;
    for (int n = 0; n < 4; ++n) {
        double p = 0.0;
        if (s.totals[n] == 0) {
            zero_order = true;
        } else if (s.matches[n] == 0) {
            smooth *= 2.0;
            p = 1.0 / (smooth * static_cast<double>(s.totals[n]));
        } else {
            p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
        }
        report.precisions[static_cast<std::size_t>(n)] = 100.0 * p;
        if (p > 0.0) log_sum += std::log(p);
    }
    report.brevity_penalty =
        s.hyp_len < s.ref_len
            ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
            : 1.0;
    report.score =
        zero_order ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum / 4.0);
    return report;
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<std::string>& hyps,
                              const std::vector<std::string>& refs) {
    if (hyps.size() != refs.size())
        throw ConfigError(concat("corpus_bleu: ", hyps.size(), " hypotheses vs ", refs.size(),
                                 " references"));
    if (hyps.empty()) throw ConfigError("corpus_bleu: empty corpus");
    detail::BleuStats stats;
    for (std::size_t i = 0; i < hyps.size(); ++i)
        stats += detail::sentence_stats(hyps[i], refs[i]);
    return detail::bleu_from_stats(stats);
}

/// Paired bootstrap resampling: n_resamples index draws with replacement from
/// one seeded stream; p_value for "A beats B" counts resamples where A fails
/// to exceed B, so ties count against A. Deterministic given the seed.
inline SignificanceResult paired_bootstrap(const std::vector<std::string>& hyps_a,
                                           const std::vector<std::string>& hyps_b,
                                           const std::vector<std::string>& refs,
                                           std::size_t n_resamples, double threshold,
                                           std::uint64_t seed) {
    if (hyps_a.size() != refs.size() || hyps_b.size() != refs.size())
        throw ConfigError(concat("paired_bootstrap: sizes differ: ", hyps_a.size(), "/",
                                 hyps_b.size(), "/", refs.size()));
    if (refs.empty()) throw ConfigError("paired_bootstrap: empty corpus");
    if (n_resamples < 1) throw ConfigError("paired_bootstrap: n_resamples must be >= 1");

    const std::size_t n = refs.size();
    std::vector<detail::BleuStats> stats_a(n), stats_b(n);
    for (std::size_t i = 0; i < n; ++i) {
        stats_a[i] = detail::sentence_stats(hyps_a[i], refs[i]);
        stats_b[i] = detail::sentence_stats(hyps_b[i], refs[i]);
    }

    Rng rng(seed);
    SignificanceResult result;
    result.n_resamples = n_resamples;
    for (std::size_t r = 0; r < n_resamples; ++r) {
        detail::BleuStats agg_a, agg_b;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = rng.below(n);
            agg_a += stats_a[idx];
            agg_b += stats_b[idx];
        }
        const double bleu_a = detail::bleu_from_stats(agg_a).score;
        const double bleu_b = detail::bleu_from_stats(agg_b).score;
        if (bleu_a > bleu_b)
            ++result.wins_a;
        else if (bleu_b > bleu_a)
            ++result.wins_b;
        else
            ++result.ties;
    }
    result.p_value = static_cast<double>(result.wins_b + result.ties) /
                     static_cast<double>(n_resamples);
    result.significant = result.p_value < threshold;
    return result;
}

}  // namespace rat
