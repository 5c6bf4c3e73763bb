#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rat/decoding.hpp"
#include "rat/error.hpp"

namespace rat {

/// Nearest-rank 90th percentile: sort ascending, take the 1-based element at
/// ceil(0.9 * n). Integer arithmetic keeps exact multiples exact.
inline double percentile_90(std::vector<double> samples) {
    if (samples.empty()) throw ConfigError("percentile_90: no samples");
    std::sort(samples.begin(), samples.end());
    const std::size_t rank = (9 * samples.size() + 9) / 10;
    return samples[rank - 1];
}

struct LatencyReport {
    Variant variant = Variant::Baseline;
    std::size_t k = 0;
    std::size_t n_sentences = 0;  // measured sentences, warmups excluded
    double p90_encode_ms = 0.0;
    double p90_total_ms = 0.0;
    double mean_encode_ms = 0.0;
    double mean_total_ms = 0.0;
    // Mean per-sentence breakdown of the encode window.
    double plan_ms = 0.0;
    double pass_ms = 0.0;
    double extract_ms = 0.0;
};

/// Translates each sentence individually (batch 1), discards warmup_count
/// leading warmup runs, and reports nearest-rank p90 plus the encode-time
/// breakdown averaged over the measured sentences.
inline LatencyReport bench_translate(const Pipeline& pipe,
                                     const std::vector<std::string>& sentences,
                                     const DecodeConfig& dcfg, std::size_t warmup_count = 10) {
    if (warmup_count >= sentences.size())
        throw ConfigError(concat("bench_translate: ", sentences.size(),
                                 " sentences leave nothing to measure after ", warmup_count,
                                 " warmups"));
    for (std::size_t i = 0; i < warmup_count; ++i) translate(pipe, sentences[i], dcfg);

    LatencyReport report;
    report.variant = pipe.cfg.variant;
    report.k = pipe.cfg.k;
    std::vector<double> encode_ms, total_ms;
    for (std::size_t i = warmup_count; i < sentences.size(); ++i) {
        TranslateTrace trace;
        translate(pipe, sentences[i], dcfg, &trace);
        encode_ms.push_back(trace.encode_ms);
        total_ms.push_back(trace.total_ms);
        report.plan_ms += trace.plan_ms;
        report.pass_ms += trace.pass_ms;
        report.extract_ms += trace.extract_ms;
    }
    report.n_sentences = encode_ms.size();
    const double n = static_cast<double>(report.n_sentences);
    report.p90_encode_ms = percentile_90(encode_ms);
    report.p90_total_ms = percentile_90(total_ms);
    for (double v : encode_ms) report.mean_encode_ms += v / n;
    for (double v : total_ms) report.mean_total_ms += v / n;
    report.plan_ms /= n;
    report.pass_ms /= n;
    report.extract_ms /= n;
    return report;
}

inline void write_latency_tsv(const LatencyReport& r, std::ostream& out) {
    out << "variant\tk\tn_sentences\tp90_encode_ms\tp90_total_ms\tmean_encode_ms\tmean_total_ms"
           "\tplan_ms\tpass_ms\textract_ms\n";
    out << variant_name(r.variant) << '\t' << r.k << '\t' << r.n_sentences << '\t'
        << std::setprecision(6) << std::fixed << r.p90_encode_ms << '\t' << r.p90_total_ms << '\t'
        << r.mean_encode_ms << '\t' << r.mean_total_ms << '\t' << r.plan_ms << '\t' << r.pass_ms
        << '\t' << r.extract_ms << '\n';
}

inline std::string format_latency_summary(const LatencyReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << variant_name(r.variant) << " (k=" << r.k << ", " << r.n_sentences << " sentences)\n";
    out << "  p90 encode " << r.p90_encode_ms << " ms | p90 total " << r.p90_total_ms << " ms\n";
    out << "  encode breakdown per sentence: plan " << r.plan_ms << " ms, passes " << r.pass_ms
        << " ms, extract+concat " << r.extract_ms << " ms\n";
    return out.str();
}

}  // namespace rat
