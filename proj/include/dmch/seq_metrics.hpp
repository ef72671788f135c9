#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dmch/errors.hpp"
#include "dmch/util.hpp"

// Sequence-quality metrics for generated attribute sequences. Single
// reference per item. BLEU is reported both as per-n corpus-level clipped
// precision (B-1..B-4, the per-column reproduction target) and as the
// standard composite with brevity penalty. ROUGE-L is the LCS F-measure
// with the conventional recall weight; CIDEr is the TF-IDF n-gram cosine
// averaged over n = 1..4 and scaled by 10.

namespace dmch {

struct CorpusItem {
    std::string id;
    std::vector<std::string> prediction;
    std::vector<std::string> reference;
};

using Corpus = std::vector<CorpusItem>;

namespace ngram {

using Counts = std::map<std::vector<std::string>, int>;

inline Counts count(const std::vector<std::string>& tokens, int n) {
    Counts out;
    if (n < 1 || static_cast<int>(tokens.size()) < n) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
        ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return out;
}

} // namespace ngram

struct BleuN {
    double precision = 0.0; // corpus-level clipped n-gram precision
    bool flagged = false;   // true when no prediction contains an n-gram of this order
};

/// Corpus-level clipped n-gram precision: Σ clipped matches / Σ prediction
/// n-grams over the whole corpus.
inline BleuN bleu_n(const Corpus& corpus, int n) {
    if (n < 1) throw argument_error("bleu_n: n must be >= 1");
    if (corpus.empty()) throw data_error("bleu_n: empty corpus");
    long long matched = 0, total = 0;
    for (const auto& item : corpus) {
        auto pred = ngram::count(item.prediction, n);
        auto ref = ngram::count(item.reference, n);
        for (const auto& [gram, cnt] : pred) {
            total += cnt;
            auto it = ref.find(gram);
            if (it != ref.end()) matched += std::min(cnt, it->second);
        }
    }
    BleuN out;
    if (total == 0) {
        out.flagged = true; // n exceeds every prediction's length
        return out;
    }
    out.precision = static_cast<double>(matched) / static_cast<double>(total);
    return out;
}

/// Standard composite BLEU: brevity penalty times the geometric mean of the
/// clipped precisions for n = 1..max_n.
inline double bleu_composite(const Corpus& corpus, int max_n = 4) {
    if (corpus.empty()) throw data_error("bleu_composite: empty corpus");
    long long pred_len = 0, ref_len = 0;
    for (const auto& item : corpus) {
        pred_len += static_cast<long long>(item.prediction.size());
        ref_len += static_cast<long long>(item.reference.size());
    }
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const BleuN b = bleu_n(corpus, n);
        if (b.precision <= 0.0) return 0.0;
        log_sum += std::log(b.precision);
    }
    const double geo = std::exp(log_sum / max_n);
    double bp = 1.0;
    if (pred_len < ref_len && pred_len > 0)
        bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(pred_len));
    return bp * geo;
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[m];
}

struct RougeLItem {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

constexpr double kRougeBeta = 1.2; // conventional recall weight

inline RougeLItem rouge_l_item(const std::vector<std::string>& prediction,
                               const std::vector<std::string>& reference) {
    RougeLItem out;
    if (prediction.empty() || reference.empty()) return out;
    const int lcs = lcs_length(prediction, reference);
    out.precision = static_cast<double>(lcs) / static_cast<double>(prediction.size());
    out.recall = static_cast<double>(lcs) / static_cast<double>(reference.size());
    if (out.precision > 0.0 && out.recall > 0.0) {
        const double b2 = kRougeBeta * kRougeBeta;
        out.f = (1.0 + b2) * out.precision * out.recall / (out.recall + b2 * out.precision);
    }
    return out;
}

/// Mean over items of the LCS F-measure.
inline double rouge_l(const Corpus& corpus) {
    if (corpus.empty()) throw data_error("rouge_l: empty corpus");
    double acc = 0.0;
    for (const auto& item : corpus) acc += rouge_l_item(item.prediction, item.reference).f;
    return acc / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------
// CIDEr
// ---------------------------------------------------------------------------

constexpr int kCiderMaxN = 4;
constexpr double kCiderScale = 10.0;

/// Per-item CIDEr: mean over n = 1..4 of the cosine between TF-IDF n-gram
/// vectors of prediction and reference. Document frequencies come from the
/// reference side of the corpus; idf = log(|corpus| / max(1, df)).
inline std::vector<double> cider_per_item(const Corpus& corpus) {
    if (corpus.size() < 2)
        throw data_error("cider: corpus must contain at least 2 items (IDF needs document frequencies)");
    const double num_docs = static_cast<double>(corpus.size());

    std::array<std::map<std::vector<std::string>, int>, kCiderMaxN> df;
    for (const auto& item : corpus)
        for (int n = 1; n <= kCiderMaxN; ++n)
            for (const auto& [gram, cnt] : ngram::count(item.reference, n)) {
                (void)cnt;
                ++df[static_cast<std::size_t>(n - 1)][gram];
            }
    auto idf = [&](const std::vector<std::string>& gram, int n) {
        auto it = df[static_cast<std::size_t>(n - 1)].find(gram);
        const int d = it == df[static_cast<std::size_t>(n - 1)].end() ? 0 : it->second;
        return std::log(num_docs / std::max(1, d));
    };

    std::vector<double> scores;
    scores.reserve(corpus.size());
    for (const auto& item : corpus) {
        double item_score = 0.0;
        for (int n = 1; n <= kCiderMaxN; ++n) {
            auto pred = ngram::count(item.prediction, n);
            auto ref = ngram::count(item.reference, n);
            double dot = 0.0, np = 0.0, nr = 0.0;
            for (const auto& [gram, cnt] : pred) {
                const double w = cnt * idf(gram, n);
                np += w * w;
                auto it = ref.find(gram);
                if (it != ref.end()) dot += w * (it->second * idf(gram, n));
            }
            for (const auto& [gram, cnt] : ref) {
                const double w = cnt * idf(gram, n);
                nr += w * w;
            }
            if (np > 0.0 && nr > 0.0) item_score += dot / (std::sqrt(np) * std::sqrt(nr));
        }
        scores.push_back(kCiderScale * item_score / kCiderMaxN);
    }
    return scores;
}

inline double cider(const Corpus& corpus) {
    auto scores = cider_per_item(corpus);
    double acc = 0.0;
    for (double s : scores) acc += s;
    return acc / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// corpus file + report
// ---------------------------------------------------------------------------

/// One item per line: `item_id<TAB>prediction tokens<TAB>reference tokens`,
/// tokens space-separated.
inline void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot open corpus file for writing: " + path);
    for (const auto& item : corpus)
        os << item.id << '\t' << join(item.prediction, " ") << '\t' << join(item.reference, " ") << '\n';
    if (!os) throw io_error("write failure on corpus file: " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open corpus file: " + path);
    Corpus out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 3)
            throw format_error("corpus file line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
        CorpusItem item;
        item.id = fields[0];
        for (const auto& tok : split(fields[1], ' '))
            if (!tok.empty()) item.prediction.push_back(tok);
        for (const auto& tok : split(fields[2], ' '))
            if (!tok.empty()) item.reference.push_back(tok);
        out.push_back(std::move(item));
    }
    return out;
}

/// Tab-separated metric table: B-1..B-4, ROUGE-L, CIDEr (plus the labeled
/// composite BLEU-4).
inline std::string format_metric_report(const Corpus& corpus) {
    std::string header = "B-1\tB-2\tB-3\tB-4\tROUGE-L\tCIDEr\tBLEU-4(composite)";
    char buf[256];
    std::string values;
    for (int n = 1; n <= 4; ++n) {
        std::snprintf(buf, sizeof(buf), "%.4f\t", bleu_n(corpus, n).precision);
        values += buf;
    }
    std::snprintf(buf, sizeof(buf), "%.4f\t%.4f\t%.4f", rouge_l(corpus), cider(corpus), bleu_composite(corpus));
    values += buf;
    return header + "\n" + values + "\n";
}

} // namespace dmch
