#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmch/embedding.hpp"
#include "dmch/errors.hpp"

// Exact Hamming retrieval over the shop-domain code database: packed 64-bit
// words scanned with XOR/popcount, top-K selection with deterministic
// tie-break, P@K evaluation, and a scan-speed benchmark against a float
// Euclidean baseline of equal dimensionality.

namespace dmch {

inline std::vector<std::uint64_t> pack_words(const BinaryCode& code) {
    const int words = (code.length + 63) / 64;
    std::vector<std::uint64_t> out(static_cast<std::size_t>(words), 0);
    for (int i = 0; i < code.length; ++i)
        if (code.bit(i)) out[static_cast<std::size_t>(i / 64)] |= 1ULL << (i % 64);
    return out;
}

/// Population count of the XOR; the retrieval distance.
inline int hamming(const BinaryCode& a, const BinaryCode& b) {
    if (a.length != b.length)
        throw argument_error("hamming: code lengths differ (" + std::to_string(a.length) + " vs " +
                             std::to_string(b.length) + ")");
    auto wa = pack_words(a);
    auto wb = pack_words(b);
    int dist = 0;
    for (std::size_t i = 0; i < wa.size(); ++i) dist += std::popcount(wa[i] ^ wb[i]);
    return dist;
}

struct RetrievalHit {
    std::string item_id;
    int distance = 0;
};

using RetrievalResult = std::vector<RetrievalHit>;

/// Immutable shop-side index: ids plus a contiguous packed-bit arena.
class CodeDatabase {
public:
    CodeDatabase() = default;

    CodeDatabase(int code_length, const std::vector<CodeEntry>& entries) : code_length_(code_length) {
        words_per_code_ = (code_length + 63) / 64;
        ids_.reserve(entries.size());
        arena_.reserve(entries.size() * static_cast<std::size_t>(words_per_code_));
        for (const auto& e : entries) {
            if (e.code.length != code_length_)
                throw argument_error("code database: mixed code lengths (" + std::to_string(e.code.length) +
                                     " vs " + std::to_string(code_length_) + ")");
            ids_.push_back(e.item_id);
            auto words = pack_words(e.code);
            arena_.insert(arena_.end(), words.begin(), words.end());
        }
    }

    static CodeDatabase from_file(const CodeFile& f) { return CodeDatabase(f.code_length, f.entries); }

    int code_length() const { return code_length_; }
    std::size_t size() const { return ids_.size(); }
    const std::string& id_at(std::size_t i) const { return ids_[i]; }
    const std::uint64_t* words_at(std::size_t i) const {
        return arena_.data() + i * static_cast<std::size_t>(words_per_code_);
    }
    int words_per_code() const { return words_per_code_; }

    /// Exact top-K by Hamming distance over a single full scan. Ties break
    /// by ascending item id; K above the database size returns everything.
    RetrievalResult query_topk(const BinaryCode& q, int k) const {
        if (k < 1) throw argument_error("query_topk: K must be >= 1");
        if (ids_.empty()) throw argument_error("query_topk: database is empty");
        if (q.length != code_length_)
            throw argument_error("query_topk: query length " + std::to_string(q.length) +
                                 " does not match database code length " + std::to_string(code_length_));
        auto qw = pack_words(q);
        std::vector<int> dist(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            const std::uint64_t* row = words_at(i);
            int d = 0;
            for (int w = 0; w < words_per_code_; ++w) d += std::popcount(row[w] ^ qw[static_cast<std::size_t>(w)]);
            dist[i] = d;
        }
        std::vector<std::size_t> order(ids_.size());
        std::iota(order.begin(), order.end(), 0);
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
        auto cmp = [&](std::size_t a, std::size_t b) {
            if (dist[a] != dist[b]) return dist[a] < dist[b];
            return ids_[a] < ids_[b];
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), cmp);
        RetrievalResult out;
        out.reserve(take);
        for (std::size_t r = 0; r < take; ++r) out.push_back({ids_[order[r]], dist[order[r]]});
        return out;
    }

private:
    int code_length_ = 0;
    int words_per_code_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::uint64_t> arena_;
};

/// P@K = (Σ_q hit(q,K)) / |Q|; hit is 1 iff any of the query's top-K items
/// shares its product id.
inline double precision_at_k(const std::vector<RetrievalResult>& results_per_query,
                             const std::vector<std::string>& query_products,
                             const std::unordered_map<std::string, std::string>& item_to_product, int k) {
    if (results_per_query.size() != query_products.size())
        throw argument_error("precision_at_k: results and query products differ in count");
    if (results_per_query.empty()) throw data_error("precision_at_k: no queries");
    int hits = 0;
    for (std::size_t q = 0; q < results_per_query.size(); ++q) {
        if (query_products[q].empty())
            throw data_error("precision_at_k: query " + std::to_string(q) + " has no ground-truth product");
        const auto& res = results_per_query[q];
        const int limit = std::min<int>(k, static_cast<int>(res.size()));
        for (int r = 0; r < limit; ++r) {
            auto it = item_to_product.find(res[static_cast<std::size_t>(r)].item_id);
            if (it == item_to_product.end())
                throw data_error("precision_at_k: item '" + res[static_cast<std::size_t>(r)].item_id +
                                 "' has no product mapping");
            if (it->second == query_products[q]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(results_per_query.size());
}

// ---------------------------------------------------------------------------
// scan benchmark
// ---------------------------------------------------------------------------

struct BenchReport {
    std::size_t db_size = 0;
    std::size_t query_count = 0;
    int repetitions = 0;
    // per-repetition total wall seconds
    std::vector<double> hamming_seconds;
    std::vector<double> euclidean_seconds;

    static double median(std::vector<double> v) {
        if (v.empty()) return 0.0;
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }

    double speedup_median() const {
        const double h = median(hamming_seconds);
        return h > 0.0 ? median(euclidean_seconds) / h : 0.0;
    }
};

/// Times a packed-bit Hamming top-K scan against a 64-bit-float Euclidean
/// top-K scan over ±1 vectors of the same dimensionality. A warmup pass of
/// both scans runs before any timing.
inline BenchReport benchmark_queries(const CodeDatabase& db, const std::vector<BinaryCode>& queries,
                                     int repetitions, int k = 10) {
    BenchReport report;
    report.db_size = db.size();
    report.query_count = queries.size();
    report.repetitions = repetitions;
    if (queries.empty() || repetitions < 1) return report;

    const int c = db.code_length();
    // unpack the database and queries to ±1 doubles for the baseline
    std::vector<double> db_f(db.size() * static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < db.size(); ++i) {
        const std::uint64_t* row = db.words_at(i);
        for (int j = 0; j < c; ++j)
            db_f[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] =
                ((row[j / 64] >> (j % 64)) & 1u) ? 1.0 : -1.0;
    }
    std::vector<std::vector<double>> queries_f;
    std::vector<std::vector<std::uint64_t>> queries_w;
    queries_f.reserve(queries.size());
    queries_w.reserve(queries.size());
    for (const auto& q : queries) {
        if (q.length != c) throw argument_error("benchmark_queries: query length mismatch");
        queries_w.push_back(pack_words(q));
        std::vector<double> f(static_cast<std::size_t>(c));
        for (int j = 0; j < c; ++j) f[static_cast<std::size_t>(j)] = q.bit(j) ? 1.0 : -1.0;
        queries_f.push_back(std::move(f));
    }

    const int words = db.words_per_code();
    volatile std::uint64_t guard = 0; // keep the scans from being optimized away

    auto scan_hamming = [&] {
        std::uint64_t acc = 0;
        const std::size_t n = db.size();
        for (const auto& qw : queries_w) {
            std::vector<int> top;
            top.reserve(static_cast<std::size_t>(k) + 1);
            const std::uint64_t* row = db.words_at(0);
            if (words == 2) { // the shipped code lengths are <= 128 bits
                const std::uint64_t q0 = qw[0], q1 = qw[1];
                for (std::size_t i = 0; i < n; ++i, row += 2) {
                    const int d = std::popcount(row[0] ^ q0) + std::popcount(row[1] ^ q1);
                    if (static_cast<int>(top.size()) < k) {
                        top.push_back(d);
                        std::push_heap(top.begin(), top.end());
                    } else if (d < top.front()) {
                        std::pop_heap(top.begin(), top.end());
                        top.back() = d;
                        std::push_heap(top.begin(), top.end());
                    }
                }
            } else {
                for (std::size_t i = 0; i < n; ++i, row += words) {
                    int d = 0;
                    for (int w = 0; w < words; ++w)
                        d += std::popcount(row[w] ^ qw[static_cast<std::size_t>(w)]);
                    if (static_cast<int>(top.size()) < k) {
                        top.push_back(d);
                        std::push_heap(top.begin(), top.end());
                    } else if (d < top.front()) {
                        std::pop_heap(top.begin(), top.end());
                        top.back() = d;
                        std::push_heap(top.begin(), top.end());
                    }
                }
            }
            for (int d : top) acc += static_cast<std::uint64_t>(d);
        }
        guard = guard + acc;
    };

    auto scan_euclidean = [&] {
        double acc = 0.0;
        for (const auto& qf : queries_f) {
            std::vector<double> top;
            top.reserve(static_cast<std::size_t>(k) + 1);
            for (std::size_t i = 0; i < db.size(); ++i) {
                const double* row = db_f.data() + i * static_cast<std::size_t>(c);
                double d = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double diff = row[j] - qf[static_cast<std::size_t>(j)];
                    d += diff * diff;
                }
                if (static_cast<int>(top.size()) < k) {
                    top.push_back(d);
                    std::push_heap(top.begin(), top.end());
                } else if (d < top.front()) {
                    std::pop_heap(top.begin(), top.end());
                    top.back() = d;
                    std::push_heap(top.begin(), top.end());
                }
            }
            for (double d : top) acc += d;
        }
        guard = guard + static_cast<std::uint64_t>(acc);
    };

    scan_hamming(); // warmup
    scan_euclidean();

    using clock = std::chrono::steady_clock;
    for (int r = 0; r < repetitions; ++r) {
        auto t0 = clock::now();
        scan_hamming();
        auto t1 = clock::now();
        scan_euclidean();
        auto t2 = clock::now();
        report.hamming_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        report.euclidean_seconds.push_back(std::chrono::duration<double>(t2 - t1).count());
    }
    return report;
}

/// Tab-separated latency report echoing the query-efficiency comparison.
inline std::string format_bench_report(const BenchReport& r) {
    auto stats = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        struct {
            double mn, md, mx;
        } s{0, 0, 0};
        if (!v.empty()) {
            s.mn = v.front();
            s.mx = v.back();
            s.md = BenchReport::median(v);
        }
        return s;
    };
    std::string out;
    out += "db_size\t" + std::to_string(r.db_size) + "\n";
    out += "queries\t" + std::to_string(r.query_count) + "\n";
    out += "repetitions\t" + std::to_string(r.repetitions) + "\n";
    char buf[256];
    auto h = stats(r.hamming_seconds);
    auto e = stats(r.euclidean_seconds);
    const double per_q = r.query_count ? 1.0 / static_cast<double>(r.query_count) : 0.0;
    std::snprintf(buf, sizeof(buf), "hamming_total_s\tmin %.6f\tmedian %.6f\tmax %.6f\n", h.mn, h.md, h.mx);
    out += buf;
    std::snprintf(buf, sizeof(buf), "hamming_per_query_s\t%.9f\n", h.md * per_q);
    out += buf;
    std::snprintf(buf, sizeof(buf), "euclidean_total_s\tmin %.6f\tmedian %.6f\tmax %.6f\n", e.mn, e.md, e.mx);
    out += buf;
    std::snprintf(buf, sizeof(buf), "euclidean_per_query_s\t%.9f\n", e.md * per_q);
    out += buf;
    std::snprintf(buf, sizeof(buf), "speedup\t%.2fx\n", r.speedup_median());
    out += buf;
    return out;
}

} // namespace dmch
