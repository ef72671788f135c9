#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "dmch/seq_metrics.hpp"
#include "dmch/util.hpp"
#include "oracles.hpp"

using namespace dmch;

namespace {

std::vector<std::string> toks(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& t : split(s, ' '))
        if (!t.empty()) out.push_back(t);
    return out;
}

Corpus random_corpus(Rng& rng, int items, int vocab = 6, int min_len = 1, int max_len = 9) {
    Corpus c;
    for (int i = 0; i < items; ++i) {
        CorpusItem item;
        item.id = "it" + std::to_string(i);
        auto gen = [&](int len) {
            std::vector<std::string> s;
            for (int j = 0; j < len; ++j) s.push_back(std::string(1, static_cast<char>('a' + rng() % vocab)));
            return s;
        };
        item.prediction = gen(min_len + static_cast<int>(rng() % static_cast<unsigned>(max_len - min_len + 1)));
        item.reference = gen(min_len + static_cast<int>(rng() % static_cast<unsigned>(max_len - min_len + 1)));
        c.push_back(item);
    }
    return c;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("identical predictions score 1 on BLEU and ROUGE-L, 10 on CIDEr") {
    Corpus c = {{"a", toks("dress striped red v_neck long_sleeve"), toks("dress striped red v_neck long_sleeve")},
                {"b", toks("shirt solid blue round_neck short_sleeve"), toks("shirt solid blue round_neck short_sleeve")},
                {"c", toks("skirt dotted teal v_neck short_sleeve"), toks("skirt dotted teal v_neck short_sleeve")}};
    for (int n = 1; n <= 4; ++n) CHECK(bleu_n(c, n).precision == doctest::Approx(1.0));
    CHECK(bleu_composite(c) == doctest::Approx(1.0));
    CHECK(rouge_l(c) == doctest::Approx(1.0));
    auto per_item = cider_per_item(c);
    for (double s : per_item) CHECK(s == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("unigram clipped precision 2/3 on the hand example") {
    Corpus c = {{"x", toks("a b c"), toks("a b d")}};
    CHECK(bleu_n(c, 1).precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("disjoint vocabularies score zero") {
    Corpus c = {{"x", toks("a b c"), toks("d e f")}, {"y", toks("a a"), toks("e f")}};
    CHECK(bleu_n(c, 1).precision == 0.0);
    CHECK(bleu_composite(c) == 0.0);
    CHECK(rouge_l(c) == 0.0);
    CHECK(cider(c) == 0.0);
}

TEST_CASE("n beyond every prediction length scores 0 and is flagged") {
    Corpus c = {{"x", toks("a b"), toks("a b c d e")}};
    BleuN b = bleu_n(c, 4);
    CHECK(b.precision == 0.0);
    CHECK(b.flagged);
}

TEST_CASE("rouge_l item recall and precision on the LCS example") {
    auto item = rouge_l_item(toks("a c"), toks("a b c"));
    CHECK(item.precision == doctest::Approx(1.0));
    CHECK(item.recall == doctest::Approx(2.0 / 3.0));
    const double b2 = kRougeBeta * kRougeBeta;
    const double expected_f = (1 + b2) * 1.0 * (2.0 / 3.0) / (2.0 / 3.0 + b2 * 1.0);
    CHECK(item.f == doctest::Approx(expected_f).epsilon(1e-12));
}

TEST_CASE("cider requires a corpus of at least 2 items") {
    Corpus one = {{"x", toks("a"), toks("a")}};
    try {
        cider(one);
        FAIL("expected data_error");
    } catch (const data_error& e) {
        CHECK(std::string(e.what()).find("IDF") != std::string::npos);
    }
}

TEST_CASE("3-item toy corpus matches a hand-computed TF-IDF cosine within 1e-9") {
    // hand-checkable: distinct single-token items plus one partial overlap
    Corpus c = {{"x", toks("red dress"), toks("red dress")},
                {"y", toks("blue shirt"), toks("blue skirt")},
                {"z", toks("teal coat"), toks("teal coat")}};
    // unigrams: idf(red)=idf(dress)=log(3/1) ... df over references only
    // item x: pred == ref, cosine_1 = 1, bigram "red dress" shared, cosine_2 = 1
    // item y: overlap only "blue": w = log(3)·1 both sides;
    //   |pred| = |ref| = sqrt(idf(blue)² + idf(shirt/skirt)²) with idf = log 3
    //   cosine_1 = (log3)² / (sqrt(2)·log3 · sqrt(2)·log3) = 1/2; no shared bigram
    // item z: same as x
    auto per_item = cider_per_item(c);
    REQUIRE(per_item.size() == 3);
    // n=3,4 vanish for 2-token items (no such grams → contribute 0)
    CHECK(per_item[0] == doctest::Approx(10.0 * (1.0 + 1.0) / 4.0).epsilon(1e-9));
    CHECK(per_item[1] == doctest::Approx(10.0 * 0.5 / 4.0).epsilon(1e-9));
    CHECK(per_item[2] == doctest::Approx(10.0 * (1.0 + 1.0) / 4.0).epsilon(1e-9));
    CHECK(cider(c) == doctest::Approx(oracles::cider(c)).epsilon(1e-12));
}

TEST_CASE("metrics match the independent oracles on random corpora") {
    Rng rng(71);
    for (int trial = 0; trial < 50; ++trial) {
        Corpus c = random_corpus(rng, 2 + static_cast<int>(rng() % 8));
        for (int n = 1; n <= 4; ++n)
            CHECK(bleu_n(c, n).precision == doctest::Approx(oracles::bleu_n(c, n)).epsilon(1e-9));
        CHECK(bleu_composite(c) == doctest::Approx(oracles::bleu_composite(c)).epsilon(1e-9));
        CHECK(rouge_l(c) == doctest::Approx(oracles::rouge_l(c)).epsilon(1e-9));
        CHECK(cider(c) == doctest::Approx(oracles::cider(c)).epsilon(1e-9));
    }
}

TEST_CASE("all metrics are invariant under corpus reordering") {
    Rng rng(73);
    Corpus c = random_corpus(rng, 7);
    Corpus shuffled = c;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (int n = 1; n <= 4; ++n)
        CHECK(bleu_n(c, n).precision == doctest::Approx(bleu_n(shuffled, n).precision).epsilon(1e-12));
    CHECK(rouge_l(c) == doctest::Approx(rouge_l(shuffled)).epsilon(1e-12));
    CHECK(cider(c) == doctest::Approx(cider(shuffled)).epsilon(1e-12));
}

TEST_CASE("B-n is monotone nonincreasing when predictions reuse reference tokens") {
    Rng rng(79);
    for (int trial = 0; trial < 20; ++trial) {
        Corpus c;
        for (int i = 0; i < 5; ++i) {
            CorpusItem item;
            item.id = "m" + std::to_string(i);
            for (int j = 0; j < 8; ++j) item.reference.push_back(std::string(1, static_cast<char>('a' + rng() % 4)));
            item.prediction = item.reference;
            std::shuffle(item.prediction.begin(), item.prediction.end(), rng);
            c.push_back(item);
        }
        double prev = 1.0 + 1e-12;
        for (int n = 1; n <= 4; ++n) {
            const double p = bleu_n(c, n).precision;
            CHECK(p <= prev + 1e-12);
            prev = p;
        }
    }
}

TEST_CASE("corpus file round-trips") {
    Corpus c = {{"q1", toks("dress red"), toks("dress blue")}, {"q2", toks("shirt"), toks("shirt")}};
    const std::string path = (std::filesystem::temp_directory_path() / "dmch_corpus.tsv").string();
    save_corpus(path, c);
    Corpus back = load_corpus(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "q1");
    CHECK(back[0].prediction == c[0].prediction);
    CHECK(back[0].reference == c[0].reference);
    CHECK(back[1].prediction == c[1].prediction);
    std::filesystem::remove(path);
}

TEST_CASE("metric report mirrors the per-n column layout") {
    Corpus c = {{"a", toks("dress red v_neck long_sleeve"), toks("dress red v_neck long_sleeve")},
                {"b", toks("shirt blue"), toks("shirt teal")}};
    const std::string report = format_metric_report(c);
    CHECK(report.find("B-1") != std::string::npos);
    CHECK(report.find("B-4") != std::string::npos);
    CHECK(report.find("ROUGE-L") != std::string::npos);
    CHECK(report.find("CIDEr") != std::string::npos);
}

} // TEST_SUITE
