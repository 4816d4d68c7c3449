#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "sg/backends.hpp"
#include "sg/metrics.hpp"
#include "sg/rng.hpp"

using namespace sg;

namespace {

// Independent oracle: plain recursive definition with memoization, byte-free
// (it runs on code point vectors like the implementation's contract).
std::size_t lev_oracle(const std::vector<char32_t>& a, const std::vector<char32_t>& b) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
    std::function<std::size_t(std::size_t, std::size_t)> rec = [&](std::size_t i,
                                                                   std::size_t j) -> std::size_t {
        if (i == 0) return j;
        if (j == 0) return i;
        const auto key = std::make_pair(i, j);
        const auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        std::size_t best = std::min(rec(i - 1, j), rec(i, j - 1)) + 1;
        best = std::min(best, rec(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1));
        memo[key] = best;
        return best;
    };
    return rec(a.size(), b.size());
}

std::size_t lev_oracle(std::string_view a, std::string_view b) {
    return lev_oracle(utf8_codepoints(a), utf8_codepoints(b));
}

std::string random_word(Rng& rng, std::size_t max_len) {
    std::string s;
    const auto len = rng.below(max_len + 1);
    for (std::uint64_t i = 0; i < len; ++i) s.push_back(static_cast<char>('a' + rng.below(6)));
    return s;
}

// Embedder stub with hard-coded vectors per text.
class FixedEmbedder final : public SentenceEmbedder {
public:
    explicit FixedEmbedder(std::map<std::string, Vec> table) : table_(std::move(table)) {}
    Vec embed(std::string_view text) const override { return table_.at(std::string(text)); }

private:
    std::map<std::string, Vec> table_;
};

} // namespace

TEST_CASE("levenshtein basics") {
    CHECK(levenshtein("abc", "abc") == 0);
    CHECK(levenshtein("kitten", "sitting") == lev_oracle("kitten", "sitting"));
    CHECK(levenshtein("kitten", "sitting") == 3);
    CHECK(levenshtein("", "abc") == 3);
    CHECK(levenshtein("abc", "") == 3);
    // multi-byte substitution counts once
    CHECK(levenshtein("a?", "a？") == 1);
}

TEST_CASE("levenshtein properties against the oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::string a = random_word(rng, 8);
        const std::string b = random_word(rng, 8);
        const auto d = levenshtein(a, b);
        REQUIRE(d == lev_oracle(a, b));
        REQUIRE(d == levenshtein(b, a)); // symmetry
    }

    SECTION("triangle inequality on random triples") {
        for (int trial = 0; trial < 100; ++trial) {
            const std::string a = random_word(rng, 6);
            const std::string b = random_word(rng, 6);
            const std::string c = random_word(rng, 6);
            REQUIRE(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
        }
    }
}

TEST_CASE("character replacement ratio") {
    CHECK(char_replacement_ratio("abc", "abc") == 0.0);
    CHECK_THAT(char_replacement_ratio("abc", "abd"), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    CHECK_THAT(char_replacement_ratio("kitten", "sitting"), Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK_THROWS_AS(char_replacement_ratio("", "x"), EmptyOriginal);

    SECTION("identical suffixes leave non-interacting edits unchanged") {
        CHECK_THAT(char_replacement_ratio("abc tail", "abd tail") * 8.0,
                   Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("semantic preservation") {
    SECTION("self similarity is one") {
        const TinyTransformerBackend backend(0);
        const MeanTokenEmbedder embedder(backend);
        CHECK_THAT(semantic_preservation("hello world", "hello world", embedder),
                   Catch::Matchers::WithinAbs(1.0, 1e-9));
    }

    SECTION("orthogonal embeddings give zero") {
        const FixedEmbedder embedder({{"x", {1.0, 0.0}}, {"y", {0.0, 2.0}}});
        CHECK_THAT(semantic_preservation("x", "y", embedder),
                   Catch::Matchers::WithinAbs(0.0, 1e-12));
    }

    SECTION("zero vectors are an error") {
        const FixedEmbedder embedder({{"x", {0.0, 0.0}}, {"y", {1.0, 0.0}}});
        CHECK_THROWS_AS(semantic_preservation("x", "y", embedder), ZeroVectorEmbedding);
    }

    SECTION("empty texts are an error") {
        const FixedEmbedder embedder({});
        CHECK_THROWS_AS(semantic_preservation("", "y", embedder), EmptyText);
    }

    SECTION("reference embedder equals the hand-computed mean of normalized rows") {
        const TinyTransformerBackend backend(3);
        const MeanTokenEmbedder embedder(backend);
        const std::string text = "abc";
        const Vec got = embedder.embed(text);
        const Mat& table = backend.embedding_table();
        Vec expect(table.cols(), 0.0);
        for (const char c : text) {
            const auto row = table.row(static_cast<std::size_t>(static_cast<unsigned char>(c)));
            const double norm = l2_norm(row);
            for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += row[i] / norm;
        }
        for (auto& v : expect) v /= 3.0;
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(expect[i], 1e-12));
    }
}

TEST_CASE("psr identities") {
    SECTION("uniform logits give 1/V") {
        const LinearToyBackend backend(1, 16, 8, /*weight_scale=*/0.0);
        CHECK_THAT(psr({{1, 2}}, backend), Catch::Matchers::WithinAbs(1.0 / 16.0, 1e-12));
    }

    SECTION("psr = exp(-tpe_loss) on both toy backends") {
        const TinyTransformerBackend tiny(0);
        const LinearToyBackend lin(2, 16, 8);
        const TokenSequence text = tiny.encode("some text");
        CHECK_THAT(psr(text, tiny),
                   Catch::Matchers::WithinAbs(
                       std::exp(-tpe_loss(text, tiny, tiny.end_token_id())), 1e-9));
        CHECK_THAT(psr({{3, 4, 5}}, lin),
                   Catch::Matchers::WithinAbs(
                       std::exp(-tpe_loss({{3, 4, 5}}, lin, lin.end_token_id())), 1e-9));
    }

    SECTION("softmax over the vocabulary sums to one") {
        const TinyTransformerBackend tiny(0);
        const Vec p = softmax(tiny.next_token_logits(tiny.encode("abc")));
        double total = 0.0;
        for (double v : p) total += v;
        CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }

    SECTION("psr lies in (0, 1)") {
        const TinyTransformerBackend tiny(5);
        const double p = psr(tiny.encode("another string"), tiny);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("metric report bundles the three metrics") {
    const TinyTransformerBackend backend(0);
    const MeanTokenEmbedder embedder(backend);
    const MetricReport report = compute_metrics("hello there", "hallo there", backend, embedder);
    CHECK_THAT(report.gamma, Catch::Matchers::WithinAbs(1.0 / 11.0, 1e-12));
    CHECK(report.eta > 0.5);
    CHECK(report.eta <= 1.0);
    CHECK(report.psr > 0.0);
    CHECK(report.psr < 1.0);
    CHECK(report.original_length == 11);
    CHECK(report.backend_id == "tiny-transformer:0");
}
