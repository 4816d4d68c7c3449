#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "sg/linalg.hpp"
#include "sg/rng.hpp"
#include "sg/utf8.hpp"

using namespace sg;

TEST_CASE("rng is deterministic per seed") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        all_equal = all_equal && (va == b.next_u64());
        any_diff = any_diff || (va != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("rng bounded draws stay in range and hit every value") {
    Rng rng(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 300; ++i) {
        const auto v = rng.below(5);
        REQUIRE(v < 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
    CHECK(Rng(1).below(1) == 0);
}

TEST_CASE("rng real01 and normal are sane") {
    Rng rng(3);
    double sum = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.real01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += rng.normal();
    }
    CHECK(std::abs(sum / 1000.0) < 0.2);
}

TEST_CASE("derived stream seeds differ per stream") {
    CHECK(Rng::derive(5, 0) != Rng::derive(5, 1));
    CHECK(Rng::derive(5, 0) == Rng::derive(5, 0));
}

TEST_CASE("softmax sums to one and matches log_sum_exp") {
    Vec logits = {1.0, -2.0, 0.5, 3.25};
    const Vec p = softmax(logits);
    double total = 0.0;
    for (double v : p) total += v;
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(std::log(p[3]), Catch::Matchers::WithinAbs(logits[3] - log_sum_exp(logits), 1e-12));
}

TEST_CASE("matmul small example") {
    Mat a(2, 3), b(3, 2);
    double k = 1.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) a(i, j) = k++;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) b(i, j) = k++;
    const Mat c = matmul(a, b);
    // [[1,2,3],[4,5,6]] * [[7,8],[9,10],[11,12]]
    CHECK(c(0, 0) == 58.0);
    CHECK(c(0, 1) == 64.0);
    CHECK(c(1, 0) == 139.0);
    CHECK(c(1, 1) == 154.0);

    // matmul_bt(a, m) == a * m^T
    Mat m(2, 3);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) m(i, j) = static_cast<double>(i + 2 * j);
    const Mat d = matmul_bt(a, m);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double expect = 0.0;
            for (std::size_t p = 0; p < 3; ++p) expect += a(i, p) * m(j, p);
            CHECK(d(i, j) == expect);
        }
}

TEST_CASE("utf8 code point counting") {
    CHECK(codepoint_length("abc") == 3);
    CHECK(codepoint_length("") == 0);
    // '？' (U+FF1F) is three bytes but one code point
    CHECK(codepoint_length("a？") == 2);
    // lone continuation byte counts as one code point
    CHECK(codepoint_length("\x80") == 1);
    // overlong and surrogate encodings fall back to per-byte code points,
    // so distinct byte strings keep distinct decodings
    CHECK(codepoint_length("\xC0\x80") == 2);
    CHECK(utf8_codepoints("\xC0\x80") != utf8_codepoints(std::string(1, '\0')));
    CHECK(codepoint_length("\xED\xA0\x80") == 3); // U+D800 surrogate rejected
}
