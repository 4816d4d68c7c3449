#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "sg/backends.hpp"
#include "sg/stp.hpp"

using namespace sg;

namespace {

CandidateSets full_sets(const TokenSequence& seq, const Backend& backend, const Mat& h, int n,
                        int k) {
    return build_candidate_sets(seq, h, backend.embedding_table(), n, k);
}

std::size_t hamming(const TokenSequence& a, const TokenSequence& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
    return d;
}

// Exhaustive oracle: best loss over every single-token substitution of seq.
double best_single_swap_loss(const TokenSequence& seq, const Backend& backend, TokenId target) {
    double best = tpe_loss(seq, backend, target);
    bool first = true;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        for (TokenId candidate = 0; candidate < backend.vocab_size(); ++candidate) {
            TokenSequence variant = seq;
            variant[i] = candidate;
            const double loss = tpe_loss(variant, backend, target);
            if (first || loss < best) best = loss;
            first = false;
        }
    }
    return best;
}

} // namespace

TEST_CASE("config validation") {
    StpConfig config;
    CHECK_NOTHROW(config.validate());
    config.iterations = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.iterations = 1;
    config.final_set_size = 11;
    CHECK_THROWS_AS(config.validate(), ConfigError); // n >= k violated
}

TEST_CASE("batch partition follows the ceil rule") {
    const LinearToyBackend backend(2, 16, 8);
    const TokenSequence seq{{1, 2, 3, 4}};
    const auto lg = backend.loss_and_onehot_gradient(seq, backend.end_token_id());

    SECTION("B=8 over 4 positions splits into pairs") {
        const auto sets = full_sets(seq, backend, lg.h, 10, 3); // 12 pairs > 8, partition branch
        Rng rng(0);
        const Batch batch = build_batch(seq, sets, 8, rng);
        CHECK(batch.positions == std::vector<std::size_t>{0, 0, 1, 1, 2, 2, 3, 3});
    }

    SECTION("B=7 over 3 positions") {
        const TokenSequence short_seq{{1, 2, 3}};
        const auto lg3 = backend.loss_and_onehot_gradient(short_seq, backend.end_token_id());
        const auto sets = full_sets(short_seq, backend, lg3.h, 10, 3);
        Rng rng(0);
        const Batch batch = build_batch(short_seq, sets, 7, rng);
        CHECK(batch.positions == std::vector<std::size_t>{0, 0, 0, 1, 1, 1, 2});
    }

    SECTION("B <= positions draws distinct positions") {
        const auto sets = full_sets(seq, backend, lg.h, 10, 3);
        for (std::uint64_t s = 0; s < 20; ++s) {
            Rng rng(s);
            const Batch batch = build_batch(seq, sets, 2, rng);
            REQUIRE(batch.positions.size() == 2);
            REQUIRE(batch.positions[0] != batch.positions[1]);
        }
    }
}

TEST_CASE("every batch element is a single-position mutation") {
    const LinearToyBackend backend(4, 16, 8);
    for (const int batch_size : {7, 8, 64}) {
        for (const std::size_t len : {std::size_t{3}, std::size_t{4}, std::size_t{8}}) {
            TokenSequence seq;
            for (std::size_t i = 0; i < len; ++i) seq.ids.push_back(static_cast<TokenId>(i));
            const auto lg = backend.loss_and_onehot_gradient(seq, backend.end_token_id());
            const auto sets = full_sets(seq, backend, lg.h, 10, 5);
            Rng rng(1);
            const Batch batch = build_batch(seq, sets, batch_size, rng);
            REQUIRE(batch.size() == static_cast<std::size_t>(batch_size));
            for (std::size_t b = 0; b < batch.size(); ++b) {
                REQUIRE(hamming(batch.sequences[b], seq) <= 1);
                // the mutated slot holds a candidate from that position's S_i
                const auto& s_i = sets.final[batch.positions[b]];
                REQUIRE(std::find(s_i.begin(), s_i.end(), batch.new_ids[b]) != s_i.end());
            }
        }
    }
}

TEST_CASE("exhaustive batches enumerate all pairs before random fill") {
    const LinearToyBackend backend(5, 16, 8);
    const TokenSequence seq{{1, 2, 3}};
    const auto lg = backend.loss_and_onehot_gradient(seq, backend.end_token_id());
    const auto sets = full_sets(seq, backend, lg.h, 4, 2); // 6 pairs
    Rng rng(3);
    const Batch batch = build_batch(seq, sets, 10, rng);
    std::set<std::pair<std::size_t, TokenId>> seen;
    for (std::size_t b = 0; b < 6; ++b) seen.emplace(batch.positions[b], batch.new_ids[b]);
    CHECK(seen.size() == 6);
    for (std::size_t pos = 0; pos < 3; ++pos)
        for (TokenId candidate : sets.final[pos])
            CHECK(seen.count({pos, candidate}) == 1);
}

TEST_CASE("empty candidate set at a position is an error") {
    const TokenSequence seq{{1, 2}};
    CandidateSets sets;
    sets.semantic = {{1}, {}};
    sets.final = {{1}, {}};
    sets.positions = {0, 1};
    Rng rng(0);
    CHECK_THROWS_AS(build_batch(seq, sets, 4, rng), EmptyCandidateSet);
}

TEST_CASE("tpe_loss equals the backend loss and tracks the target's softmax") {
    const LinearToyBackend backend(6, 16, 8);
    const TokenSequence seq{{3, 1, 4}};
    const TokenId end = backend.end_token_id();
    const auto lg = backend.loss_and_onehot_gradient(seq, end);
    CHECK_THAT(tpe_loss(seq, backend, end), Catch::Matchers::WithinAbs(lg.loss, 1e-12));

    // raising the target logit strictly lowers the loss
    const Vec logits = backend.next_token_logits(seq);
    Vec boosted = logits;
    boosted[static_cast<std::size_t>(end)] += 1.0;
    const double before = log_sum_exp(logits) - logits[static_cast<std::size_t>(end)];
    const double after = log_sum_exp(boosted) - boosted[static_cast<std::size_t>(end)];
    CHECK(after < before);

    CHECK_THROWS_AS(tpe_loss(seq, backend, 16), InvalidTokenId);
}

TEST_CASE("stp_step equals the exhaustive single-swap oracle at full coverage") {
    for (std::uint64_t instance = 0; instance < 5; ++instance) {
        const LinearToyBackend backend(instance, 16, 8);
        Rng rng(instance * 7 + 1);
        TokenSequence seq;
        for (int i = 0; i < 4; ++i) seq.ids.push_back(static_cast<TokenId>(rng.below(16)));

        StpConfig config;
        config.iterations = 1;
        config.semantic_set_size = 16;
        config.final_set_size = 16;
        config.batch_size = 4 * 16;
        config.seed = instance;
        const StepResult step = stp_step(seq, config, backend);
        const double oracle = best_single_swap_loss(seq, backend, backend.end_token_id());
        REQUIRE_THAT(step.loss_after, Catch::Matchers::WithinAbs(oracle, 1e-9));
    }
}

TEST_CASE("identity candidate sets leave the sequence unchanged") {
    // n = k = 1: each N_i is the token itself (self-similarity is maximal on
    // the linear backend's orthogonal embeddings), so S_i = {P_i}.
    const LinearToyBackend backend(9, 16, 8);
    const TokenSequence seq{{2, 5, 7}};
    StpConfig config;
    config.iterations = 1;
    config.semantic_set_size = 1;
    config.final_set_size = 1;
    config.batch_size = 8;
    const StepResult step = stp_step(seq, config, backend);
    CHECK(step.next == seq);
    CHECK_THAT(step.loss_after,
               Catch::Matchers::WithinAbs(tpe_loss(seq, backend, backend.end_token_id()), 1e-12));
    CHECK_FALSE(step.changed);
}

TEST_CASE("stp_step is deterministic for a fixed seed") {
    const LinearToyBackend backend(10, 16, 8);
    const TokenSequence seq{{1, 2, 3, 4, 5}};
    StpConfig config;
    config.iterations = 1;
    config.batch_size = 3;
    config.semantic_set_size = 8;
    config.final_set_size = 4;
    config.seed = 77;
    const StepResult a = stp_step(seq, config, backend);
    const StepResult b = stp_step(seq, config, backend);
    CHECK(a.next == b.next);
    CHECK(a.loss_after == b.loss_after);
}

TEST_CASE("stp_protect records a faithful trajectory") {
    const LinearToyBackend backend(11, 16, 8);
    const TokenSequence seq{{1, 2, 3, 4}};
    StpConfig config;
    config.iterations = 6;
    config.batch_size = 16;
    config.semantic_set_size = 8;
    config.final_set_size = 4;
    config.seed = 5;

    const ProtectionResult result = stp_protect(seq, config, backend);
    const TokenId end = backend.end_token_id();

    REQUIRE(result.loss_trace.size() == 7);
    REQUIRE(result.psr_trace.size() == 7);
    CHECK_THAT(result.loss_trace[0],
               Catch::Matchers::WithinAbs(tpe_loss(seq, backend, end), 1e-12));

    SECTION("replay of the replacement log reproduces every trace entry") {
        TokenSequence current = seq;
        std::size_t next_replacement = 0;
        for (int t = 1; t <= config.iterations; ++t) {
            while (next_replacement < result.replacements.size() &&
                   result.replacements[next_replacement].iteration == t) {
                const auto& r = result.replacements[next_replacement];
                REQUIRE(current[r.position] == r.old_id);
                current[r.position] = r.new_id;
                ++next_replacement;
            }
            REQUIRE_THAT(result.loss_trace[static_cast<std::size_t>(t)],
                         Catch::Matchers::WithinAbs(tpe_loss(current, backend, end), 1e-9));
            REQUIRE_THAT(result.psr_trace[static_cast<std::size_t>(t)],
                         Catch::Matchers::WithinAbs(
                             std::exp(-result.loss_trace[static_cast<std::size_t>(t)]), 1e-12));
        }
        CHECK(current == result.final_sequence);
    }

    SECTION("best tracking") {
        CHECK(result.best_loss <= result.final_loss);
        CHECK_THAT(result.best_loss,
                   Catch::Matchers::WithinAbs(tpe_loss(result.best_sequence, backend, end), 1e-9));
        CHECK(result.best_loss ==
              *std::min_element(result.loss_trace.begin(), result.loss_trace.end()));
    }

    SECTION("seeded determinism end to end") {
        const ProtectionResult again = stp_protect(seq, config, backend);
        CHECK(again.final_sequence == result.final_sequence);
        CHECK(again.loss_trace == result.loss_trace);
        CHECK(again.replacements.size() == result.replacements.size());
    }

    SECTION("T = 1 equals a single step") {
        StpConfig one = config;
        one.iterations = 1;
        const ProtectionResult pr = stp_protect(seq, one, backend);
        const StepResult step = stp_step(seq, one, backend);
        CHECK(pr.final_sequence == step.next);
        CHECK_THAT(pr.final_loss, Catch::Matchers::WithinAbs(step.loss_after, 1e-12));
    }

    SECTION("T = 0 is rejected") {
        StpConfig zero = config;
        zero.iterations = 0;
        CHECK_THROWS_AS(stp_protect(seq, zero, backend), ConfigError);
    }
}

TEST_CASE("default config mirrors the published hyperparameters") {
    const StpConfig config;
    CHECK(config.iterations == 15);
    CHECK(config.batch_size == 1024);
    CHECK(config.semantic_set_size == 10);
    CHECK(config.final_set_size == 5);
    CHECK(config.track_best);
}

TEST_CASE("contextual loss degenerates to the plain loss") {
    const LinearToyBackend backend(13, 16, 8);
    const TokenSequence seq{{1, 2, 3}};
    const TokenId end = backend.end_token_id();

    SECTION("single empty prefix with weight one") {
        AffixSpec affixes;
        affixes.prefixes = {{}};
        affixes.weights = {1.0};
        const auto ctx = contextual_loss_and_gradient(seq, affixes, backend, end);
        const auto plain = backend.loss_and_onehot_gradient(seq, end);
        REQUIRE_THAT(ctx.loss, Catch::Matchers::WithinAbs(plain.loss, 1e-9));
        for (std::size_t i = 0; i < seq.size(); ++i)
            for (std::size_t j = 0; j < 16; ++j)
                REQUIRE_THAT(ctx.h(i, j), Catch::Matchers::WithinAbs(plain.h(i, j), 1e-9));
    }

    SECTION("two identical contexts at half weight equal one") {
        AffixSpec two;
        two.prefixes = {{4, 5}, {4, 5}};
        two.weights = {0.5, 0.5};
        AffixSpec one;
        one.prefixes = {{4, 5}};
        one.weights = {1.0};
        const auto a = contextual_loss_and_gradient(seq, two, backend, end);
        const auto b = contextual_loss_and_gradient(seq, one, backend, end);
        REQUIRE_THAT(a.loss, Catch::Matchers::WithinAbs(b.loss, 1e-9));
        for (std::size_t i = 0; i < seq.size(); ++i)
            for (std::size_t j = 0; j < 16; ++j)
                REQUIRE_THAT(a.h(i, j), Catch::Matchers::WithinAbs(b.h(i, j), 1e-9));
    }

    SECTION("five prefixes averaged match the hand-built mean") {
        AffixSpec five;
        Rng rng(21);
        for (int p = 0; p < 5; ++p) {
            std::vector<TokenId> prefix;
            for (int i = 0; i < 2 + p % 2; ++i)
                prefix.push_back(static_cast<TokenId>(rng.below(14)));
            five.prefixes.push_back(prefix);
        }
        five.weights.assign(5, 1.0 / 5.0);
        const auto combined = contextual_loss_and_gradient(seq, five, backend, end);
        double expect = 0.0;
        for (const auto& prefix : five.prefixes) {
            TokenSequence context;
            context.ids = prefix;
            context.ids.insert(context.ids.end(), seq.ids.begin(), seq.ids.end());
            expect += tpe_loss(context, backend, end);
        }
        expect /= 5.0;
        REQUIRE_THAT(combined.loss, Catch::Matchers::WithinAbs(expect, 1e-9));
    }

    SECTION("suffix context rows align with the sequence positions") {
        AffixSpec affixes;
        affixes.suffixes = {{7, 8}};
        affixes.weights = {1.0};
        const auto ctx = contextual_loss_and_gradient(seq, affixes, backend, end);
        TokenSequence whole = seq;
        whole.ids.insert(whole.ids.end(), {7, 8});
        const auto full = backend.loss_and_onehot_gradient(whole, end);
        for (std::size_t i = 0; i < seq.size(); ++i)
            for (std::size_t j = 0; j < 16; ++j)
                REQUIRE_THAT(ctx.h(i, j), Catch::Matchers::WithinAbs(full.h(i, j), 1e-12));
    }

    SECTION("vocabulary mismatch is rejected") {
        AffixSpec bad;
        bad.prefixes = {{99}};
        bad.weights = {1.0};
        CHECK_THROWS_AS(contextual_loss_and_gradient(seq, bad, backend, end),
                        VocabularyMismatch);
    }

    SECTION("span restricts gradient rows and optimization") {
        AffixSpec affixes;
        affixes.prefixes = {{4}};
        affixes.weights = {1.0};
        const auto ctx =
            contextual_loss_and_gradient(seq, affixes, backend, end, {{1, 3}});
        for (std::size_t j = 0; j < 16; ++j) REQUIRE(ctx.h(0, j) == 0.0);

        StpConfig config;
        config.iterations = 4;
        config.batch_size = 8;
        config.semantic_set_size = 16;
        config.final_set_size = 8;
        config.protected_span = {{1, 3}};
        const ContextualObjective objective(backend, affixes, end, config.protected_span);
        const EmbeddingNeighborProvider provider(backend.embedding_table(), 16);
        const ProtectionResult result = stp_protect(seq, config, objective, provider);
        CHECK(result.final_sequence[0] == seq[0]);
    }
}

TEST_CASE("aggregated loss is the weighted mean of the parts") {
    const LinearToyBackend a(1, 16, 8), b(2, 16, 8);
    const TokenSequence seq{{1, 2, 3}};
    const TokenId end = a.end_token_id();

    SECTION("one backend at weight one is the plain loss") {
        const auto agg = aggregated_loss_and_gradient(seq, {&a}, {1.0}, {end});
        const auto plain = a.loss_and_onehot_gradient(seq, end);
        CHECK_THAT(agg.loss, Catch::Matchers::WithinAbs(plain.loss, 1e-12));
        CHECK(agg.h == plain.h);
    }

    SECTION("the same backend twice at half weight is unchanged") {
        const auto agg = aggregated_loss_and_gradient(seq, {&a, &a}, {0.5, 0.5}, {end, end});
        const auto plain = a.loss_and_onehot_gradient(seq, end);
        REQUIRE_THAT(agg.loss, Catch::Matchers::WithinAbs(plain.loss, 1e-9));
        for (std::size_t i = 0; i < seq.size(); ++i)
            for (std::size_t j = 0; j < 16; ++j)
                REQUIRE_THAT(agg.h(i, j), Catch::Matchers::WithinAbs(plain.h(i, j), 1e-9));
    }

    SECTION("two backends combine linearly") {
        const auto agg = aggregated_loss_and_gradient(seq, {&a, &b}, {0.25, 0.75}, {end, end});
        const auto la = a.loss_and_onehot_gradient(seq, end);
        const auto lb = b.loss_and_onehot_gradient(seq, end);
        REQUIRE_THAT(agg.loss,
                     Catch::Matchers::WithinAbs(0.25 * la.loss + 0.75 * lb.loss, 1e-9));
        for (std::size_t i = 0; i < seq.size(); ++i)
            for (std::size_t j = 0; j < 16; ++j)
                REQUIRE_THAT(agg.h(i, j), Catch::Matchers::WithinAbs(
                                              0.25 * la.h(i, j) + 0.75 * lb.h(i, j), 1e-9));
    }

    SECTION("weights must sum to one") {
        CHECK_THROWS_AS(aggregated_loss_and_gradient(seq, {&a, &b}, {0.5, 0.6}, {end, end}),
                        ConfigError);
    }

    SECTION("mismatched vocabularies are rejected") {
        const LinearToyBackend big(3, 258);
        CHECK_THROWS_AS(aggregated_loss_and_gradient(seq, {&a, &big}, {0.5, 0.5}, {end, end}),
                        VocabularyMismatch);
    }
}

TEST_CASE("sensitive token targets bracket the end token's rank") {
    const TinyTransformerBackend backend(0);
    const TokenSequence seq = backend.encode("hello world");

    SECTION("before = after = 0 returns the end token and its PSR") {
        const auto targets = sensitive_token_targets(seq, backend, 0, 0);
        REQUIRE(targets.size() == 1);
        CHECK(targets[0].token_id == backend.end_token_id());
        const Vec probs = softmax(backend.next_token_logits(seq));
        CHECK_THAT(targets[0].score,
                   Catch::Matchers::WithinAbs(
                       probs[static_cast<std::size_t>(backend.end_token_id())], 1e-12));
    }

    SECTION("a 3/3 bracket is at most 7 contiguous ranks") {
        const auto targets = sensitive_token_targets(seq, backend, 3, 3);
        REQUIRE(targets.size() <= 7);
        REQUIRE(!targets.empty());
        for (std::size_t i = 1; i < targets.size(); ++i)
            REQUIRE(targets[i].rank == targets[i - 1].rank + 1);
        const bool has_end = std::any_of(targets.begin(), targets.end(), [&](const auto& t) {
            return t.token_id == backend.end_token_id();
        });
        CHECK(has_end);

        // scores check out against an independent softmax
        const Vec probs = softmax(backend.next_token_logits(seq));
        for (const auto& t : targets)
            REQUIRE_THAT(t.score, Catch::Matchers::WithinAbs(
                                      probs[static_cast<std::size_t>(t.token_id)], 1e-12));
    }
}
